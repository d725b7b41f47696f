//! File formats: versioned JSON documents, the device stream CSV, labelled
//! point CSVs and BVH.
//!
//! Every JSON document carries `"v": 1`; readers reject other versions.

mod bvh;
mod json;
mod points;
mod stream;

use thiserror::Error;

pub use bvh::{
    bvh_world_positions, euler_zxy_degrees, export_bvh, parse_bvh, write_bvh, BvhChannel, BvhDocument, BvhExport,
    BvhJoint, PITCH_LIMIT_DEG,
};
pub use json::{from_json, to_json, ArmatureDoc, BoneDoc, Document, SimilarityDoc, FORMAT_VERSION};
pub use points::{
    read_correspondence_csv, read_point_csv, read_probe_csv, write_replay_csv, POINT_HEADER, PROBE_LABELS, REPLAY_HEADER,
};
pub use stream::{read_stream_csv, samples_by_device, write_stream_csv, StreamSample, STREAM_HEADER};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("line {line}: {message}")]
    ParseError { line: u64, message: String },
    #[error("device `{device}` goes back in time at line {line}")]
    NonMonotonicTime { device: String, line: u64 },
    #[error("BVH token {token} (line {line}): {message}")]
    BvhParse { token: usize, line: usize, message: String },
    #[error("cannot export an empty timeline")]
    EmptyTimeline,
    #[error("unsupported document version {0}")]
    UnsupportedVersion(u64),
    #[error("invalid document: {0}")]
    Invalid(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
