//! Kernels for sketching motion with tracked devices: coordinate calibration,
//! trajectory capture and editing, rigs with IK, virtual material jigs,
//! layered takes and file import/export.

pub mod calibration;
pub mod geom;
pub mod io;
pub mod jig;
pub mod rig;
pub mod takes;
pub mod trajectory;

pub use geom::{Mat3, Pose, Quat, SimilarityTransform, Vec3};
