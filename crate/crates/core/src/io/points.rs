//! Labelled point files: `label,x,y,z` rows, an optional header, used for
//! calibration probes and correspondence sets. Also the replay CSV.

use std::collections::BTreeMap;

use super::IoError;
use crate::calibration::{CalibrationProbe, CorrespondenceSet};
use crate::geom::Vec3;
use crate::trajectory::TrajectoryId;

pub const POINT_HEADER: [&str; 4] = ["label", "x", "y", "z"];
pub const REPLAY_HEADER: [&str; 5] = ["t", "id", "x", "y", "z"];
/// Probe labels, in reading order: origin corner, then the +x, +y, +z
/// corners of the calibration cube.
pub const PROBE_LABELS: [&str; 4] = ["x0", "a1", "a2", "a3"];

fn parse_err(line: u64, message: impl Into<String>) -> IoError {
    IoError::ParseError {
        line,
        message: message.into(),
    }
}

/// Reads `label,x,y,z` rows in file order. Labels must be unique.
pub fn read_point_csv(text: &str) -> Result<Vec<(String, Vec3)>, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut out: Vec<(String, Vec3)> = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if k == 0 && record.iter().eq(POINT_HEADER.iter().copied()) {
            continue;
        }
        if record.len() != 4 {
            return Err(parse_err(line, format!("expected `label,x,y,z`, found {} fields", record.len())));
        }
        let num = |i: usize| -> Result<f64, IoError> {
            match record[i].parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(parse_err(line, format!("`{}` is not a finite number", &record[i]))),
            }
        };
        let label = record[0].to_string();
        if label.is_empty() {
            return Err(parse_err(line, "empty label"));
        }
        if out.iter().any(|(l, _)| *l == label) {
            return Err(parse_err(line, format!("duplicate label `{label}`")));
        }
        out.push((label, Vec3::new(num(1)?, num(2)?, num(3)?)));
    }
    Ok(out)
}

/// A four-point probe file: exactly the labels `x0, a1, a2, a3`, any order.
pub fn read_probe_csv(text: &str, t: f64) -> Result<CalibrationProbe, IoError> {
    let points: BTreeMap<String, Vec3> = read_point_csv(text)?.into_iter().collect();
    if points.len() != 4 {
        return Err(IoError::Invalid(format!(
            "a probe needs exactly the points {}, found {}",
            PROBE_LABELS.join(", "),
            points.len()
        )));
    }
    let mut readings = [Vec3::ZERO; 4];
    for (slot, label) in readings.iter_mut().zip(PROBE_LABELS) {
        *slot = *points
            .get(label)
            .ok_or_else(|| IoError::Invalid(format!("probe point `{label}` is missing")))?;
    }
    Ok(CalibrationProbe::new(readings, t))
}

/// Pairs two point files by label, in the order of `from`. Labels present
/// in only one file are an error.
pub fn read_correspondence_csv(from: &str, to: &str) -> Result<CorrespondenceSet, IoError> {
    let src = read_point_csv(from)?;
    let dst: BTreeMap<String, Vec3> = read_point_csv(to)?.into_iter().collect();
    if src.len() != dst.len() {
        return Err(IoError::Invalid(format!(
            "point files differ in size ({} vs {})",
            src.len(),
            dst.len()
        )));
    }
    let pairs = src
        .into_iter()
        .map(|(label, p)| match dst.get(&label) {
            Some(q) => Ok((p, *q)),
            None => Err(IoError::Invalid(format!("label `{label}` has no counterpart"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    CorrespondenceSet::new(pairs).map_err(|e| IoError::Invalid(e.to_string()))
}

/// `t,id,x,y,z` with shortest round-trip floats.
pub fn write_replay_csv(id: TrajectoryId, rows: &[(f64, Vec3)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPLAY_HEADER).expect("in-memory write");
    for (t, p) in rows {
        w.write_record([t.to_string(), id.0.to_string(), p.x.to_string(), p.y.to_string(), p.z.to_string()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}
