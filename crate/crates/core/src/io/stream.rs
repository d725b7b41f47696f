use std::collections::BTreeMap;

use super::IoError;
use crate::geom::{Pose, Quat, Vec3};
use crate::rig::DeviceId;

pub const STREAM_HEADER: [&str; 9] = ["t", "device", "px", "py", "pz", "qw", "qx", "qy", "qz"];

/// One tracked-device reading.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSample {
    pub t: f64,
    pub device: DeviceId,
    pub pos: Vec3,
    pub quat: Quat,
}

impl StreamSample {
    pub fn pose(&self) -> Pose {
        Pose::new(self.pos, self.quat)
    }
}

fn parse_err(line: u64, message: impl Into<String>) -> IoError {
    IoError::ParseError {
        line,
        message: message.into(),
    }
}

/// Parses `t,device,px,py,pz,qw,qx,qy,qz` rows. Times must not decrease per
/// device; quaternions are renormalized.
pub fn read_stream_csv(text: &str) -> Result<Vec<StreamSample>, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    let mut last: BTreeMap<String, f64> = BTreeMap::new();
    let mut saw_header = false;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if !saw_header {
            if record.iter().ne(STREAM_HEADER.iter().copied()) {
                return Err(parse_err(line, format!("expected header `{}`", STREAM_HEADER.join(","))));
            }
            saw_header = true;
            continue;
        }
        if record.len() != STREAM_HEADER.len() {
            return Err(parse_err(line, format!("expected 9 fields, found {}", record.len())));
        }
        let num = |i: usize| -> Result<f64, IoError> {
            let v: f64 = record[i]
                .parse()
                .map_err(|_| parse_err(line, format!("`{}` is not a number ({})", &record[i], STREAM_HEADER[i])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse_err(line, format!("non-finite {}", STREAM_HEADER[i])))
            }
        };
        let t = num(0)?;
        let device = record[1].to_string();
        if device.is_empty() {
            return Err(parse_err(line, "empty device id"));
        }
        let pos = Vec3::new(num(2)?, num(3)?, num(4)?);
        let raw = Quat::new(num(5)?, num(6)?, num(7)?, num(8)?);
        let n = raw.norm();
        if n < 1e-6 {
            return Err(parse_err(line, "zero quaternion"));
        }
        // leave exact unit quaternions bit-identical
        let quat = if (n - 1.0).abs() > 4.0 * f64::EPSILON { raw.normalize() } else { raw };
        if let Some(&prev) = last.get(&device) {
            if t < prev {
                return Err(IoError::NonMonotonicTime { device, line });
            }
        }
        last.insert(device.clone(), t);
        out.push(StreamSample {
            t,
            device: DeviceId(device),
            pos,
            quat,
        });
    }
    Ok(out)
}

/// Writes samples with shortest round-trip float formatting.
pub fn write_stream_csv(samples: &[StreamSample]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(STREAM_HEADER).expect("in-memory write");
    for s in samples {
        let row = [
            s.t.to_string(),
            s.device.0.clone(),
            s.pos.x.to_string(),
            s.pos.y.to_string(),
            s.pos.z.to_string(),
            s.quat.w.to_string(),
            s.quat.x.to_string(),
            s.quat.y.to_string(),
            s.quat.z.to_string(),
        ];
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

/// Splits a stream into per-device sequences, keeping order.
pub fn samples_by_device(samples: &[StreamSample]) -> BTreeMap<DeviceId, Vec<StreamSample>> {
    let mut map: BTreeMap<DeviceId, Vec<StreamSample>> = BTreeMap::new();
    for s in samples {
        map.entry(s.device.clone()).or_default().push(s.clone());
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "t,device,px,py,pz,qw,qx,qy,qz\n";

    #[test]
    fn header_only_is_empty() {
        assert!(read_stream_csv(HEADER).unwrap().is_empty());
        assert!(read_stream_csv("").unwrap().is_empty());
    }

    #[test]
    fn single_identity_row() {
        let s = read_stream_csv(&format!("{HEADER}0,ctrl1,0.1,1.2,-0.3,1,0,0,0\n")).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].quat, Quat::IDENTITY);
        assert_eq!(s[0].pos, Vec3::new(0.1, 1.2, -0.3));
        assert_eq!(s[0].device.as_str(), "ctrl1");
    }

    #[test]
    fn out_of_order_reports_line() {
        let text = format!("{HEADER}0,a,0,0,0,1,0,0,0\n0.1,b,0,0,0,1,0,0,0\n0.2,a,0,0,0,1,0,0,0\n0.1,a,0,0,0,1,0,0,0\n");
        match read_stream_csv(&text) {
            Err(IoError::NonMonotonicTime { device, line }) => {
                assert_eq!(device, "a");
                assert_eq!(line, 5);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_rows_report_line() {
        let text = format!("{HEADER}0,a,0,0,0,1,0,0,0\n0.1,a,zero,0,0,1,0,0,0\n");
        assert!(matches!(read_stream_csv(&text), Err(IoError::ParseError { line: 3, .. })));
        assert!(matches!(read_stream_csv("time,dev\n"), Err(IoError::ParseError { line: 1, .. })));
        let short = format!("{HEADER}0,a,0,0\n");
        assert!(matches!(read_stream_csv(&short), Err(IoError::ParseError { line: 2, .. })));
    }

    #[test]
    fn quaternions_are_renormalized() {
        let s = read_stream_csv(&format!("{HEADER}0,a,0,0,0,2,0,0,0\n")).unwrap();
        assert_eq!(s[0].quat, Quat::IDENTITY);
    }

    #[test]
    fn write_read_round_trip_is_exact() {
        let samples: Vec<StreamSample> = (0..50)
            .map(|i| {
                let f = i as f64;
                StreamSample {
                    t: f / 90.0,
                    device: DeviceId::from(if i % 2 == 0 { "left" } else { "right,2" }),
                    pos: Vec3::new((f * 0.37).sin(), 1.0 + f * 1e-3, -(f * 0.11).cos()),
                    quat: Quat::from_axis_angle(Vec3::new(1.0, f, 0.5), f * 0.1),
                }
            })
            .collect();
        let text = write_stream_csv(&samples);
        let back = read_stream_csv(&text).unwrap();
        assert_eq!(back.len(), samples.len());
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!(a.t, b.t);
            assert_eq!(a.device, b.device);
            assert_eq!(a.pos, b.pos);
            assert!((a.quat.dot(b.quat) - 1.0).abs() < 1e-15);
        }
        assert_eq!(write_stream_csv(&back), text);
    }
}
