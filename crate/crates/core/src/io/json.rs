use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::IoError;
use crate::calibration::CoordinateMap;
use crate::geom::{Mat3, Pose, SimilarityTransform, Vec3};
use crate::jig::JigConfig;
use crate::rig::{Armature, Bone, Constraint};
use crate::takes::{Take, Timeline};
use crate::trajectory::{Trajectory, TrajectoryId, Waypoint};

pub const FORMAT_VERSION: u64 = 1;

/// A type with a JSON file representation (without the version field).
pub trait Document: Sized {
    fn to_value(&self) -> Result<Value, IoError>;
    fn from_value(value: Value) -> Result<Self, IoError>;
}

/// Pretty-printed JSON with `"v": 1`, newline-terminated. Object keys are
/// sorted, so output is byte-stable.
pub fn to_json<D: Document>(doc: &D) -> Result<String, IoError> {
    let mut value = doc.to_value()?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| IoError::Invalid("document must be a JSON object".into()))?;
    obj.insert("v".into(), Value::from(FORMAT_VERSION));
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    Ok(text)
}

pub fn from_json<D: Document>(text: &str) -> Result<D, IoError> {
    let mut value: Value = serde_json::from_str(text)?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| IoError::Invalid("document must be a JSON object".into()))?;
    match obj.remove("v") {
        Some(v) if v.as_u64() == Some(FORMAT_VERSION) => {}
        Some(v) => return Err(IoError::UnsupportedVersion(v.as_u64().unwrap_or(0))),
        None => return Err(IoError::Invalid("missing version field `v`".into())),
    }
    D::from_value(value)
}

fn invalid(e: impl std::fmt::Display) -> IoError {
    IoError::Invalid(e.to_string())
}

#[derive(Serialize, Deserialize)]
struct TrajectoryDoc {
    id: TrajectoryId,
    sample_period: f64,
    waypoints: Vec<Waypoint>,
}

impl Document for Trajectory {
    fn to_value(&self) -> Result<Value, IoError> {
        Ok(serde_json::to_value(TrajectoryDoc {
            id: self.id(),
            sample_period: self.sample_period(),
            waypoints: self.waypoints().to_vec(),
        })?)
    }

    fn from_value(value: Value) -> Result<Self, IoError> {
        let d: TrajectoryDoc = serde_json::from_value(value)?;
        Trajectory::new(d.id, d.sample_period, d.waypoints).map_err(invalid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoneDoc {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub rest: Pose,
    pub length: f64,
}

/// Armature file layout: parents are referenced by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmatureDoc {
    pub bones: Vec<BoneDoc>,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
}

impl ArmatureDoc {
    pub fn from_armature(arm: &Armature) -> Self {
        Self {
            bones: arm
                .bones()
                .iter()
                .map(|b| BoneDoc {
                    name: b.name.clone(),
                    parent: b.parent.map(|p| arm.bone(p).name.clone()),
                    rest: b.rest_local,
                    length: b.length,
                })
                .collect(),
            constraints: arm.constraints().to_vec(),
        }
    }

    pub fn into_armature(self) -> Result<Armature, IoError> {
        let mut index = BTreeMap::new();
        let mut bones = Vec::with_capacity(self.bones.len());
        for (i, b) in self.bones.into_iter().enumerate() {
            let parent = match &b.parent {
                Some(p) => Some(
                    *index
                        .get(p.as_str())
                        .ok_or_else(|| IoError::Invalid(format!("bone `{}` names parent `{p}` before it is defined", b.name)))?,
                ),
                None => None,
            };
            index.insert(b.name.clone(), i);
            bones.push(Bone::new(b.name, parent, b.rest, b.length));
        }
        Armature::new(bones, self.constraints).map_err(invalid)
    }
}

impl Document for Armature {
    fn to_value(&self) -> Result<Value, IoError> {
        Ok(serde_json::to_value(ArmatureDoc::from_armature(self))?)
    }

    fn from_value(value: Value) -> Result<Self, IoError> {
        serde_json::from_value::<ArmatureDoc>(value)?.into_armature()
    }
}

/// `{k, A: [9 row-major], b: [3]}`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityDoc {
    pub k: f64,
    #[serde(rename = "A")]
    pub a: [f64; 9],
    pub b: [f64; 3],
}

impl Document for SimilarityTransform {
    fn to_value(&self) -> Result<Value, IoError> {
        Ok(serde_json::to_value(SimilarityDoc {
            k: self.scale(),
            a: self.rotation().to_row_slice(),
            b: self.translation().to_array(),
        })?)
    }

    fn from_value(value: Value) -> Result<Self, IoError> {
        let d: SimilarityDoc = serde_json::from_value(value)?;
        SimilarityTransform::new(d.k, Mat3::from_row_slice(&d.a), Vec3::from_array(d.b)).map_err(invalid)
    }
}

impl Document for CoordinateMap {
    fn to_value(&self) -> Result<Value, IoError> {
        Ok(serde_json::to_value(self)?)
    }

    fn from_value(value: Value) -> Result<Self, IoError> {
        let m: CoordinateMap = serde_json::from_value(value)?;
        CoordinateMap::new(m.x0, m.a1, m.a2, m.a3, m.t).map_err(invalid)
    }
}

impl Document for Take {
    fn to_value(&self) -> Result<Value, IoError> {
        Ok(serde_json::to_value(self)?)
    }

    fn from_value(value: Value) -> Result<Self, IoError> {
        let take: Take = serde_json::from_value(value)?;
        take.validate().map_err(invalid)?;
        Ok(take)
    }
}

impl Document for Timeline {
    fn to_value(&self) -> Result<Value, IoError> {
        Ok(serde_json::to_value(self)?)
    }

    fn from_value(value: Value) -> Result<Self, IoError> {
        let tl: Timeline = serde_json::from_value(value)?;
        for e in &tl.entries {
            e.take.validate().map_err(invalid)?;
            if !(e.offset.is_finite() && e.offset >= 0.0) {
                return Err(IoError::Invalid(format!("negative take offset {}", e.offset)));
            }
        }
        Ok(tl)
    }
}

impl Document for JigConfig {
    fn to_value(&self) -> Result<Value, IoError> {
        Ok(serde_json::to_value(self)?)
    }

    fn from_value(value: Value) -> Result<Self, IoError> {
        let cfg: JigConfig = serde_json::from_value(value)?;
        cfg.validate().map_err(invalid)?;
        Ok(cfg)
    }
}

/// Named jig presets: `{"v": 1, "jigs": {name: config}}`.
impl Document for BTreeMap<String, JigConfig> {
    fn to_value(&self) -> Result<Value, IoError> {
        Ok(serde_json::json!({ "jigs": self }))
    }

    fn from_value(mut value: Value) -> Result<Self, IoError> {
        let jigs = value
            .get_mut("jigs")
            .map(Value::take)
            .ok_or_else(|| IoError::Invalid("missing `jigs`".into()))?;
        let map: BTreeMap<String, JigConfig> = serde_json::from_value(jigs)?;
        for (name, cfg) in &map {
            cfg.validate().map_err(|e| IoError::Invalid(format!("jig `{name}`: {e}")))?;
        }
        Ok(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Quat;
    use crate::rig::presets;

    #[test]
    fn armature_round_trip_for_every_preset() {
        for name in presets::NAMES {
            let arm = presets::by_name(name).unwrap();
            let text = to_json(&arm).unwrap();
            assert!(text.contains("\"v\": 1"));
            let back: Armature = from_json(&text).unwrap();
            assert_eq!(back, arm, "{name}");
            assert_eq!(to_json(&back).unwrap(), text);
        }
    }

    #[test]
    fn shipped_preset_files_match_builders() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("presets");
        for name in presets::NAMES {
            let text = std::fs::read_to_string(dir.join(format!("{name}.json"))).unwrap();
            let arm: Armature = from_json(&text).unwrap();
            assert_eq!(arm, presets::by_name(name).unwrap(), "{name}");
        }
        let text = std::fs::read_to_string(dir.join("jigs.json")).unwrap();
        let jigs: BTreeMap<String, JigConfig> = from_json(&text).unwrap();
        assert_eq!(jigs, crate::jig::preset_library());
    }

    #[test]
    fn trajectory_shape() {
        let traj = Trajectory::new(
            TrajectoryId(4),
            0.5,
            vec![
                Waypoint { pos: Vec3::ZERO, time: 0.0 },
                Waypoint { pos: Vec3::X, time: 0.5 },
            ],
        )
        .unwrap();
        let text = to_json(&traj).unwrap();
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["id"], 4);
        assert_eq!(v["waypoints"][1]["p"], serde_json::json!([1.0, 0.0, 0.0]));
        assert_eq!(v["waypoints"][1]["t"], 0.5);
        assert_eq!(from_json::<Trajectory>(&text).unwrap(), traj);
    }

    #[test]
    fn similarity_shape_and_validation() {
        let t = SimilarityTransform::from_parts(2.0, Quat::from_axis_angle(Vec3::Z, 0.3), Vec3::new(1.0, 2.0, 3.0))
            .unwrap();
        let text = to_json(&t).unwrap();
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["A"].as_array().unwrap().len(), 9);
        assert_eq!(from_json::<SimilarityTransform>(&text).unwrap(), t);
        let bad = r#"{"v":1,"k":1.0,"A":[2,0,0,0,1,0,0,0,1],"b":[0,0,0]}"#;
        assert!(from_json::<SimilarityTransform>(bad).is_err());
    }

    #[test]
    fn version_is_enforced() {
        let text = r#"{"v":2,"kind":"stick","path":[[0,0,0],[1,0,0]]}"#;
        assert!(matches!(from_json::<JigConfig>(text), Err(IoError::UnsupportedVersion(2))));
        let text = r#"{"kind":"stick","path":[[0,0,0],[1,0,0]]}"#;
        assert!(matches!(from_json::<JigConfig>(text), Err(IoError::Invalid(_))));
    }
}
