use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Armature, PoseState, RigError};
use crate::geom::Pose;

/// Devices bound at once unless configured otherwise (one per hand).
pub const DEFAULT_MAX_DEVICES: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeviceId(pub String);

impl DeviceId {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for DeviceId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BindMode {
    /// The device moves the bone; the bone keeps its own orientation.
    #[default]
    LocationOnly,
    /// The device drives position and orientation.
    FullPose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binding {
    pub device: DeviceId,
    pub bone: String,
    pub mode: BindMode,
    /// Captured from the first device pose seen after binding. For
    /// `LocationOnly` only the world-space translation is used.
    pub grab_offset: Option<Pose>,
}

impl Binding {
    fn capture(&mut self, device: &Pose, bone_world: &Pose) {
        self.grab_offset = Some(match self.mode {
            BindMode::FullPose => device.inverse().compose(bone_world),
            BindMode::LocationOnly => Pose::from_position(bone_world.position - device.position),
        });
    }

    /// World pose the bound bone should take for this device sample.
    pub fn source(&self, sample: &Pose, current_bone_world: &Pose) -> Option<Pose> {
        let grab = self.grab_offset?;
        Some(match self.mode {
            BindMode::FullPose => sample.compose(&grab),
            BindMode::LocationOnly => {
                Pose::new(sample.position + grab.position, current_bone_world.orientation)
            }
        })
    }
}

/// Device → bone bindings for one session.
#[derive(Debug, Clone, PartialEq)]
pub struct BindingSet {
    bindings: Vec<Binding>,
    max_devices: usize,
}

impl Default for BindingSet {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_DEVICES)
    }
}

impl BindingSet {
    pub fn new(max_devices: usize) -> Self {
        Self {
            bindings: Vec::new(),
            max_devices,
        }
    }

    pub fn bindings(&self) -> &[Binding] {
        &self.bindings
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    pub fn get(&self, device: &DeviceId) -> Option<&Binding> {
        self.bindings.iter().find(|b| &b.device == device)
    }

    /// Binds `device` to `bone`. If the device's current pose is known the
    /// grab offset is captured now, otherwise on its first sample, so the
    /// bone never jumps.
    pub fn bind(
        &mut self,
        armature: &Armature,
        pose: &PoseState,
        device: DeviceId,
        bone: &str,
        mode: BindMode,
        device_pose: Option<Pose>,
    ) -> Result<&Binding, RigError> {
        let b = armature.require_bone(bone)?;
        if self.get(&device).is_some() {
            return Err(RigError::DeviceAlreadyBound(device.0));
        }
        if self.bindings.len() >= self.max_devices {
            return Err(RigError::TooManyDevices(self.max_devices));
        }
        let mut binding = Binding {
            device,
            bone: bone.to_string(),
            mode,
            grab_offset: None,
        };
        if let Some(dp) = device_pose {
            binding.capture(&dp, &pose.world_of(armature, b));
        }
        self.bindings.push(binding);
        Ok(self.bindings.last().expect("just pushed"))
    }

    pub fn unbind(&mut self, device: &DeviceId) -> Result<Binding, RigError> {
        let idx = self
            .bindings
            .iter()
            .position(|b| &b.device == device)
            .ok_or_else(|| RigError::UnknownDevice(device.0.clone()))?;
        Ok(self.bindings.remove(idx))
    }

    /// Drives bound bones from the latest device samples and returns the
    /// resulting source poses keyed by device id, for use as constraint
    /// externals.
    pub fn apply_input(
        &mut self,
        armature: &Armature,
        pose: &mut PoseState,
        samples: &BTreeMap<DeviceId, Pose>,
    ) -> Result<BTreeMap<String, Pose>, RigError> {
        let mut order: Vec<usize> = (0..self.bindings.len()).collect();
        // parents before children so world → local conversion sees final parents
        let bone_of = |i: usize, bs: &[Binding]| armature.bone_index(&bs[i].bone);
        order.sort_by_key(|&i| bone_of(i, &self.bindings));
        let mut sources = BTreeMap::new();
        for i in order {
            let binding = &mut self.bindings[i];
            let Some(sample) = samples.get(&binding.device) else {
                continue;
            };
            let b = armature.require_bone(&binding.bone)?;
            let current = pose.world_of(armature, b);
            if binding.grab_offset.is_none() {
                binding.capture(sample, &current);
            }
            if let Some(src) = binding.source(sample, &current) {
                pose.set_world(armature, b, src);
                sources.insert(binding.device.0.clone(), src);
            }
        }
        Ok(sources)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Quat, Vec3};
    use crate::rig::{fk_world, presets};

    fn device_pose() -> Pose {
        Pose::new(Vec3::new(0.4, 1.2, -0.3), Quat::from_axis_angle(Vec3::new(1.0, 0.2, 0.0), 0.7))
    }

    #[test]
    fn binding_does_not_jump() {
        for mode in [BindMode::LocationOnly, BindMode::FullPose] {
            let arm = presets::legs();
            let mut pose = PoseState::rest(&arm);
            let before = fk_world(&arm, &pose);
            let mut set = BindingSet::default();
            set.bind(&arm, &pose, "ctrl1".into(), "ankle_L.ik", mode, Some(device_pose()))
                .unwrap();
            let mut samples = BTreeMap::new();
            samples.insert(DeviceId::from("ctrl1"), device_pose());
            set.apply_input(&arm, &mut pose, &samples).unwrap();
            let after = fk_world(&arm, &pose);
            for (a, b) in before.iter().zip(&after) {
                assert!((a.position - b.position).max_abs() < 1e-12, "{mode:?}");
                assert!(a.orientation.angle_to(b.orientation) < 1e-7);
            }
        }
    }

    #[test]
    fn rigid_follow() {
        let arm = presets::legs();
        let mut pose = PoseState::rest(&arm);
        let ankle = arm.bone_index("ankle_L.ik").unwrap();
        let start = pose.world_of(&arm, ankle).position;
        let mut set = BindingSet::default();
        set.bind(&arm, &pose, "ctrl1".into(), "ankle_L.ik", BindMode::LocationOnly, None)
            .unwrap();
        let mut samples = BTreeMap::new();
        samples.insert(DeviceId::from("ctrl1"), device_pose());
        set.apply_input(&arm, &mut pose, &samples).unwrap();
        let mut moved = device_pose();
        moved.position.x += 0.3;
        samples.insert(DeviceId::from("ctrl1"), moved);
        set.apply_input(&arm, &mut pose, &samples).unwrap();
        let now = pose.world_of(&arm, ankle).position;
        assert!((now - start - Vec3::new(0.3, 0.0, 0.0)).max_abs() < 1e-12);
    }

    #[test]
    fn bind_errors() {
        let arm = presets::legs();
        let pose = PoseState::rest(&arm);
        let mut set = BindingSet::default();
        assert_eq!(
            set.bind(&arm, &pose, "a".into(), "nope", BindMode::LocationOnly, None).unwrap_err(),
            RigError::UnknownBone("nope".into())
        );
        set.bind(&arm, &pose, "a".into(), "ankle_L.ik", BindMode::LocationOnly, None).unwrap();
        assert_eq!(
            set.bind(&arm, &pose, "a".into(), "ankle_R.ik", BindMode::LocationOnly, None).unwrap_err(),
            RigError::DeviceAlreadyBound("a".into())
        );
        set.bind(&arm, &pose, "b".into(), "ankle_R.ik", BindMode::LocationOnly, None).unwrap();
        assert_eq!(
            set.bind(&arm, &pose, "c".into(), "hips", BindMode::LocationOnly, None).unwrap_err(),
            RigError::TooManyDevices(2)
        );
        set.unbind(&"a".into()).unwrap();
        assert!(set.unbind(&"a".into()).is_err());
    }
}
