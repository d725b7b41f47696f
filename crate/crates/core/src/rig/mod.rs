//! Armatures, forward kinematics, IK, the constraint stack and device
//! bindings.
//!
//! Bones follow the usual skeletal convention: a bone's local +Y axis runs
//! from its head to its tail, and `rest_local` is expressed in the parent
//! bone's frame (head to head).

mod binding;
mod constraints;
mod ik;
pub mod presets;

use std::collections::HashMap;

use thiserror::Error;

use crate::geom::{Pose, Vec3};

pub use binding::{BindMode, Binding, BindingSet, DeviceId, DEFAULT_MAX_DEVICES};
pub use constraints::{apply_constraints, influenced_bones, Constraint, Externals};
pub use ik::{solve_ik_fabrik, solve_ik_two_bone, FabrikSolution, TwoBoneSolution};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RigError {
    #[error("unknown bone `{0}`")]
    UnknownBone(String),
    #[error("duplicate bone name `{0}`")]
    DuplicateBone(String),
    #[error("bone `{0}` must come after its parent")]
    ParentOrder(String),
    #[error("bone `{0}` has non-positive length")]
    NonPositiveLength(String),
    #[error("bone `{0}` has a non-finite rest pose")]
    NonFinite(String),
    #[error("IK chain of length {chain_length} on `{tip}` exceeds its depth {depth}")]
    ChainTooLong {
        tip: String,
        chain_length: usize,
        depth: usize,
    },
    #[error("IK chain on `{0}` needs chain_length ≥ 1, iterations ≥ 1 and tolerance > 0")]
    InvalidSolverSettings(String),
    #[error("constraint source `{0}` is neither a bound device nor a bone")]
    MissingExternal(String),
    #[error("device `{0}` is already bound")]
    DeviceAlreadyBound(String),
    #[error("device `{0}` is not bound")]
    UnknownDevice(String),
    #[error("at most {0} devices may be bound")]
    TooManyDevices(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bone {
    pub name: String,
    pub parent: Option<usize>,
    pub rest_local: Pose,
    pub length: f64,
}

impl Bone {
    pub fn new(name: impl Into<String>, parent: Option<usize>, rest_local: Pose, length: f64) -> Self {
        Self {
            name: name.into(),
            parent,
            rest_local,
            length,
        }
    }
}

/// A validated bone hierarchy plus its constraint stack.
#[derive(Debug, Clone, PartialEq)]
pub struct Armature {
    bones: Vec<Bone>,
    constraints: Vec<Constraint>,
    index: HashMap<String, usize>,
}

impl Armature {
    pub fn new(bones: Vec<Bone>, constraints: Vec<Constraint>) -> Result<Self, RigError> {
        let mut index = HashMap::with_capacity(bones.len());
        for (i, b) in bones.iter().enumerate() {
            if index.insert(b.name.clone(), i).is_some() {
                return Err(RigError::DuplicateBone(b.name.clone()));
            }
            if b.parent.is_some_and(|p| p >= i) {
                return Err(RigError::ParentOrder(b.name.clone()));
            }
            if !(b.length.is_finite() && b.length > 0.0) {
                return Err(RigError::NonPositiveLength(b.name.clone()));
            }
            if !b.rest_local.is_finite() {
                return Err(RigError::NonFinite(b.name.clone()));
            }
        }
        let mut bones = bones;
        for b in &mut bones {
            b.rest_local.orientation = b.rest_local.orientation.normalize();
        }
        let mut arm = Self {
            bones,
            constraints: Vec::new(),
            index,
        };
        let mut resolved = Vec::with_capacity(constraints.len());
        for c in constraints {
            resolved.push(c.validated(&arm)?);
        }
        arm.constraints = resolved;
        Ok(arm)
    }

    pub fn bones(&self) -> &[Bone] {
        &self.bones
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn len(&self) -> usize {
        self.bones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bones.is_empty()
    }

    pub fn bone_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn require_bone(&self, name: &str) -> Result<usize, RigError> {
        self.bone_index(name)
            .ok_or_else(|| RigError::UnknownBone(name.to_string()))
    }

    pub fn bone(&self, i: usize) -> &Bone {
        &self.bones[i]
    }

    /// Number of bones from `i` up to its root, inclusive.
    pub fn depth(&self, i: usize) -> usize {
        let mut d = 1;
        let mut cur = self.bones[i].parent;
        while let Some(p) = cur {
            d += 1;
            cur = self.bones[p].parent;
        }
        d
    }

    /// Bones of an IK chain ordered root-most first, ending with `tip`.
    pub fn chain(&self, tip: usize, chain_length: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(chain_length);
        let mut cur = Some(tip);
        while let Some(i) = cur {
            if out.len() == chain_length {
                break;
            }
            out.push(i);
            cur = self.bones[i].parent;
        }
        out.reverse();
        out
    }

    pub fn children(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.bones
            .iter()
            .enumerate()
            .filter(move |(_, b)| b.parent == Some(i))
            .map(|(j, _)| j)
    }

    pub fn roots(&self) -> impl Iterator<Item = usize> + '_ {
        self.bones
            .iter()
            .enumerate()
            .filter(|(_, b)| b.parent.is_none())
            .map(|(j, _)| j)
    }
}

/// Per-bone local poses; defaults to the rest pose.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseState {
    locals: Vec<Pose>,
}

impl PoseState {
    pub fn rest(armature: &Armature) -> Self {
        Self {
            locals: armature.bones.iter().map(|b| b.rest_local).collect(),
        }
    }

    pub fn from_locals(locals: Vec<Pose>) -> Self {
        Self { locals }
    }

    pub fn locals(&self) -> &[Pose] {
        &self.locals
    }

    pub fn local(&self, i: usize) -> &Pose {
        &self.locals[i]
    }

    pub fn set_local(&mut self, i: usize, pose: Pose) {
        self.locals[i] = Pose::new(pose.position, pose.orientation.normalize());
    }

    /// Like [`set_local`](Self::set_local) but stores the orientation as
    /// given, without renormalizing.
    pub fn set_local_raw(&mut self, i: usize, pose: Pose) {
        self.locals[i] = pose;
    }

    pub fn len(&self) -> usize {
        self.locals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locals.is_empty()
    }

    /// World pose of one bone, walking up its parents.
    pub fn world_of(&self, armature: &Armature, i: usize) -> Pose {
        match armature.bones[i].parent {
            Some(p) => self.world_of(armature, p).compose(&self.locals[i]),
            None => self.locals[i],
        }
    }

    /// Sets bone `i` so that its world pose becomes `world`.
    pub fn set_world(&mut self, armature: &Armature, i: usize, world: Pose) {
        let local = match armature.bones[i].parent {
            Some(p) => self.world_of(armature, p).inverse().compose(&world),
            None => world,
        };
        self.set_local(i, local);
    }
}

/// World pose of every bone.
pub fn fk_world(armature: &Armature, pose: &PoseState) -> Vec<Pose> {
    let mut world: Vec<Pose> = Vec::with_capacity(armature.len());
    for (i, b) in armature.bones.iter().enumerate() {
        let w = match b.parent {
            Some(p) => world[p].compose(&pose.locals[i]),
            None => pose.locals[i],
        };
        world.push(w);
    }
    world
}

/// World position of a bone's tail given its world pose.
pub fn bone_tail(world: &Pose, length: f64) -> Vec3 {
    world.transform_point(Vec3::new(0.0, length, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Quat;
    use std::f64::consts::FRAC_PI_2;

    fn chain3() -> Armature {
        Armature::new(
            vec![
                Bone::new("a", None, Pose::IDENTITY, 1.0),
                Bone::new("b", Some(0), Pose::from_position(Vec3::new(0.0, 1.0, 0.0)), 1.0),
                Bone::new("c", Some(1), Pose::from_position(Vec3::new(0.0, 1.0, 0.0)), 1.0),
            ],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn rest_fk_accumulates() {
        let arm = chain3();
        let w = fk_world(&arm, &PoseState::rest(&arm));
        assert_eq!(w[2].position, Vec3::new(0.0, 2.0, 0.0));
        assert_eq!(bone_tail(&w[2], 1.0), Vec3::new(0.0, 3.0, 0.0));
    }

    #[test]
    fn single_bone_translation() {
        let arm = Armature::new(vec![Bone::new("root", None, Pose::IDENTITY, 0.5)], vec![]).unwrap();
        let mut pose = PoseState::rest(&arm);
        pose.set_local(0, Pose::from_position(Vec3::X));
        assert_eq!(fk_world(&arm, &pose)[0].position, Vec3::X);
    }

    #[test]
    fn middle_bone_rotation_matches_matrix_chain() {
        let arm = chain3();
        let mut pose = PoseState::rest(&arm);
        let rz = Quat::from_axis_angle(Vec3::Z, FRAC_PI_2);
        pose.set_local(1, Pose::new(Vec3::new(0.0, 1.0, 0.0), rz));
        let w = fk_world(&arm, &pose);
        // hand product: T(0,1,0)·Rz(90°)·T(0,1,0)·(0,1,0) → (0,1,0) + Rz·(0,2,0) = (-2,1,0)
        let m = rz.to_mat3();
        let expected = Vec3::new(0.0, 1.0, 0.0) + m.mul_vec(Vec3::new(0.0, 1.0, 0.0) + Vec3::new(0.0, 1.0, 0.0));
        let tip = bone_tail(&w[2], 1.0);
        assert!((tip - expected).max_abs() < 1e-12);
        assert!((tip - Vec3::new(-2.0, 1.0, 0.0)).max_abs() < 1e-12);
    }

    #[test]
    fn fk_is_deterministic() {
        let arm = presets::humanoid();
        let pose = PoseState::rest(&arm);
        assert_eq!(fk_world(&arm, &pose), fk_world(&arm, &pose.clone()));
    }

    #[test]
    fn validation_errors() {
        let dup = Armature::new(
            vec![Bone::new("a", None, Pose::IDENTITY, 1.0), Bone::new("a", None, Pose::IDENTITY, 1.0)],
            vec![],
        );
        assert_eq!(dup.unwrap_err(), RigError::DuplicateBone("a".into()));
        let order = Armature::new(vec![Bone::new("a", Some(0), Pose::IDENTITY, 1.0)], vec![]);
        assert_eq!(order.unwrap_err(), RigError::ParentOrder("a".into()));
        let len = Armature::new(vec![Bone::new("a", None, Pose::IDENTITY, 0.0)], vec![]);
        assert_eq!(len.unwrap_err(), RigError::NonPositiveLength("a".into()));
    }

    #[test]
    fn set_world_round_trips() {
        let arm = chain3();
        let mut pose = PoseState::rest(&arm);
        pose.set_local(0, Pose::new(Vec3::new(0.5, 0.0, 0.0), Quat::from_axis_angle(Vec3::X, 0.4)));
        let target = Pose::new(Vec3::new(1.0, 2.0, 3.0), Quat::from_axis_angle(Vec3::Y, 1.0));
        pose.set_world(&arm, 2, target);
        let w = fk_world(&arm, &pose)[2];
        assert!((w.position - target.position).max_abs() < 1e-12);
        assert!(w.orientation.angle_to(target.orientation) < 1e-9);
    }
}
