use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ik::{solve_ik_fabrik, two_bone_positions};
use super::{fk_world, Armature, PoseState, RigError};
use crate::geom::{Pose, Quat, Vec3};

/// Named external poses (bound devices, scripted points) visible to constraints.
pub type Externals = BTreeMap<String, Pose>;

fn default_iterations() -> usize {
    20
}

fn default_tolerance() -> f64 {
    1e-4
}

/// One entry of an armature's constraint stack. Sources and targets name
/// either an external point (usually a bound device) or a bone, whose head
/// is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Constraint {
    IkChain {
        tip: String,
        chain_length: usize,
        target: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pole: Option<String>,
        #[serde(default = "default_iterations")]
        iterations: usize,
        #[serde(default = "default_tolerance")]
        tolerance: f64,
    },
    CopyLocation {
        bone: String,
        source: String,
        #[serde(default)]
        offset: Vec3,
    },
    /// Child-of with the offset captured at setup time; `None` captures it
    /// from the rest pose when the armature is built.
    KeepOffsetParent {
        bone: String,
        source: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        offset: Option<Pose>,
    },
}

impl Constraint {
    pub(super) fn validated(self, arm: &Armature) -> Result<Self, RigError> {
        match self {
            Constraint::IkChain {
                ref tip,
                chain_length,
                iterations,
                tolerance,
                ..
            } => {
                let tip_idx = arm.require_bone(tip)?;
                if chain_length == 0 || iterations == 0 || !(tolerance > 0.0 && tolerance.is_finite()) {
                    return Err(RigError::InvalidSolverSettings(tip.clone()));
                }
                let depth = arm.depth(tip_idx);
                if chain_length > depth {
                    return Err(RigError::ChainTooLong {
                        tip: tip.clone(),
                        chain_length,
                        depth,
                    });
                }
                Ok(self)
            }
            Constraint::CopyLocation { ref bone, .. } => {
                arm.require_bone(bone)?;
                Ok(self)
            }
            Constraint::KeepOffsetParent {
                bone,
                source,
                offset,
            } => {
                let b = arm.require_bone(&bone)?;
                let offset = match offset {
                    Some(o) => o,
                    None => {
                        let s = arm.require_bone(&source)?;
                        let rest = PoseState::rest(arm);
                        let world = fk_world(arm, &rest);
                        world[s].inverse().compose(&world[b])
                    }
                };
                Ok(Constraint::KeepOffsetParent {
                    bone,
                    source,
                    offset: Some(offset),
                })
            }
        }
    }

    /// Names this constraint reads from.
    pub fn sources(&self) -> Vec<&str> {
        match self {
            Constraint::IkChain { target, pole, .. } => {
                let mut v = vec![target.as_str()];
                if let Some(p) = pole {
                    v.push(p.as_str());
                }
                v
            }
            Constraint::CopyLocation { source, .. } | Constraint::KeepOffsetParent { source, .. } => {
                vec![source.as_str()]
            }
        }
    }

    /// Bones whose local pose this constraint writes.
    pub fn outputs(&self, arm: &Armature) -> Vec<usize> {
        match self {
            Constraint::IkChain {
                tip, chain_length, ..
            } => arm
                .bone_index(tip)
                .map(|t| arm.chain(t, *chain_length))
                .unwrap_or_default(),
            Constraint::CopyLocation { bone, .. } | Constraint::KeepOffsetParent { bone, .. } => {
                arm.bone_index(bone).into_iter().collect()
            }
        }
    }
}

fn resolve(
    name: &str,
    arm: &Armature,
    pose: &PoseState,
    externals: &Externals,
) -> Result<Pose, RigError> {
    if let Some(p) = externals.get(name) {
        return Ok(*p);
    }
    match arm.bone_index(name) {
        Some(i) => Ok(pose.world_of(arm, i)),
        None => Err(RigError::MissingExternal(name.to_string())),
    }
}

/// Rotates each chain bone about its head so consecutive joints land on
/// `joints`. Only orientations change, so bone lengths are preserved.
fn pose_chain(arm: &Armature, pose: &mut PoseState, chain: &[usize], joints: &[Vec3]) {
    for (k, &b) in chain.iter().enumerate() {
        let world = pose.world_of(arm, b);
        let local_seg = match chain.get(k + 1) {
            Some(&child) => pose.local(child).position,
            None => Vec3::new(0.0, arm.bone(b).length, 0.0),
        };
        let current = world.orientation.rotate(local_seg);
        let desired = joints[k + 1] - world.position;
        let delta = Quat::from_rotation_arc(current, desired);
        let q = (delta * world.orientation).normalize();
        pose.set_world(arm, b, Pose::new(world.position, q));
    }
}

fn solve_chain(
    arm: &Armature,
    pose: &mut PoseState,
    chain: &[usize],
    target: Vec3,
    pole: Option<Vec3>,
    iterations: usize,
    tolerance: f64,
) {
    let world = fk_world(arm, pose);
    let tip = *chain.last().expect("non-empty chain");
    let mut joints: Vec<Vec3> = chain.iter().map(|&b| world[b].position).collect();
    joints.push(super::bone_tail(&world[tip], arm.bone(tip).length));
    let lengths: Vec<f64> = joints.windows(2).map(|w| w[0].distance(w[1])).collect();

    let solved = if chain.len() == 2 {
        let root = joints[0];
        let hint = match pole {
            Some(p) => p - root,
            None => {
                let current = joints[1] - root;
                let axis = (target - root).normalize_or(Vec3::Y);
                let off_axis = current - axis * current.dot(axis);
                if off_axis.norm() > 1e-9 {
                    off_axis
                } else {
                    world[chain[0]].orientation.rotate(Vec3::Z)
                }
            }
        };
        let fallback = joints[2] - root;
        let (mid, eff) = two_bone_positions(root, lengths[0], lengths[1], target, hint, fallback);
        vec![root, mid, eff]
    } else {
        solve_ik_fabrik(&joints, &lengths, target, pole, iterations, tolerance).joints
    };
    pose_chain(arm, pose, chain, &solved);
}

/// Evaluates the constraint stack once, in declaration order, each
/// constraint seeing the result of the previous ones.
pub fn apply_constraints(
    armature: &Armature,
    pose: &PoseState,
    externals: &Externals,
) -> Result<PoseState, RigError> {
    let mut out = pose.clone();
    for c in armature.constraints() {
        match c {
            Constraint::IkChain {
                tip,
                chain_length,
                target,
                pole,
                iterations,
                tolerance,
            } => {
                let tip_idx = armature.require_bone(tip)?;
                let chain = armature.chain(tip_idx, *chain_length);
                let target = resolve(target, armature, &out, externals)?.position;
                let pole = match pole {
                    Some(p) => Some(resolve(p, armature, &out, externals)?.position),
                    None => None,
                };
                solve_chain(armature, &mut out, &chain, target, pole, *iterations, *tolerance);
            }
            Constraint::CopyLocation {
                bone,
                source,
                offset,
            } => {
                let b = armature.require_bone(bone)?;
                let src = resolve(source, armature, &out, externals)?;
                let world = out.world_of(armature, b);
                out.set_world(armature, b, Pose::new(src.position + *offset, world.orientation));
            }
            Constraint::KeepOffsetParent {
                bone,
                source,
                offset,
            } => {
                let b = armature.require_bone(bone)?;
                let src = resolve(source, armature, &out, externals)?;
                let offset = offset.unwrap_or(Pose::IDENTITY);
                out.set_world(armature, b, src.compose(&offset));
            }
        }
    }
    Ok(out)
}

/// Bones whose solved pose can change when the `driven` bones move: the
/// driven bones themselves plus the outputs of every constraint reading
/// from them (directly, through other constraints, or through a moved
/// ancestor of the constrained bones).
pub fn influenced_bones(armature: &Armature, driven: &[usize]) -> BTreeSet<usize> {
    let mut set: BTreeSet<usize> = driven.iter().copied().collect();
    let moved_ancestor = |set: &BTreeSet<usize>, b: usize| {
        let mut cur = armature.bone(b).parent;
        while let Some(p) = cur {
            if set.contains(&p) {
                return true;
            }
            cur = armature.bone(p).parent;
        }
        false
    };
    loop {
        let before = set.len();
        for c in armature.constraints() {
            let outputs = c.outputs(armature);
            let reads_moved = c
                .sources()
                .iter()
                .any(|s| armature.bone_index(s).is_some_and(|i| set.contains(&i)));
            let root_moved = outputs.first().is_some_and(|&r| moved_ancestor(&set, r));
            if reads_moved || root_moved {
                set.extend(outputs);
            }
        }
        if set.len() == before {
            return set;
        }
    }
}
