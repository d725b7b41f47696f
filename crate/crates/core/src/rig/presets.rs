//! Built-in armatures covering the four rig archetypes: a single abstract
//! bone, a pair of IK legs with knee poles, an abstract creature driven by an
//! IK chain from a head control, and a humanoid with six controls and four
//! pole targets.
//!
//! Control bones are unparented and carry a `.ik`, `.ctrl` or `.pole` suffix.

use std::f64::consts::{FRAC_PI_2, PI};

use super::{Armature, Bone, Constraint};
use crate::geom::{Pose, Quat, Vec3};

pub const NAMES: [&str; 4] = ["simple", "legs", "creature", "humanoid"];

pub fn by_name(name: &str) -> Option<Armature> {
    match name {
        "simple" => Some(simple_abstract()),
        "legs" => Some(legs()),
        "creature" => Some(complex_abstract()),
        "humanoid" => Some(humanoid()),
        _ => None,
    }
}

struct Builder {
    bones: Vec<Bone>,
    constraints: Vec<Constraint>,
}

impl Builder {
    fn new() -> Self {
        Self {
            bones: Vec::new(),
            constraints: Vec::new(),
        }
    }

    fn idx(&self, name: &str) -> usize {
        self.bones
            .iter()
            .position(|b| b.name == name)
            .unwrap_or_else(|| panic!("preset references unknown bone {name}"))
    }

    fn bone(&mut self, name: &str, parent: Option<&str>, pos: Vec3, rot: Quat, length: f64) -> &mut Self {
        let parent = parent.map(|p| self.idx(p));
        self.bones.push(Bone::new(name, parent, Pose::new(pos, rot), length));
        self
    }

    fn control(&mut self, name: &str, at: Vec3) -> &mut Self {
        self.bone(name, None, at, Quat::IDENTITY, 0.08)
    }

    fn ik(&mut self, tip: &str, chain_length: usize, target: &str, pole: Option<&str>) -> &mut Self {
        self.constraints.push(Constraint::IkChain {
            tip: tip.into(),
            chain_length,
            target: target.into(),
            pole: pole.map(Into::into),
            iterations: 30,
            tolerance: 1e-5,
        });
        self
    }

    fn build(&mut self) -> Armature {
        Armature::new(std::mem::take(&mut self.bones), std::mem::take(&mut self.constraints))
            .expect("preset armature is valid")
    }
}

fn down() -> Quat {
    // +Y → −Y (bones pointing at the floor), +Z → −Z
    Quat::from_axis_angle(Vec3::X, PI)
}

/// One free bone, bound directly.
pub fn simple_abstract() -> Armature {
    Builder::new()
        .bone("body", None, Vec3::new(0.0, 1.0, 0.0), Quat::IDENTITY, 0.5)
        .build()
}

/// Hips with two-bone legs, ankle IK controls and knee poles.
pub fn legs() -> Armature {
    let mut b = Builder::new();
    b.bone("hips", None, Vec3::new(0.0, 1.0, 0.0), Quat::IDENTITY, 0.2);
    for (side, x) in [("L", 0.1), ("R", -0.1)] {
        b.bone(&format!("thigh_{side}"), Some("hips"), Vec3::new(x, 0.0, 0.0), down(), 0.45)
            .bone(&format!("shin_{side}"), Some(&format!("thigh_{side}")), Vec3::new(0.0, 0.45, 0.0), Quat::IDENTITY, 0.45);
    }
    for (side, x) in [("L", 0.1), ("R", -0.1)] {
        b.control(&format!("ankle_{side}.ik"), Vec3::new(x, 0.1, 0.0))
            .control(&format!("knee_{side}.pole"), Vec3::new(x, 0.55, 0.5));
    }
    for side in ["L", "R"] {
        b.ik(&format!("shin_{side}"), 2, &format!("ankle_{side}.ik"), Some(&format!("knee_{side}.pole")));
    }
    b.build()
}

/// Four-segment stalk reaching for a head control; the head keeps its
/// offset to the control so it also follows the control's rotation.
pub fn complex_abstract() -> Armature {
    let mut b = Builder::new();
    b.bone("base", None, Vec3::ZERO, Quat::IDENTITY, 0.1);
    let mut parent = "base".to_string();
    for i in 1..=4 {
        let name = format!("spine_{i}");
        let offset = if i == 1 { 0.1 } else { 0.25 };
        b.bone(&name, Some(&parent), Vec3::new(0.0, offset, 0.0), Quat::IDENTITY, 0.25);
        parent = name;
    }
    b.bone("head", Some("spine_4"), Vec3::new(0.0, 0.25, 0.0), Quat::IDENTITY, 0.15)
        .control("head.ctrl", Vec3::new(0.0, 1.1, 0.0))
        .ik("spine_4", 4, "head.ctrl", None);
    b.constraints.push(Constraint::KeepOffsetParent {
        bone: "head".into(),
        source: "head.ctrl".into(),
        offset: None,
    });
    b.build()
}

/// Humanoid: hips/head/hand/ankle controls, elbow and knee poles.
pub fn humanoid() -> Armature {
    let mut b = Builder::new();
    b.bone("hips", None, Vec3::new(0.0, 1.0, 0.0), Quat::IDENTITY, 0.1)
        .bone("spine", Some("hips"), Vec3::new(0.0, 0.1, 0.0), Quat::IDENTITY, 0.2)
        .bone("chest", Some("spine"), Vec3::new(0.0, 0.2, 0.0), Quat::IDENTITY, 0.2)
        .bone("neck", Some("chest"), Vec3::new(0.0, 0.2, 0.0), Quat::IDENTITY, 0.1)
        .bone("head", Some("neck"), Vec3::new(0.0, 0.1, 0.0), Quat::IDENTITY, 0.2);
    for (side, sign) in [("L", 1.0), ("R", -1.0)] {
        // +Y → ±X
        let sideways = Quat::from_axis_angle(Vec3::Z, -sign * FRAC_PI_2);
        b.bone(&format!("shoulder_{side}"), Some("chest"), Vec3::new(0.0, 0.18, 0.0), sideways, 0.15)
            .bone(&format!("upper_arm_{side}"), Some(&format!("shoulder_{side}")), Vec3::new(0.0, 0.15, 0.0), Quat::IDENTITY, 0.28)
            .bone(&format!("forearm_{side}"), Some(&format!("upper_arm_{side}")), Vec3::new(0.0, 0.28, 0.0), Quat::IDENTITY, 0.25)
            .bone(&format!("hand_{side}"), Some(&format!("forearm_{side}")), Vec3::new(0.0, 0.25, 0.0), Quat::IDENTITY, 0.08);
    }
    for (side, x) in [("L", 0.1), ("R", -0.1)] {
        b.bone(&format!("thigh_{side}"), Some("hips"), Vec3::new(x, 0.0, 0.0), down(), 0.45)
            .bone(&format!("shin_{side}"), Some(&format!("thigh_{side}")), Vec3::new(0.0, 0.45, 0.0), Quat::IDENTITY, 0.45)
            // −90° about local X turns the foot toward world +Z
            .bone(&format!("foot_{side}"), Some(&format!("shin_{side}")), Vec3::new(0.0, 0.45, 0.0), Quat::from_axis_angle(Vec3::X, -FRAC_PI_2), 0.1);
    }
    b.control("hips.ctrl", Vec3::new(0.0, 1.0, 0.0))
        .control("head.ctrl", Vec3::new(0.0, 1.8, 0.0));
    for (side, sign) in [("L", 1.0), ("R", -1.0)] {
        b.control(&format!("hand_{side}.ik"), Vec3::new(sign * 0.68, 1.48, 0.0))
            .control(&format!("elbow_{side}.pole"), Vec3::new(sign * 0.43, 1.48, -0.4))
            .control(&format!("ankle_{side}.ik"), Vec3::new(sign * 0.1, 0.1, 0.0))
            .control(&format!("knee_{side}.pole"), Vec3::new(sign * 0.1, 0.55, 0.5));
    }
    b.constraints.push(Constraint::CopyLocation {
        bone: "hips".into(),
        source: "hips.ctrl".into(),
        offset: Vec3::ZERO,
    });
    for side in ["L", "R"] {
        b.ik(&format!("shin_{side}"), 2, &format!("ankle_{side}.ik"), Some(&format!("knee_{side}.pole")))
            .ik(&format!("forearm_{side}"), 2, &format!("hand_{side}.ik"), Some(&format!("elbow_{side}.pole")));
    }
    b.ik("head", 3, "head.ctrl", None);
    b.build()
}

/// Names of unparented control bones (`.ik` / `.ctrl` suffix).
pub fn control_bones(armature: &Armature) -> Vec<&str> {
    armature
        .bones()
        .iter()
        .filter(|b| b.parent.is_none() && (b.name.ends_with(".ik") || b.name.ends_with(".ctrl")))
        .map(|b| b.name.as_str())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rig::{apply_constraints, bone_tail, fk_world, Externals, PoseState};

    #[test]
    fn humanoid_has_more_than_five_controls_and_poles() {
        let arm = humanoid();
        assert!(control_bones(&arm).len() > 5);
        assert_eq!(arm.bones().iter().filter(|b| b.name.ends_with(".pole")).count(), 4);
    }

    #[test]
    fn controls_sit_on_effectors_at_rest() {
        for arm in [legs(), humanoid(), complex_abstract()] {
            let rest = PoseState::rest(&arm);
            let w = fk_world(&arm, &rest);
            for c in arm.constraints() {
                if let Constraint::IkChain { tip, target, .. } = c {
                    let t = arm.bone_index(tip).unwrap();
                    let g = arm.bone_index(target).unwrap();
                    let eff = bone_tail(&w[t], arm.bone(t).length);
                    assert!(eff.distance(w[g].position) < 1e-9, "{tip}");
                }
            }
            let solved = apply_constraints(&arm, &rest, &Externals::new()).unwrap();
            let w2 = fk_world(&arm, &solved);
            for (a, b) in w.iter().zip(&w2) {
                assert!(a.position.distance(b.position) < 1e-6);
            }
        }
    }

    #[test]
    fn every_name_resolves() {
        for n in NAMES {
            assert!(by_name(n).is_some());
        }
        assert!(by_name("dragon").is_none());
    }
}
