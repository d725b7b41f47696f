//! IK solvers: an analytic two-bone solve and FABRIK for longer chains.

use crate::geom::{Pose, Quat, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoBoneSolution {
    /// Joint between the two bones.
    pub mid: Vec3,
    pub effector: Vec3,
    /// World orientation of the upper bone (its +Y points root → mid).
    pub upper: Quat,
    /// World orientation of the lower bone (its +Y points mid → effector).
    pub lower: Quat,
}

/// Positions of a two-bone chain rooted at `root` reaching for `target`,
/// bending toward `bend_hint` (any vector; only its component orthogonal to
/// the root → target axis matters).
pub(crate) fn two_bone_positions(
    root: Vec3,
    l1: f64,
    l2: f64,
    target: Vec3,
    bend_hint: Vec3,
    fallback_dir: Vec3,
) -> (Vec3, Vec3) {
    let to_target = target - root;
    let dist = to_target.norm();
    let dir = to_target
        .try_normalize()
        .unwrap_or_else(|| fallback_dir.normalize_or(Vec3::Y));
    let bend = {
        let ortho = bend_hint - dir * bend_hint.dot(dir);
        ortho.try_normalize().unwrap_or_else(|| dir.any_orthogonal())
    };
    let reach = dist.clamp((l1 - l2).abs(), l1 + l2);
    // law of cosines for the angle at the root
    let mut cos_root = if reach > 0.0 {
        ((l1 * l1 + reach * reach - l2 * l2) / (2.0 * l1 * reach)).clamp(-1.0, 1.0)
    } else {
        1.0
    };
    // within rounding of full extension sin = √(2δ) turns ulps into ~1e-8 of bend
    if cos_root > 1.0 - 4.0 * f64::EPSILON {
        cos_root = 1.0;
    }
    let sin_root = (1.0 - cos_root * cos_root).max(0.0).sqrt();
    let mid = root + (dir * cos_root + bend * sin_root) * l1;
    let effector = if dist >= (l1 - l2).abs() && dist <= l1 + l2 {
        target
    } else {
        root + dir * reach
    };
    (mid, effector)
}

/// Analytic law-of-cosines solve. Unreachable targets clamp to a straight
/// (or fully folded) chain along the root → target direction. With a pole,
/// the mid joint lies in the plane of root → target and root → pole; without
/// one it bends toward the root's local +Z.
pub fn solve_ik_two_bone(
    root_world: Pose,
    l1: f64,
    l2: f64,
    target: Vec3,
    pole: Option<Vec3>,
) -> TwoBoneSolution {
    let root = root_world.position;
    let hint = match pole {
        Some(p) => p - root,
        None => root_world.orientation.rotate(Vec3::Z),
    };
    let fallback = root_world.orientation.rotate(Vec3::Y);
    let (mid, effector) = two_bone_positions(root, l1, l2, target, hint, fallback);
    let upper = (Quat::from_rotation_arc(root_world.orientation.rotate(Vec3::Y), mid - root)
        * root_world.orientation)
        .normalize();
    let lower = (Quat::from_rotation_arc(upper.rotate(Vec3::Y), effector - mid) * upper).normalize();
    TwoBoneSolution {
        mid,
        effector,
        upper,
        lower,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FabrikSolution {
    pub joints: Vec<Vec3>,
    pub iterations: usize,
    /// Distance from the final effector to the target.
    pub error: f64,
}

fn segment_dir(from: Vec3, to: Vec3, fallback: Vec3) -> Vec3 {
    (to - from).try_normalize().unwrap_or(fallback)
}

/// Rotates every joint after the root about the root → effector axis so the
/// middle joint swings toward `pole`. Lengths and the effector are unchanged.
pub(crate) fn orient_toward_pole(joints: &mut [Vec3], pole: Vec3) {
    let n = joints.len();
    if n < 3 {
        return;
    }
    let root = joints[0];
    let Some(axis) = (joints[n - 1] - root).try_normalize() else {
        return;
    };
    let perp = |v: Vec3| v - axis * v.dot(axis);
    let mid = joints[n / 2];
    let (Some(from), Some(to)) = (perp(mid - root).try_normalize(), perp(pole - root).try_normalize()) else {
        return;
    };
    let angle = from.cross(to).dot(axis).atan2(from.dot(to));
    let q = Quat::from_axis_angle(axis, angle);
    for j in joints.iter_mut().skip(1) {
        *j = root + q.rotate(*j - root);
    }
}

fn arc_angle(lengths: &[f64], r: f64) -> f64 {
    lengths.iter().map(|&l| 2.0 * (l / (2.0 * r)).min(1.0).asin()).sum()
}

fn bisect(mut lo: f64, mut hi: f64, lo_negative: bool, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (f(mid) < 0.0) == lo_negative {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exact fallback for targets FABRIK is slow to reach (mostly near full
/// extension): all joints on one circle whose chord is root → target,
/// bulging toward `side`. Returns `None` if no such arc exists (target
/// closer than the chain can fold into a single circle).
fn arc_solution(root: Vec3, lengths: &[f64], target: Vec3, side: Vec3) -> Option<Vec<Vec3>> {
    let total: f64 = lengths.iter().sum();
    let d = root.distance(target);
    if !(d > 0.0 && d < total) {
        return None;
    }
    let axis = (target - root) / d;
    let side = (side - axis * side.dot(axis)).try_normalize()?;
    let r_min = lengths.iter().copied().fold(0.0, f64::max) / 2.0;
    let tau = std::f64::consts::TAU;
    // only arcs spanning at most one turn
    let mut lo = r_min;
    if arc_angle(lengths, r_min) > tau {
        let mut hi = total;
        while arc_angle(lengths, hi) > tau {
            hi *= 2.0;
        }
        lo = bisect(r_min, hi, false, |r| arc_angle(lengths, r) - tau);
    }
    let chord = |r: f64| 2.0 * r * (arc_angle(lengths, r) / 2.0).sin() - d;
    if chord(lo) > 0.0 {
        return None;
    }
    let mut hi = total.max(lo * 2.0);
    let mut guard = 0;
    while chord(hi) < 0.0 {
        hi *= 2.0;
        guard += 1;
        if guard > 2000 {
            return None;
        }
    }
    let r = bisect(lo, hi, true, chord);
    let phi = arc_angle(lengths, r);
    // planar layout: root at the origin, target on +x, bulge toward +y
    let center = (d / 2.0, -r * (phi / 2.0).cos());
    let mut angle = std::f64::consts::FRAC_PI_2 + phi / 2.0;
    let mut joints = vec![root];
    for &l in lengths {
        angle -= 2.0 * (l / (2.0 * r)).min(1.0).asin();
        let (x, y) = (center.0 + r * angle.cos(), center.1 + r * angle.sin());
        joints.push(root + axis * x + side * y);
    }
    // restore exact lengths against rounding, walking outward
    for i in 0..lengths.len() {
        let dir = (joints[i + 1] - joints[i]).try_normalize()?;
        joints[i + 1] = joints[i] + dir * lengths[i];
    }
    Some(joints)
}

/// FABRIK with the root pinned at `joints[0]`. `lengths[i]` is the distance
/// between `joints[i]` and `joints[i + 1]`.
pub fn solve_ik_fabrik(
    joints: &[Vec3],
    lengths: &[f64],
    target: Vec3,
    pole: Option<Vec3>,
    iterations: usize,
    tolerance: f64,
) -> FabrikSolution {
    assert_eq!(joints.len(), lengths.len() + 1, "one length per segment");
    let n = lengths.len();
    let root = joints[0];
    let total: f64 = lengths.iter().sum();
    let mut p = joints.to_vec();
    if n == 0 {
        return FabrikSolution {
            error: root.distance(target),
            joints: p,
            iterations: 0,
        };
    }

    let initial_dir = segment_dir(root, joints[n], Vec3::Y);
    if root.distance(target) >= total {
        let dir = segment_dir(root, target, initial_dir);
        for i in 0..n {
            p[i + 1] = p[i] + dir * lengths[i];
        }
        return FabrikSolution {
            error: p[n].distance(target),
            joints: p,
            iterations: 0,
        };
    }

    let mut error = p[n].distance(target);
    let mut used = 0;
    while error > tolerance && used < iterations {
        p[n] = target;
        for i in (0..n).rev() {
            let d = segment_dir(p[i + 1], p[i], -initial_dir);
            p[i] = p[i + 1] + d * lengths[i];
        }
        p[0] = root;
        for i in 0..n {
            let d = segment_dir(p[i], p[i + 1], initial_dir);
            p[i + 1] = p[i] + d * lengths[i];
        }
        error = p[n].distance(target);
        used += 1;
    }
    if error > tolerance && n >= 2 {
        let axis = (target - root).normalize_or(initial_dir);
        let bulge = p[1..n]
            .iter()
            .map(|&j| {
                let v = j - root;
                v - axis * v.dot(axis)
            })
            .fold(Vec3::ZERO, |acc, v| acc + v);
        let side = if bulge.norm() > 1e-12 {
            bulge
        } else {
            pole.map(|q| q - root).unwrap_or_else(|| axis.any_orthogonal())
        };
        let side = if (side - axis * side.dot(axis)).norm() > 1e-12 { side } else { axis.any_orthogonal() };
        if let Some(arc) = arc_solution(root, lengths, target, side) {
            let arc_error = arc[n].distance(target);
            if arc_error < error {
                p = arc;
                error = arc_error;
            }
        }
    }
    if let Some(pole) = pole {
        orient_toward_pole(&mut p, pole);
        error = p[n].distance(target);
    }
    FabrikSolution {
        joints: p,
        iterations: used,
        error,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn interior_angle(root: Vec3, mid: Vec3, end: Vec3) -> f64 {
        let a = (root - mid).try_normalize().unwrap();
        let b = (end - mid).try_normalize().unwrap();
        a.dot(b).clamp(-1.0, 1.0).acos()
    }

    #[test]
    fn full_extension() {
        let s = solve_ik_two_bone(Pose::IDENTITY, 1.0, 1.0, Vec3::new(2.0, 0.0, 0.0), None);
        assert!((interior_angle(Vec3::ZERO, s.mid, s.effector) - PI).abs() < 1e-7);
        assert!((s.effector - Vec3::new(2.0, 0.0, 0.0)).max_abs() < 1e-12);
    }

    #[test]
    fn right_angle_elbow() {
        let target = Vec3::new(1.0, 1.0, 0.0);
        let s = solve_ik_two_bone(Pose::IDENTITY, 1.0, 1.0, target, None);
        // law of cosines: cos β = (1 + 1 − 2) / 2 = 0
        assert!((interior_angle(Vec3::ZERO, s.mid, s.effector) - FRAC_PI_2).abs() < 1e-12);
        // effector reconstructed from the returned orientations
        let fk = s.upper.rotate(Vec3::Y) + s.lower.rotate(Vec3::Y);
        assert!((fk - target).norm() < 1e-12);
    }

    #[test]
    fn unreachable_clamps() {
        let s = solve_ik_two_bone(Pose::IDENTITY, 1.0, 1.0, Vec3::new(0.0, 0.0, 3.0), None);
        assert!((s.effector - Vec3::new(0.0, 0.0, 2.0)).max_abs() < 1e-12);
        // too close for unequal bones: folded back
        let s = solve_ik_two_bone(Pose::IDENTITY, 1.0, 0.4, Vec3::new(0.1, 0.0, 0.0), None);
        assert!((s.effector.norm() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn pole_sets_bend_plane() {
        let target = Vec3::new(0.0, 1.5, 0.0);
        let pole = Vec3::new(0.0, 0.7, 2.0);
        let s = solve_ik_two_bone(Pose::IDENTITY, 1.0, 1.0, target, Some(pole));
        let triple = target.cross(pole).dot(s.mid);
        assert!(triple.abs() < 1e-12);
        assert!(s.mid.z > 0.0, "bends toward the pole");
    }

    #[test]
    fn fabrik_fixed_point() {
        let joints = [Vec3::ZERO, Vec3::Y, Vec3::new(1.0, 1.0, 0.0)];
        let s = solve_ik_fabrik(&joints, &[1.0, 1.0], joints[2], None, 10, 1e-6);
        assert_eq!(s.iterations, 0);
        assert_eq!(s.joints, joints.to_vec());
    }

    #[test]
    fn fabrik_unreachable_is_straight() {
        let joints = [Vec3::ZERO, Vec3::Y, Vec3::new(0.0, 2.0, 0.0), Vec3::new(1.0, 2.0, 0.0)];
        let target = Vec3::new(10.0, 0.0, 0.0);
        let s = solve_ik_fabrik(&joints, &[1.0, 1.0, 1.0], target, None, 10, 1e-6);
        for (i, j) in s.joints.iter().enumerate() {
            assert!((*j - Vec3::X * i as f64).max_abs() < 1e-12);
        }
        // the analytic clamp agrees for the first two segments
        let a = solve_ik_two_bone(Pose::IDENTITY, 1.0, 1.0, target, None);
        assert!((a.effector - s.joints[2]).max_abs() < 1e-12);
    }

    #[test]
    fn fabrik_reaches_and_keeps_lengths() {
        let joints: Vec<Vec3> = (0..5).map(|i| Vec3::new(0.0, i as f64 * 0.5, 0.0)).collect();
        let lengths = [0.5; 4];
        let target = Vec3::new(0.8, 0.9, 0.3);
        let s = solve_ik_fabrik(&joints, &lengths, target, None, 50, 1e-6);
        assert!(s.error <= 1e-6);
        assert_eq!(s.joints[0], Vec3::ZERO);
        for (i, l) in lengths.iter().enumerate() {
            assert!((s.joints[i].distance(s.joints[i + 1]) - l).abs() < 1e-9);
        }
    }

    #[test]
    fn fabrik_pole_swings_chain() {
        let joints: Vec<Vec3> = (0..4).map(|i| Vec3::new(0.0, i as f64, 0.0)).collect();
        let target = Vec3::new(0.0, 2.0, 0.0);
        let pole = Vec3::new(5.0, 1.0, 0.0);
        let s = solve_ik_fabrik(&joints, &[1.0; 3], target, Some(pole), 50, 1e-6);
        assert!(s.error < 1e-5);
        assert!(s.joints[1].x > 0.0 || s.joints[2].x > 0.0);
        // interior joints lie in the root/target/pole plane
        let n = target.cross(pole).try_normalize().unwrap();
        assert!(s.joints[2].dot(n).abs() < 1e-9);
    }
}
