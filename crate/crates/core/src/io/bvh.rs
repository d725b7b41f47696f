//! BVH export and parsing.
//!
//! Conventions: offsets and positions in centimetres (metres × 100). Every
//! unparented bone becomes its own `ROOT` with channels
//! `Xposition Yposition Zposition Zrotation Xrotation Yrotation`; other
//! joints carry `Zrotation Xrotation Yrotation`. BVH joints have no rest
//! rotation, so offsets are the rest head-to-head vectors in world axes and
//! each frame stores the rotation relative to the rest pose, as intrinsic
//! Z-X-Y Euler angles in degrees. Root offsets are zero; root position
//! channels hold the absolute head position. A child whose head leaves its
//! rest offset (a bone re-parented by a constraint) also gets position
//! channels, holding the displacement added to its offset.

use std::fmt::Write as _;

use super::IoError;
use crate::geom::{Mat3, Pose, Quat, Vec3};
use crate::rig::{fk_world, Armature, PoseState};
use crate::takes::{sample_timeline, Timeline};

/// Pitch (X) is clamped just short of ±90° to keep Z and Y defined.
pub const PITCH_LIMIT_DEG: f64 = 90.0 - 1e-4;
const CM_PER_M: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BvhChannel {
    Xposition,
    Yposition,
    Zposition,
    Xrotation,
    Yrotation,
    Zrotation,
}

impl BvhChannel {
    pub fn name(self) -> &'static str {
        match self {
            BvhChannel::Xposition => "Xposition",
            BvhChannel::Yposition => "Yposition",
            BvhChannel::Zposition => "Zposition",
            BvhChannel::Xrotation => "Xrotation",
            BvhChannel::Yrotation => "Yrotation",
            BvhChannel::Zrotation => "Zrotation",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "Xposition" => BvhChannel::Xposition,
            "Yposition" => BvhChannel::Yposition,
            "Zposition" => BvhChannel::Zposition,
            "Xrotation" => BvhChannel::Xrotation,
            "Yrotation" => BvhChannel::Yrotation,
            "Zrotation" => BvhChannel::Zrotation,
            _ => return None,
        })
    }
}

const ROOT_CHANNELS: [BvhChannel; 6] = [
    BvhChannel::Xposition,
    BvhChannel::Yposition,
    BvhChannel::Zposition,
    BvhChannel::Zrotation,
    BvhChannel::Xrotation,
    BvhChannel::Yrotation,
];
const JOINT_CHANNELS: [BvhChannel; 3] = [BvhChannel::Zrotation, BvhChannel::Xrotation, BvhChannel::Yrotation];

#[derive(Debug, Clone, PartialEq)]
pub struct BvhJoint {
    pub name: String,
    pub parent: Option<usize>,
    pub offset: Vec3,
    pub channels: Vec<BvhChannel>,
    pub end_site: Option<Vec3>,
}

/// Joints in file (depth-first) order; each frame lists channel values in
/// that order.
#[derive(Debug, Clone, PartialEq)]
pub struct BvhDocument {
    pub joints: Vec<BvhJoint>,
    pub frame_time: f64,
    pub frames: Vec<Vec<f64>>,
}

impl BvhDocument {
    pub fn channel_count(&self) -> usize {
        self.joints.iter().map(|j| j.channels.len()).sum()
    }

    fn children(&self, i: Option<usize>) -> impl Iterator<Item = usize> + '_ {
        self.joints
            .iter()
            .enumerate()
            .filter(move |(_, j)| j.parent == i)
            .map(|(k, _)| k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BvhExport {
    pub document: BvhDocument,
    /// Rotations whose pitch had to be clamped.
    pub gimbal_warnings: usize,
}

/// Intrinsic Z-X-Y angles `[z, x, y]` in degrees with `R = Rz · Rx · Ry`,
/// and whether the pitch was clamped.
pub fn euler_zxy_degrees(q: Quat) -> ([f64; 3], bool) {
    let m: Mat3 = q.normalize().to_mat3();
    let r = &m.rows;
    let sx = r[2][1].clamp(-1.0, 1.0);
    let x = sx.asin().to_degrees();
    if x.abs() > PITCH_LIMIT_DEG {
        // gimbal: only z + y (or z − y) is defined; put it all in z
        let z = r[1][0].atan2(r[0][0]).to_degrees();
        return ([z, PITCH_LIMIT_DEG.copysign(x), 0.0], true);
    }
    let y = (-r[2][0]).atan2(r[2][2]).to_degrees();
    let z = (-r[0][1]).atan2(r[1][1]).to_degrees();
    ([z, x, y], false)
}

fn axis_rotation(channel: BvhChannel, degrees: f64) -> Option<Quat> {
    let axis = match channel {
        BvhChannel::Xrotation => Vec3::X,
        BvhChannel::Yrotation => Vec3::Y,
        BvhChannel::Zrotation => Vec3::Z,
        _ => return None,
    };
    Some(Quat::from_axis_angle(axis, degrees.to_radians()))
}

/// Joint head positions in metres for one frame, by direct evaluation of
/// the channel list. Used as an oracle against armature FK.
pub fn bvh_world_positions(doc: &BvhDocument, frame: usize) -> Vec<Vec3> {
    let values = &doc.frames[frame];
    let mut cursor = 0;
    let mut world: Vec<(Vec3, Quat)> = Vec::with_capacity(doc.joints.len());
    for j in &doc.joints {
        let mut translation = j.offset;
        let mut rotation = Quat::IDENTITY;
        for &c in &j.channels {
            let v = values[cursor];
            cursor += 1;
            match c {
                BvhChannel::Xposition => translation.x += v,
                BvhChannel::Yposition => translation.y += v,
                BvhChannel::Zposition => translation.z += v,
                _ => rotation = rotation * axis_rotation(c, v).expect("rotation channel"),
            }
        }
        let w = match j.parent {
            Some(p) => {
                let (pp, pq) = world[p];
                (pp + pq.rotate(translation), pq * rotation)
            }
            None => (translation, rotation),
        };
        world.push(w);
    }
    world.into_iter().map(|(p, _)| p / CM_PER_M).collect()
}

fn dfs_order(arm: &Armature) -> Vec<usize> {
    fn visit(arm: &Armature, i: usize, out: &mut Vec<usize>) {
        out.push(i);
        for c in arm.children(i) {
            visit(arm, c, out);
        }
    }
    let mut out = Vec::with_capacity(arm.len());
    for r in arm.roots() {
        visit(arm, r, &mut out);
    }
    out
}

/// Samples `timeline` at `frame_rate` and builds a BVH document.
/// `Frames = floor(duration · rate) + 1`, frame `i` at `i / rate`.
pub fn export_bvh(armature: &Armature, timeline: &Timeline, frame_rate: f64) -> Result<BvhExport, IoError> {
    if timeline.is_empty() {
        return Err(IoError::EmptyTimeline);
    }
    if !(frame_rate.is_finite() && frame_rate > 0.0) {
        return Err(IoError::Invalid(format!("frame rate must be positive, got {frame_rate}")));
    }
    let order = dfs_order(armature);
    let mut file_index = vec![0usize; armature.len()];
    for (k, &b) in order.iter().enumerate() {
        file_index[b] = k;
    }
    let rest = fk_world(armature, &PoseState::rest(armature));
    let rest_inv: Vec<Quat> = rest.iter().map(|w| w.orientation.inverse()).collect();
    let count = (timeline.duration() * frame_rate + 1e-9).floor() as usize + 1;
    // per frame: world heads and rotations relative to rest, world axes
    let sampled: Vec<(Vec<Pose>, Vec<Quat>)> = (0..count)
        .map(|i| {
            let world = fk_world(armature, &sample_timeline(timeline, armature, i as f64 / frame_rate));
            let delta = world
                .iter()
                .zip(&rest_inv)
                .map(|(w, ri)| (w.orientation * *ri).normalize())
                .collect();
            (world, delta)
        })
        .collect();
    // head displacement from the rest offset, in the parent's BVH frame (m)
    let displacement = |world: &[Pose], delta: &[Quat], b: usize, p: usize| {
        delta[p].inverse().rotate(world[b].position - world[p].position) - (rest[b].position - rest[p].position)
    };
    let translates: Vec<bool> = (0..armature.len())
        .map(|b| match armature.bone(b).parent {
            None => true,
            Some(p) => sampled
                .iter()
                .any(|(world, delta)| displacement(world, delta, b, p).norm() > 1e-9),
        })
        .collect();

    let joints: Vec<BvhJoint> = order
        .iter()
        .map(|&b| {
            let bone = armature.bone(b);
            let offset = match bone.parent {
                Some(p) => (rest[b].position - rest[p].position) * CM_PER_M,
                None => Vec3::ZERO,
            };
            let leaf = armature.children(b).next().is_none();
            BvhJoint {
                name: bone.name.clone(),
                parent: bone.parent.map(|p| file_index[p]),
                offset: quantize_vec(offset),
                channels: if translates[b] {
                    ROOT_CHANNELS.to_vec()
                } else {
                    JOINT_CHANNELS.to_vec()
                },
                end_site: leaf
                    .then(|| quantize_vec(rest[b].orientation.rotate(Vec3::new(0.0, bone.length, 0.0)) * CM_PER_M)),
            }
        })
        .collect();

    let mut warnings = 0;
    let mut frames = Vec::with_capacity(count);
    for (world, delta) in &sampled {
        let mut values = Vec::with_capacity(order.len() * 3 + 3);
        for &b in &order {
            let local = match armature.bone(b).parent {
                Some(p) => {
                    if translates[b] {
                        let d = displacement(world, delta, b, p) * CM_PER_M;
                        values.extend([d.x, d.y, d.z].map(quantize));
                    }
                    delta[p].inverse() * delta[b]
                }
                None => {
                    let p = world[b].position * CM_PER_M;
                    values.extend([p.x, p.y, p.z].map(quantize));
                    delta[b]
                }
            };
            let (zxy, clamped) = euler_zxy_degrees(local);
            warnings += usize::from(clamped);
            values.extend(zxy.map(quantize));
        }
        frames.push(values);
    }
    Ok(BvhExport {
        document: BvhDocument {
            joints,
            // as written; the file carries seven decimals
            frame_time: format!("{:.7}", 1.0 / frame_rate).parse().expect("formatted float parses"),
            frames,
        },
        gimbal_warnings: warnings,
    })
}

/// Rounds to the written precision so a parsed file reproduces the
/// document exactly.
fn quantize(v: f64) -> f64 {
    fmt_value(v).parse().expect("formatted float parses")
}

fn quantize_vec(v: Vec3) -> Vec3 {
    Vec3::new(quantize(v.x), quantize(v.y), quantize(v.z))
}

fn fmt_value(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

fn fmt_vec(v: Vec3) -> String {
    format!("{} {} {}", fmt_value(v.x), fmt_value(v.y), fmt_value(v.z))
}

/// Serializes a document. Byte-stable for equal input.
pub fn write_bvh(doc: &BvhDocument) -> String {
    fn joint(doc: &BvhDocument, i: usize, depth: usize, out: &mut String) {
        let pad = "\t".repeat(depth);
        let j = &doc.joints[i];
        let kw = if j.parent.is_none() { "ROOT" } else { "JOINT" };
        let _ = writeln!(out, "{pad}{kw} {}", j.name);
        let _ = writeln!(out, "{pad}{{");
        let _ = writeln!(out, "{pad}\tOFFSET {}", fmt_vec(j.offset));
        let names: Vec<&str> = j.channels.iter().map(|c| c.name()).collect();
        let _ = writeln!(out, "{pad}\tCHANNELS {} {}", names.len(), names.join(" "));
        for c in doc.children(Some(i)) {
            joint(doc, c, depth + 1, out);
        }
        if let Some(end) = j.end_site {
            let _ = writeln!(out, "{pad}\tEnd Site");
            let _ = writeln!(out, "{pad}\t{{");
            let _ = writeln!(out, "{pad}\t\tOFFSET {}", fmt_vec(end));
            let _ = writeln!(out, "{pad}\t}}");
        }
        let _ = writeln!(out, "{pad}}}");
    }
    let mut out = String::from("HIERARCHY\n");
    for r in doc.children(None) {
        joint(doc, r, 0, &mut out);
    }
    let _ = writeln!(out, "MOTION");
    let _ = writeln!(out, "Frames: {}", doc.frames.len());
    let _ = writeln!(out, "Frame Time: {:.7}", doc.frame_time);
    for f in &doc.frames {
        let row: Vec<String> = f.iter().map(|v| fmt_value(*v)).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

struct Tokens<'a> {
    toks: Vec<(&'a str, usize)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let toks = text
            .lines()
            .enumerate()
            .flat_map(|(n, l)| l.split_whitespace().map(move |t| (t, n + 1)))
            .collect();
        Self { toks, pos: 0 }
    }

    fn err(&self, message: impl Into<String>) -> IoError {
        let line = self
            .toks
            .get(self.pos)
            .or(self.toks.last())
            .map_or(0, |t| t.1);
        IoError::BvhParse {
            token: self.pos,
            line,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<&'a str> {
        self.toks.get(self.pos).map(|t| t.0)
    }

    fn next(&mut self) -> Result<&'a str, IoError> {
        let t = self.peek().ok_or_else(|| self.err("unexpected end of file"))?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, want: &str) -> Result<(), IoError> {
        match self.peek() {
            Some(t) if t == want => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => Err(self.err(format!("expected `{want}`, found `{t}`"))),
            None => Err(self.err(format!("expected `{want}`, found end of file"))),
        }
    }

    fn number(&mut self) -> Result<f64, IoError> {
        let t = self.peek().ok_or_else(|| self.err("expected a number"))?;
        let v: f64 = t.parse().map_err(|_| self.err(format!("`{t}` is not a number")))?;
        if !v.is_finite() {
            return Err(self.err("non-finite number"));
        }
        self.pos += 1;
        Ok(v)
    }

    fn count(&mut self) -> Result<usize, IoError> {
        let t = self.peek().ok_or_else(|| self.err("expected a count"))?;
        let v: usize = t.parse().map_err(|_| self.err(format!("`{t}` is not a count")))?;
        self.pos += 1;
        Ok(v)
    }

    fn vec3(&mut self) -> Result<Vec3, IoError> {
        Ok(Vec3::new(self.number()?, self.number()?, self.number()?))
    }
}

fn parse_joint(tk: &mut Tokens<'_>, parent: Option<usize>, joints: &mut Vec<BvhJoint>) -> Result<(), IoError> {
    let name = tk.next()?.to_string();
    tk.expect("{")?;
    tk.expect("OFFSET")?;
    let offset = tk.vec3()?;
    let mut channels = Vec::new();
    if tk.peek() == Some("CHANNELS") {
        tk.pos += 1;
        let n = tk.count()?;
        for _ in 0..n {
            let c = tk.next()?;
            channels.push(BvhChannel::parse(c).ok_or_else(|| {
                tk.pos -= 1;
                tk.err(format!("unknown channel `{c}`"))
            })?);
        }
    }
    let me = joints.len();
    joints.push(BvhJoint {
        name,
        parent,
        offset,
        channels,
        end_site: None,
    });
    loop {
        match tk.peek() {
            Some("JOINT") => {
                tk.pos += 1;
                parse_joint(tk, Some(me), joints)?;
            }
            Some("End") => {
                tk.pos += 1;
                tk.expect("Site")?;
                tk.expect("{")?;
                tk.expect("OFFSET")?;
                let end = tk.vec3()?;
                tk.expect("}")?;
                joints[me].end_site = Some(end);
            }
            Some("}") => {
                tk.pos += 1;
                return Ok(());
            }
            Some(t) => return Err(tk.err(format!("unexpected `{t}` in joint block"))),
            None => return Err(tk.err("unterminated joint block")),
        }
    }
}

pub fn parse_bvh(text: &str) -> Result<BvhDocument, IoError> {
    let mut tk = Tokens::new(text);
    tk.expect("HIERARCHY")?;
    let mut joints = Vec::new();
    while tk.peek() == Some("ROOT") {
        tk.pos += 1;
        parse_joint(&mut tk, None, &mut joints)?;
    }
    if joints.is_empty() {
        return Err(tk.err("expected `ROOT`"));
    }
    tk.expect("MOTION")?;
    tk.expect("Frames:")?;
    let n_frames = tk.count()?;
    tk.expect("Frame")?;
    tk.expect("Time:")?;
    let frame_time = tk.number()?;
    if frame_time <= 0.0 {
        tk.pos -= 1;
        return Err(tk.err("frame time must be positive"));
    }
    let per_frame: usize = joints.iter().map(|j| j.channels.len()).sum();
    let mut frames = Vec::with_capacity(n_frames);
    for _ in 0..n_frames {
        let mut f = Vec::with_capacity(per_frame);
        for _ in 0..per_frame {
            f.push(tk.number()?);
        }
        frames.push(f);
    }
    if tk.peek().is_some() {
        return Err(tk.err("trailing data after the last frame"));
    }
    Ok(BvhDocument {
        joints,
        frame_time,
        frames,
    })
}
