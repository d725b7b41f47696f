//! Takes: recorded bone motion stored as keyframe channels, and timelines
//! that layer takes by override.
//!
//! Keys hold *local* bone poses on a fixed grid `k · sample_period` measured
//! from the start of the take, so sampling at a key time returns the stored
//! value bit-for-bit.
//!
//! Layering: for each bone and property, the topmost take whose interval
//! `[offset, offset + duration]` contains `t` wins. Outside every interval
//! the lowest take carrying the channel supplies the value: rest before it
//! starts, its last key after it ends. Later takes therefore only ever
//! change the output inside their own interval.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Pose, Quat, Vec3};
use crate::rig::{influenced_bones, Armature, BindingSet, PoseState};
use crate::trajectory::{GRID_EPS, MAX_SAMPLE_RATE, MIN_SAMPLE_RATE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TakeError {
    #[error("no device is bound; nothing to record")]
    NoBindings,
    #[error("sample period must give a rate between 30 and 120 Hz, got {0}")]
    InvalidPeriod(f64),
    #[error("sample at t={t} is earlier than the previous one at {prev}")]
    NonMonotonic { t: f64, prev: f64 },
    #[error("take offset must be finite and ≥ 0, got {0}")]
    InvalidOffset(f64),
    #[error("unknown bone `{0}`")]
    UnknownBone(String),
    #[error("invalid take: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    Position,
    Orientation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "property", content = "keys", rename_all = "snake_case")]
pub enum Keys {
    Position(Vec<(f64, Vec3)>),
    Orientation(Vec<(f64, Quat)>),
}

impl Keys {
    pub fn property(&self) -> Property {
        match self {
            Keys::Position(_) => Property::Position,
            Keys::Orientation(_) => Property::Orientation,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Keys::Position(k) => k.len(),
            Keys::Orientation(k) => k.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn times(&self) -> Vec<f64> {
        match self {
            Keys::Position(k) => k.iter().map(|(t, _)| *t).collect(),
            Keys::Orientation(k) => k.iter().map(|(t, _)| *t).collect(),
        }
    }

    pub fn last_time(&self) -> Option<f64> {
        match self {
            Keys::Position(k) => k.last().map(|(t, _)| *t),
            Keys::Orientation(k) => k.last().map(|(t, _)| *t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub bone: String,
    #[serde(flatten)]
    pub keys: Keys,
}

impl Channel {
    pub fn property(&self) -> Property {
        self.keys.property()
    }
}

/// Index `i` with `times[i] ≤ t < times[i + 1]`, or an exact hit.
enum Bracket {
    Exact(usize),
    Between(usize, f64),
    Before,
    After,
}

fn bracket<T>(keys: &[(f64, T)], t: f64) -> Bracket {
    if keys.is_empty() || t < keys[0].0 {
        return Bracket::Before;
    }
    if t > keys[keys.len() - 1].0 {
        return Bracket::After;
    }
    match keys.binary_search_by(|(kt, _)| kt.total_cmp(&t)) {
        Ok(i) => Bracket::Exact(i),
        Err(i) => {
            let (t0, t1) = (keys[i - 1].0, keys[i].0);
            Bracket::Between(i - 1, (t - t0) / (t1 - t0))
        }
    }
}

fn eval_position(keys: &[(f64, Vec3)], t: f64) -> Option<Vec3> {
    match bracket(keys, t) {
        Bracket::Exact(i) => Some(keys[i].1),
        Bracket::Between(i, u) => Some(keys[i].1.lerp(keys[i + 1].1, u)),
        Bracket::Before => keys.first().map(|k| k.1),
        Bracket::After => keys.last().map(|k| k.1),
    }
}

fn eval_orientation(keys: &[(f64, Quat)], t: f64) -> Option<Quat> {
    match bracket(keys, t) {
        Bracket::Exact(i) => Some(keys[i].1),
        Bracket::Between(i, u) => Some(keys[i].1.slerp(keys[i + 1].1, u)),
        Bracket::Before => keys.first().map(|k| k.1),
        Bracket::After => keys.last().map(|k| k.1),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Take {
    pub id: u32,
    pub channels: Vec<Channel>,
    /// Bones this take overrides when layered.
    pub bound_bones: BTreeSet<String>,
    pub duration: f64,
    pub sample_period: f64,
}

impl Take {
    /// Checks the structural invariants (used after deserialization).
    pub fn validate(&self) -> Result<(), TakeError> {
        let mut max_t: f64 = 0.0;
        let mut seen = BTreeSet::new();
        for c in &self.channels {
            if !self.bound_bones.contains(&c.bone) {
                return Err(TakeError::Invalid(format!("channel bone `{}` is not bound", c.bone)));
            }
            if !seen.insert((c.bone.clone(), c.property())) {
                return Err(TakeError::Invalid(format!("duplicate {:?} channel for `{}`", c.property(), c.bone)));
            }
            let times = c.keys.times();
            if times.is_empty() {
                return Err(TakeError::Invalid(format!("empty channel for `{}`", c.bone)));
            }
            for w in times.windows(2) {
                if !(w[1] > w[0]) {
                    return Err(TakeError::Invalid(format!("key times not increasing on `{}`", c.bone)));
                }
            }
            if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
                return Err(TakeError::Invalid(format!("bad key time on `{}`", c.bone)));
            }
            max_t = max_t.max(*times.last().expect("non-empty"));
        }
        if (self.duration - max_t).abs() > GRID_EPS {
            return Err(TakeError::Invalid(format!(
                "duration {} differs from last key time {max_t}",
                self.duration
            )));
        }
        Ok(())
    }

    pub fn channel(&self, bone: &str, property: Property) -> Option<&Channel> {
        self.channels
            .iter()
            .find(|c| c.bone == bone && c.property() == property)
    }

    pub fn position_at(&self, bone: &str, local_t: f64) -> Option<Vec3> {
        match &self.channel(bone, Property::Position)?.keys {
            Keys::Position(k) => eval_position(k, local_t),
            Keys::Orientation(_) => None,
        }
    }

    pub fn orientation_at(&self, bone: &str, local_t: f64) -> Option<Quat> {
        match &self.channel(bone, Property::Orientation)?.keys {
            Keys::Orientation(k) => eval_orientation(k, local_t),
            Keys::Position(_) => None,
        }
    }
}

/// Bones a take records for the current bindings: the bound bones plus
/// every bone the constraint stack moves because of them.
pub fn recorded_bones(armature: &Armature, bindings: &BindingSet) -> Result<BTreeSet<String>, TakeError> {
    if bindings.is_empty() {
        return Err(TakeError::NoBindings);
    }
    let driven = bindings
        .bindings()
        .iter()
        .map(|b| {
            armature
                .bone_index(&b.bone)
                .ok_or_else(|| TakeError::UnknownBone(b.bone.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(influenced_bones(armature, &driven)
        .into_iter()
        .map(|i| armature.bone(i).name.clone())
        .collect())
}

/// Samples solved poses into a take on a fixed grid. Ticks that fall on the
/// grid (within [`GRID_EPS`]) are stored verbatim; grid points between ticks
/// are interpolated from the neighbouring ticks.
#[derive(Debug, Clone)]
pub struct TakeRecorder {
    id: u32,
    bones: Vec<(String, usize)>,
    period: f64,
    begin: f64,
    last_t: f64,
    last_pose: Vec<Pose>,
    next_k: u64,
    positions: Vec<Vec<(f64, Vec3)>>,
    orientations: Vec<Vec<(f64, Quat)>>,
}

impl TakeRecorder {
    /// Starts recording at `clock`; key 0 is taken from `pose`.
    pub fn begin(
        id: u32,
        armature: &Armature,
        bones: &BTreeSet<String>,
        pose: &PoseState,
        clock: f64,
        period: f64,
    ) -> Result<Self, TakeError> {
        if bones.is_empty() {
            return Err(TakeError::NoBindings);
        }
        if !(period.is_finite() && period > 0.0)
            || 1.0 / period < MIN_SAMPLE_RATE - 1e-9
            || 1.0 / period > MAX_SAMPLE_RATE + 1e-9
        {
            return Err(TakeError::InvalidPeriod(period));
        }
        // armature order keeps channel order deterministic and parent-first
        let mut resolved = Vec::new();
        for name in bones {
            let idx = armature
                .bone_index(name)
                .ok_or_else(|| TakeError::UnknownBone(name.clone()))?;
            resolved.push((name.clone(), idx));
        }
        resolved.sort_by_key(|(_, i)| *i);
        let last_pose: Vec<Pose> = resolved.iter().map(|(_, i)| *pose.local(*i)).collect();
        Ok(Self {
            id,
            period,
            begin: clock,
            last_t: clock,
            next_k: 1,
            positions: last_pose.iter().map(|p| vec![(0.0, p.position)]).collect(),
            orientations: last_pose.iter().map(|p| vec![(0.0, p.orientation)]).collect(),
            last_pose,
            bones: resolved,
        })
    }

    pub fn bones(&self) -> impl Iterator<Item = &str> {
        self.bones.iter().map(|(n, _)| n.as_str())
    }

    pub fn key_count(&self) -> usize {
        self.positions.first().map_or(0, Vec::len)
    }

    fn grid_time(&self, k: u64) -> f64 {
        k as f64 * self.period
    }

    fn push_key(&mut self, k: u64, poses: &[Pose]) {
        let t = self.grid_time(k);
        for (i, p) in poses.iter().enumerate() {
            self.positions[i].push((t, p.position));
            self.orientations[i].push((t, p.orientation));
        }
    }

    /// Feeds the solved pose at session time `clock`.
    pub fn sample(&mut self, pose: &PoseState, clock: f64) -> Result<(), TakeError> {
        if clock < self.last_t {
            return Err(TakeError::NonMonotonic {
                t: clock,
                prev: self.last_t,
            });
        }
        let current: Vec<Pose> = self.bones.iter().map(|(_, i)| *pose.local(*i)).collect();
        loop {
            let g = self.begin + self.grid_time(self.next_k);
            if g > clock + GRID_EPS {
                break;
            }
            let key: Vec<Pose> = if (g - clock).abs() <= GRID_EPS {
                current.clone()
            } else {
                let span = clock - self.last_t;
                let u = if span > 0.0 { (g - self.last_t) / span } else { 1.0 };
                self.last_pose
                    .iter()
                    .zip(&current)
                    .map(|(a, b)| Pose::new(a.position.lerp(b.position, u), a.orientation.slerp(b.orientation, u)))
                    .collect()
            };
            let k = self.next_k;
            self.push_key(k, &key);
            self.next_k += 1;
        }
        self.last_t = clock;
        self.last_pose = current;
        Ok(())
    }

    /// Ends the take at `clock`, holding the last pose for any grid points
    /// not yet reached.
    pub fn finish(mut self, clock: f64) -> Result<Take, TakeError> {
        if clock < self.last_t {
            return Err(TakeError::NonMonotonic {
                t: clock,
                prev: self.last_t,
            });
        }
        loop {
            let g = self.begin + self.grid_time(self.next_k);
            if g > clock + GRID_EPS {
                break;
            }
            let hold = self.last_pose.clone();
            let k = self.next_k;
            self.push_key(k, &hold);
            self.next_k += 1;
        }
        let duration = self.grid_time(self.next_k - 1);
        let mut channels = Vec::with_capacity(self.bones.len() * 2);
        for (i, (name, _)) in self.bones.iter().enumerate() {
            channels.push(Channel {
                bone: name.clone(),
                keys: Keys::Position(std::mem::take(&mut self.positions[i])),
            });
            channels.push(Channel {
                bone: name.clone(),
                keys: Keys::Orientation(std::mem::take(&mut self.orientations[i])),
            });
        }
        Ok(Take {
            id: self.id,
            channels,
            bound_bones: self.bones.into_iter().map(|(n, _)| n).collect(),
            duration,
            sample_period: self.period,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub take: Take,
    pub offset: f64,
}

impl TimelineEntry {
    pub fn end(&self) -> f64 {
        self.offset + self.take.duration
    }

    fn covers(&self, t: f64) -> bool {
        t >= self.offset && t <= self.end()
    }
}

/// Takes in layering order; later entries sit on top.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub entries: Vec<TimelineEntry>,
}

impl Timeline {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// End of the last take.
    pub fn duration(&self) -> f64 {
        self.entries.iter().map(TimelineEntry::end).fold(0.0, f64::max)
    }

    /// Every bone with a channel in some take.
    pub fn bones(&self) -> BTreeSet<&str> {
        self.entries
            .iter()
            .flat_map(|e| e.take.channels.iter().map(|c| c.bone.as_str()))
            .collect()
    }
}

/// Appends `take` at `offset` on top of the existing layers.
pub fn layer_takes(timeline: &Timeline, take: Take, offset: f64) -> Result<Timeline, TakeError> {
    if !(offset.is_finite() && offset >= 0.0) {
        return Err(TakeError::InvalidOffset(offset));
    }
    let mut out = timeline.clone();
    out.entries.push(TimelineEntry { take, offset });
    Ok(out)
}

fn layered_value<T>(
    timeline: &Timeline,
    bone: &str,
    property: Property,
    t: f64,
    eval: impl Fn(&Take, f64) -> Option<T>,
) -> Option<T> {
    let carrying = || {
        timeline
            .entries
            .iter()
            .filter(move |e| e.take.channel(bone, property).is_some())
    };
    if let Some(top) = carrying().rfind(|e| e.covers(t)) {
        return eval(&top.take, t - top.offset);
    }
    // only the base take holds past its end; overlays stay inside their interval
    let base = timeline.entries.first()?;
    if t > base.end() && base.take.channel(bone, property).is_some() {
        eval(&base.take, base.take.duration)
    } else {
        None
    }
}

/// Pose of every bone at timeline time `t`: the topmost take covering `t`
/// wins; past the base take's end its last values hold. Bones without a
/// channel keep their rest pose.
pub fn sample_timeline(timeline: &Timeline, armature: &Armature, t: f64) -> PoseState {
    let mut pose = PoseState::rest(armature);
    let bones: BTreeMap<&str, usize> = timeline
        .bones()
        .into_iter()
        .filter_map(|b| armature.bone_index(b).map(|i| (b, i)))
        .collect();
    for (name, idx) in bones {
        let rest = *pose.local(idx);
        let p = layered_value(timeline, name, Property::Position, t, |take, lt| take.position_at(name, lt))
            .unwrap_or(rest.position);
        let q = layered_value(timeline, name, Property::Orientation, t, |take, lt| {
            take.orientation_at(name, lt)
        })
        .unwrap_or(rest.orientation);
        // stored values are already unit; write them untouched
        pose.set_local_raw(idx, Pose::new(p, q));
    }
    pose
}
