//! Sketched trajectories: fixed-rate recording, rigid/zoom edits, replay
//! with a look-ahead window, and layered replay of many trajectories.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Quat, Vec3};

/// Default recording period (60 Hz).
pub const DEFAULT_SAMPLE_PERIOD: f64 = 1.0 / 60.0;
/// Slowest/fastest accepted recording rates, in Hz.
pub const MIN_SAMPLE_RATE: f64 = 30.0;
pub const MAX_SAMPLE_RATE: f64 = 120.0;
/// Number of waypoints shown ahead of the replay cursor.
pub const DEFAULT_REPLAY_WINDOW: usize = 5;
/// Rotation applied by one UI tap, radians (5°).
pub const ROTATE_STEP: f64 = 5.0 * std::f64::consts::PI / 180.0;
/// Zoom factor applied by one UI tap.
pub const ZOOM_STEP: f64 = 1.1;

// Absorbs accumulated clock rounding when counting grid points.
pub const GRID_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("recording kept {0} waypoint(s); at least 2 are required")]
    TooShort(usize),
    #[error("sample at t={t} is not after the previous sample (t={prev})")]
    NonMonotonic { t: f64, prev: f64 },
    #[error("non-finite sample")]
    NonFinite,
    #[error("zoom factor must be positive and finite, got {0}")]
    NonPositiveFactor(f64),
    #[error("sample period {0} s is outside the supported 30 to 120 Hz range")]
    InvalidPeriod(f64),
    #[error("replay speed must be positive, got {0}")]
    InvalidSpeed(f64),
    #[error("replay window must be at least 1")]
    InvalidWindow,
    #[error("trajectory invariant violated: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrajectoryId(pub u32);

impl fmt::Display for TrajectoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    #[serde(rename = "p")]
    pub pos: Vec3,
    #[serde(rename = "t")]
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    id: TrajectoryId,
    waypoints: Vec<Waypoint>,
    sample_period: f64,
}

impl Trajectory {
    /// Validates the fixed-rate, strictly increasing invariants.
    pub fn new(
        id: TrajectoryId,
        sample_period: f64,
        waypoints: Vec<Waypoint>,
    ) -> Result<Self, TrajectoryError> {
        if waypoints.len() < 2 {
            return Err(TrajectoryError::TooShort(waypoints.len()));
        }
        if !(sample_period.is_finite() && sample_period > 0.0) {
            return Err(TrajectoryError::InvalidPeriod(sample_period));
        }
        for w in &waypoints {
            if !w.pos.is_finite() || !w.time.is_finite() || w.time < 0.0 {
                return Err(TrajectoryError::NonFinite);
            }
        }
        for pair in waypoints.windows(2) {
            let gap = pair[1].time - pair[0].time;
            if gap <= 0.0 {
                return Err(TrajectoryError::NonMonotonic {
                    t: pair[1].time,
                    prev: pair[0].time,
                });
            }
            if (gap - sample_period).abs() > 1e-6 {
                return Err(TrajectoryError::Invalid(format!(
                    "gap {gap} differs from sample period {sample_period}"
                )));
            }
        }
        Ok(Self {
            id,
            waypoints,
            sample_period,
        })
    }

    pub fn id(&self) -> TrajectoryId {
        self.id
    }

    pub fn with_id(mut self, id: TrajectoryId) -> Self {
        self.id = id;
        self
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn start_time(&self) -> f64 {
        self.waypoints[0].time
    }

    pub fn duration(&self) -> f64 {
        self.waypoints[self.waypoints.len() - 1].time - self.waypoints[0].time
    }

    pub fn centroid(&self) -> Vec3 {
        Vec3::centroid(self.waypoints.iter().map(|w| &w.pos))
    }

    pub fn arc_length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| w[0].pos.distance(w[1].pos))
            .sum()
    }

    fn map_positions(&self, f: impl Fn(Vec3) -> Vec3) -> Trajectory {
        Trajectory {
            id: self.id,
            sample_period: self.sample_period,
            waypoints: self
                .waypoints
                .iter()
                .map(|w| Waypoint {
                    pos: f(w.pos),
                    time: w.time,
                })
                .collect(),
        }
    }

    /// Position at `local` seconds after the first waypoint, clamped to the ends.
    pub fn position_at(&self, local: f64) -> Vec3 {
        let t0 = self.start_time();
        let wps = &self.waypoints;
        if local <= 0.0 {
            return wps[0].pos;
        }
        if local >= self.duration() {
            return wps[wps.len() - 1].pos;
        }
        // first waypoint strictly after `local`
        let hi = wps.partition_point(|w| w.time - t0 <= local);
        let lo = hi - 1;
        let (a, b) = (wps[lo], wps[hi]);
        let span = b.time - a.time;
        a.pos.lerp(b.pos, (local - (a.time - t0)) / span)
    }
}

/// Accumulates raw samples and resamples them onto the fixed time grid
/// `begin + k·period` by linear interpolation.
#[derive(Debug, Clone)]
pub struct TrajectoryRecorder {
    id: TrajectoryId,
    begin: f64,
    period: f64,
    last: Option<(Vec3, f64)>,
    waypoints: Vec<Waypoint>,
}

impl TrajectoryRecorder {
    pub fn next_grid_time(&self) -> f64 {
        self.begin + self.waypoints.len() as f64 * self.period
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn id(&self) -> TrajectoryId {
        self.id
    }

    fn push_until(&mut self, t: f64, pos_at: impl Fn(f64) -> Vec3) {
        loop {
            let g = self.next_grid_time();
            if g > t + GRID_EPS {
                break;
            }
            self.waypoints.push(Waypoint {
                pos: pos_at(g),
                time: g,
            });
        }
    }

    pub fn sample(&mut self, pos: Vec3, t: f64) -> Result<(), TrajectoryError> {
        if !pos.is_finite() || !t.is_finite() {
            return Err(TrajectoryError::NonFinite);
        }
        match self.last {
            Some((_, prev)) if t <= prev => {
                return Err(TrajectoryError::NonMonotonic { t, prev });
            }
            None if t < self.begin - GRID_EPS => {
                return Err(TrajectoryError::NonMonotonic {
                    t,
                    prev: self.begin,
                });
            }
            _ => {}
        }
        let last = self.last;
        self.push_until(t, |g| match last {
            Some((p0, t0)) => {
                let u = ((g - t0) / (t - t0)).clamp(0.0, 1.0);
                p0.lerp(pos, u)
            }
            None => pos,
        });
        self.last = Some((pos, t));
        Ok(())
    }

    pub fn finish(mut self, t_end: f64) -> Result<Trajectory, TrajectoryError> {
        let Some((last_pos, _)) = self.last else {
            return Err(TrajectoryError::TooShort(0));
        };
        self.push_until(t_end, |_| last_pos);
        let count = self.waypoints.len();
        if count < 2 {
            return Err(TrajectoryError::TooShort(count));
        }
        Trajectory::new(self.id, self.period, self.waypoints)
    }
}

pub fn record_begin(
    id: TrajectoryId,
    clock_t: f64,
    sample_period: f64,
) -> Result<TrajectoryRecorder, TrajectoryError> {
    let rate = 1.0 / sample_period;
    if !(rate.is_finite() && (MIN_SAMPLE_RATE - 1e-9..=MAX_SAMPLE_RATE + 1e-9).contains(&rate)) {
        return Err(TrajectoryError::InvalidPeriod(sample_period));
    }
    if !clock_t.is_finite() || clock_t < 0.0 {
        return Err(TrajectoryError::NonFinite);
    }
    Ok(TrajectoryRecorder {
        id,
        begin: clock_t,
        period: sample_period,
        last: None,
        waypoints: Vec::new(),
    })
}

pub fn record_sample(
    rec: &mut TrajectoryRecorder,
    pos: Vec3,
    clock_t: f64,
) -> Result<(), TrajectoryError> {
    rec.sample(pos, clock_t)
}

pub fn record_end(rec: TrajectoryRecorder, clock_t: f64) -> Result<Trajectory, TrajectoryError> {
    rec.finish(clock_t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    #[serde(alias = "X")]
    X,
    #[serde(alias = "Y")]
    Y,
    #[serde(alias = "Z")]
    Z,
}

impl Axis {
    pub fn unit(self) -> Vec3 {
        match self {
            Axis::X => Vec3::X,
            Axis::Y => Vec3::Y,
            Axis::Z => Vec3::Z,
        }
    }
}

pub fn translate_traj(traj: &Trajectory, delta: Vec3) -> Trajectory {
    traj.map_positions(|p| p + delta)
}

/// Rotates every waypoint about the centroid around a world axis.
pub fn rotate_traj(traj: &Trajectory, axis: Axis, angle: f64) -> Trajectory {
    let c = traj.centroid();
    let q = Quat::from_axis_angle(axis.unit(), angle);
    traj.map_positions(|p| c + q.rotate(p - c))
}

pub fn zoom_traj(traj: &Trajectory, factor: f64) -> Result<Trajectory, TrajectoryError> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(TrajectoryError::NonPositiveFactor(factor));
    }
    let c = traj.centroid();
    Ok(traj.map_positions(|p| c + (p - c) * factor))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayCursor {
    pub trajectory: TrajectoryId,
    pub start_time: f64,
    pub speed: f64,
    pub window: usize,
    /// Session time at which the operator stopped this replay, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopped_at: Option<f64>,
}

impl ReplayCursor {
    pub fn new(trajectory: TrajectoryId, start_time: f64, speed: f64) -> Result<Self, TrajectoryError> {
        Self::with_window(trajectory, start_time, speed, DEFAULT_REPLAY_WINDOW)
    }

    pub fn with_window(
        trajectory: TrajectoryId,
        start_time: f64,
        speed: f64,
        window: usize,
    ) -> Result<Self, TrajectoryError> {
        if !(speed.is_finite() && speed > 0.0) {
            return Err(TrajectoryError::InvalidSpeed(speed));
        }
        if window == 0 {
            return Err(TrajectoryError::InvalidWindow);
        }
        Ok(Self {
            trajectory,
            start_time,
            speed,
            window,
            stopped_at: None,
        })
    }

    /// Session time at which replay of `traj` completes.
    pub fn end_time(&self, traj: &Trajectory) -> f64 {
        self.start_time + traj.duration() / self.speed
    }

    pub fn is_active(&self, traj: &Trajectory, clock_t: f64) -> bool {
        let stopped = self.stopped_at.is_some_and(|s| clock_t >= s);
        clock_t >= self.start_time && !stopped && !replay_eval(self, traj, clock_t).finished
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayFrame {
    pub pos: Vec3,
    /// Waypoint indices drawn opaque: those not yet passed, at most `window`.
    pub visible: Range<usize>,
    pub finished: bool,
}

pub fn replay_eval(cursor: &ReplayCursor, traj: &Trajectory, clock_t: f64) -> ReplayFrame {
    let u = ((clock_t - cursor.start_time) * cursor.speed).max(0.0);
    let duration = traj.duration();
    let n = traj.len();
    if u >= duration {
        return ReplayFrame {
            pos: traj.waypoints[n - 1].pos,
            visible: n..n,
            finished: true,
        };
    }
    let t0 = traj.start_time();
    let first = traj.waypoints.partition_point(|w| w.time - t0 < u);
    ReplayFrame {
        pos: traj.position_at(u),
        visible: first..(first + cursor.window).min(n),
        finished: false,
    }
}

/// Replay of `traj` from session time 0 sampled every `period`: rows
/// `(k·period, position)` while before the end, then one final row at
/// exactly `duration / speed` on the last waypoint.
pub fn replay_samples(traj: &Trajectory, speed: f64, period: f64) -> Result<Vec<(f64, Vec3)>, TrajectoryError> {
    if !(period.is_finite() && period > 0.0) {
        return Err(TrajectoryError::Invalid(format!("output period must be positive, got {period}")));
    }
    let cursor = ReplayCursor::new(traj.id(), 0.0, speed)?;
    let end = cursor.end_time(traj);
    let mut rows = Vec::new();
    for k in 0.. {
        let t = k as f64 * period;
        if t >= end - GRID_EPS {
            break;
        }
        rows.push((t, replay_eval(&cursor, traj, t).pos));
    }
    rows.push((end, traj.waypoints[traj.len() - 1].pos));
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSample {
    pub id: TrajectoryId,
    pub pos: Vec3,
    pub visible: Range<usize>,
}

/// Evaluates every cursor active at `clock_t`, each independently of the others.
pub fn layered_eval(
    cursors: &[ReplayCursor],
    trajectories: &BTreeMap<TrajectoryId, Trajectory>,
    clock_t: f64,
) -> Vec<LayerSample> {
    cursors
        .iter()
        .filter_map(|c| {
            let traj = trajectories.get(&c.trajectory)?;
            if !c.is_active(traj, clock_t) {
                return None;
            }
            let f = replay_eval(c, traj, clock_t);
            Some(LayerSample {
                id: c.trajectory,
                pos: f.pos,
                visible: f.visible,
            })
        })
        .collect()
}

pub fn layered_schedule(
    cursors: &[ReplayCursor],
    trajectories: &BTreeMap<TrajectoryId, Trajectory>,
    ticks: impl IntoIterator<Item = f64>,
) -> Vec<Vec<LayerSample>> {
    ticks
        .into_iter()
        .map(|t| layered_eval(cursors, trajectories, t))
        .collect()
}
