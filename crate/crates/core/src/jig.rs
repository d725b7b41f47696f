//! Virtual material jigs: dynamical filters applied to a device's pose
//! stream before it reaches the rig.
//!
//! * `Weight`: mass-spring-damper chasing the input (lag and overshoot).
//! * `Pendulum`: a bob hanging from the input on a rigid string.
//! * `Stick`: the input projected onto a fixed polyline.
//! * `Band`: two inputs, each tracked by a unit mass, joined by an elastic
//!   band that only pulls when stretched.
//!
//! All integration uses semi-implicit Euler with substeps of at most
//! [`MAX_SUBSTEP`] seconds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Pose, Vec3};
use crate::io::StreamSample;
use crate::rig::DeviceId;
use crate::trajectory::GRID_EPS;

/// Largest accepted engine step; longer steps are clamped.
pub const MAX_STEP: f64 = 0.05;
/// Largest integrator substep.
pub const MAX_SUBSTEP: f64 = 0.002;
pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JigError {
    #[error("non-finite jig input")]
    NonFiniteInput,
    #[error("time step must be positive and finite, got {0}")]
    InvalidTimeStep(f64),
    #[error("{kind} jig expects {expected} input pose(s), got {got}")]
    WrongInputCount {
        kind: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("settle time is only defined for weight and band jigs")]
    WrongVariant,
    #[error("state does not belong to a {0} jig")]
    StateMismatch(&'static str),
    #[error("invalid jig parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("device `{0}` never appears in the stream")]
    MissingDevice(String),
}

fn default_gravity() -> f64 {
    STANDARD_GRAVITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JigConfig {
    Weight {
        mass: f64,
        stiffness: f64,
        damping: f64,
    },
    Pendulum {
        length: f64,
        #[serde(default = "default_gravity")]
        gravity: f64,
        damping: f64,
    },
    Stick {
        path: Vec<Vec3>,
    },
    Band {
        rest_length: f64,
        stiffness: f64,
        damping: f64,
    },
}

impl JigConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            JigConfig::Weight { .. } => "weight",
            JigConfig::Pendulum { .. } => "pendulum",
            JigConfig::Stick { .. } => "stick",
            JigConfig::Band { .. } => "band",
        }
    }

    pub fn input_count(&self) -> usize {
        match self {
            JigConfig::Band { .. } => 2,
            _ => 1,
        }
    }

    /// Default parameters per kind. These are tuning values, nothing more.
    pub fn preset(kind: &str) -> Option<JigConfig> {
        Some(match kind {
            "weight" => JigConfig::Weight {
                mass: 2.0,
                stiffness: 80.0,
                damping: 20.0,
            },
            "pendulum" => JigConfig::Pendulum {
                length: 0.3,
                gravity: STANDARD_GRAVITY,
                damping: 0.5,
            },
            "stick" => JigConfig::Stick {
                path: vec![Vec3::new(-0.5, 1.0, 0.0), Vec3::new(0.5, 1.0, 0.0)],
            },
            "band" => JigConfig::Band {
                rest_length: 0.4,
                stiffness: 60.0,
                damping: 12.0,
            },
            _ => return None,
        })
    }

    pub const PRESET_KINDS: [&'static str; 4] = ["weight", "pendulum", "stick", "band"];

    pub fn validate(&self) -> Result<(), JigError> {
        let pos = |v: f64, what| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(JigError::InvalidParameter(what))
            }
        };
        let nonneg = |v: f64, what| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(JigError::InvalidParameter(what))
            }
        };
        match self {
            JigConfig::Weight {
                mass,
                stiffness,
                damping,
            } => {
                pos(*mass, "mass")?;
                pos(*stiffness, "stiffness")?;
                nonneg(*damping, "damping")
            }
            JigConfig::Pendulum {
                length,
                gravity,
                damping,
            } => {
                pos(*length, "length")?;
                // zero gravity is allowed: a free bob on a string
                nonneg(*gravity, "gravity")?;
                nonneg(*damping, "damping")
            }
            JigConfig::Stick { path } => {
                if path.len() < 2 || path.iter().any(|p| !p.is_finite()) {
                    Err(JigError::InvalidParameter("stick path needs ≥ 2 finite points"))
                } else {
                    Ok(())
                }
            }
            JigConfig::Band {
                rest_length,
                stiffness,
                damping,
            } => {
                pos(*rest_length, "rest_length")?;
                pos(*stiffness, "stiffness")?;
                nonneg(*damping, "damping")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JigState {
    Weight { position: Vec3, velocity: Vec3 },
    Pendulum { bob: Vec3, velocity: Vec3 },
    Stick { position: Vec3 },
    Band { positions: [Vec3; 2], velocities: [Vec3; 2] },
}

impl JigState {
    /// Resting state for the given inputs: outputs on the inputs, pendulum
    /// hanging straight down.
    pub fn at_rest(config: &JigConfig, inputs: &[Pose]) -> Result<JigState, JigError> {
        check_inputs(config, inputs)?;
        Ok(match config {
            JigConfig::Weight { .. } => JigState::Weight {
                position: inputs[0].position,
                velocity: Vec3::ZERO,
            },
            JigConfig::Pendulum { length, .. } => JigState::Pendulum {
                bob: inputs[0].position - Vec3::Y * *length,
                velocity: Vec3::ZERO,
            },
            JigConfig::Stick { path } => JigState::Stick {
                position: closest_point_on_path(path, inputs[0].position),
            },
            JigConfig::Band { .. } => JigState::Band {
                positions: [inputs[0].position, inputs[1].position],
                velocities: [Vec3::ZERO; 2],
            },
        })
    }

    /// Filtered output positions, one per input.
    pub fn outputs(&self) -> Vec<Vec3> {
        match self {
            JigState::Weight { position, .. } | JigState::Stick { position } => vec![*position],
            JigState::Pendulum { bob, .. } => vec![*bob],
            JigState::Band { positions, .. } => positions.to_vec(),
        }
    }
}

/// One default preset per kind, keyed `<kind>:default`.
pub fn preset_library() -> BTreeMap<String, JigConfig> {
    JigConfig::PRESET_KINDS
        .iter()
        .map(|k| (format!("{k}:default"), JigConfig::preset(k).expect("known kind")))
        .collect()
}

/// Looks up `kind` or `kind:default`.
pub fn preset_by_name(name: &str) -> Option<JigConfig> {
    JigConfig::preset(name.strip_suffix(":default").unwrap_or(name))
}

fn check_inputs(config: &JigConfig, inputs: &[Pose]) -> Result<(), JigError> {
    if inputs.len() != config.input_count() {
        return Err(JigError::WrongInputCount {
            kind: config.kind(),
            expected: config.input_count(),
            got: inputs.len(),
        });
    }
    if inputs.iter().any(|p| !p.is_finite()) {
        return Err(JigError::NonFiniteInput);
    }
    Ok(())
}

/// Closest point on a polyline; ties resolve to the earliest segment.
pub fn closest_point_on_path(path: &[Vec3], p: Vec3) -> Vec3 {
    let mut best = path[0];
    let mut best_d = f64::INFINITY;
    for seg in path.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let ab = b - a;
        let len2 = ab.norm_squared();
        let s = if len2 > 0.0 {
            ((p - a).dot(ab) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let q = a + ab * s;
        let d = (p - q).norm_squared();
        if d < best_d {
            best_d = d;
            best = q;
        }
    }
    best
}

/// Mechanical energy per unit mass of a pendulum bob, zero at the pivot height.
pub fn pendulum_energy(bob: Vec3, velocity: Vec3, pivot: Vec3, gravity: f64) -> f64 {
    0.5 * velocity.norm_squared() + gravity * (bob.y - pivot.y)
}

fn substeps(dt: f64) -> (usize, f64) {
    let n = (dt / MAX_SUBSTEP).ceil().max(1.0) as usize;
    (n, dt / n as f64)
}

fn pendulum_substep(
    bob: &mut Vec3,
    vel: &mut Vec3,
    pivot: Vec3,
    length: f64,
    gravity: f64,
    damping: f64,
    h: f64,
    fixed_pivot: bool,
) {
    let e0 = pendulum_energy(*bob, *vel, pivot, gravity);
    let mut v = (*vel - Vec3::Y * (gravity * h)) / (1.0 + damping * h);
    let predicted = *bob + v * h;
    let dir = (predicted - pivot).try_normalize().unwrap_or(-Vec3::Y);
    let projected = pivot + dir * length;
    v = (projected - *bob) / h;
    if fixed_pivot {
        // Position projection can add a sliver of energy near the turning
        // points; cap kinetic energy so a step never gains energy.
        let budget = e0 - gravity * (projected.y - pivot.y);
        if budget < 0.0 {
            *vel = Vec3::ZERO;
            return;
        }
        let ke = 0.5 * v.norm_squared();
        if ke > budget {
            v = v * (budget / ke).sqrt();
        }
    }
    *bob = projected;
    *vel = v;
}

/// Advances a jig by `dt` (clamped to [`MAX_STEP`]) with the inputs held
/// constant over the step; returns the new state and filtered poses. Output
/// orientations pass through from the inputs.
pub fn jig_step(
    config: &JigConfig,
    state: &JigState,
    inputs: &[Pose],
    dt: f64,
) -> Result<(JigState, Vec<Pose>), JigError> {
    check_inputs(config, inputs)?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(JigError::InvalidTimeStep(dt));
    }
    let (n, h) = substeps(dt.min(MAX_STEP));
    let next = match (config, state) {
        (
            JigConfig::Weight {
                mass,
                stiffness,
                damping,
            },
            JigState::Weight { position, velocity },
        ) => {
            let target = inputs[0].position;
            let (mut x, mut v) = (*position, *velocity);
            for _ in 0..n {
                let accel = ((target - x) * *stiffness - v * *damping) / *mass;
                v += accel * h;
                x += v * h;
            }
            JigState::Weight {
                position: x,
                velocity: v,
            }
        }
        (
            JigConfig::Pendulum {
                length,
                gravity,
                damping,
            },
            JigState::Pendulum { bob, velocity },
        ) => {
            let pivot = inputs[0].position;
            let (mut x, mut v) = (*bob, *velocity);
            // A moved pivot leaves the bob off its sphere; the first substep
            // turns that drag into velocity. After that the pivot is fixed
            // and the energy guard applies.
            for _ in 0..n {
                let fixed = ((x - pivot).norm() - *length).abs() <= 1e-9 * *length;
                pendulum_substep(&mut x, &mut v, pivot, *length, *gravity, *damping, h, fixed);
            }
            JigState::Pendulum { bob: x, velocity: v }
        }
        (JigConfig::Stick { path }, JigState::Stick { .. }) => JigState::Stick {
            position: closest_point_on_path(path, inputs[0].position),
        },
        (
            JigConfig::Band {
                rest_length,
                stiffness,
                damping,
            },
            JigState::Band {
                positions,
                velocities,
            },
        ) => {
            let targets = [inputs[0].position, inputs[1].position];
            let (mut x, mut v) = (*positions, *velocities);
            for _ in 0..n {
                let span = x[1] - x[0];
                let len = span.norm();
                let band = if len > *rest_length {
                    let dir = span / len;
                    let rel_speed = (v[1] - v[0]).dot(dir);
                    dir * (*stiffness * (len - *rest_length) + *damping * rel_speed)
                } else {
                    Vec3::ZERO
                };
                let f0 = (targets[0] - x[0]) * *stiffness - v[0] * *damping + band;
                let f1 = (targets[1] - x[1]) * *stiffness - v[1] * *damping - band;
                v[0] += f0 * h;
                v[1] += f1 * h;
                x[0] += v[0] * h;
                x[1] += v[1] * h;
            }
            JigState::Band {
                positions: x,
                velocities: v,
            }
        }
        _ => return Err(JigError::StateMismatch(config.kind())),
    };
    let outputs = next
        .outputs()
        .into_iter()
        .zip(inputs)
        .map(|(p, input)| Pose::new(p, input.orientation))
        .collect();
    Ok((next, outputs))
}

/// 2 % settling-time estimate `4 / σ` for weight and band jigs (band masses
/// are 1 kg), where σ is the decay rate of the slowest mode: `ζω = c / 2m`
/// up to critical damping, the slow real pole beyond it. Infinite without
/// damping.
pub fn jig_settle_time(config: &JigConfig) -> Result<f64, JigError> {
    let (mass, stiffness, damping) = match config {
        JigConfig::Weight {
            mass,
            stiffness,
            damping,
        } => (*mass, *stiffness, *damping),
        JigConfig::Band {
            stiffness, damping, ..
        } => (1.0, *stiffness, *damping),
        _ => return Err(JigError::WrongVariant),
    };
    if damping <= 0.0 {
        return Ok(f64::INFINITY);
    }
    let disc = damping * damping - 4.0 * stiffness * mass;
    let sigma = if disc <= 0.0 {
        damping / (2.0 * mass)
    } else {
        // (c - √disc) / 2m, written to avoid cancellation
        2.0 * stiffness / (damping + disc.sqrt())
    };
    Ok(4.0 / sigma)
}

/// A jig bound to its running state.
#[derive(Debug, Clone, PartialEq)]
pub struct Jig {
    pub config: JigConfig,
    pub state: Option<JigState>,
}

impl Jig {
    pub fn new(config: JigConfig) -> Result<Self, JigError> {
        config.validate()?;
        Ok(Self {
            config,
            state: None,
        })
    }

    /// Filters one step. The first call (or `dt == 0`) only initializes the
    /// state at rest on the inputs.
    pub fn filter(&mut self, inputs: &[Pose], dt: f64) -> Result<Vec<Pose>, JigError> {
        let state = match &self.state {
            Some(s) if dt > 0.0 => s.clone(),
            Some(s) => {
                return Ok(s
                    .outputs()
                    .into_iter()
                    .zip(inputs)
                    .map(|(p, i)| Pose::new(p, i.orientation))
                    .collect())
            }
            None => {
                let s = JigState::at_rest(&self.config, inputs)?;
                let out = s
                    .outputs()
                    .into_iter()
                    .zip(inputs)
                    .map(|(p, i)| Pose::new(p, i.orientation))
                    .collect();
                self.state = Some(s);
                return Ok(out);
            }
        };
        let (next, out) = jig_step(&self.config, &state, inputs, dt)?;
        self.state = Some(next);
        Ok(out)
    }
}

/// Runs a jig over a recorded stream on the tick grid `k·dt`. Each tick
/// holds the newest sample of every input device at or before it; ticking
/// starts once all `devices` have reported and stops after the last sample.
/// Output rows carry the filtered positions under the input device names.
pub fn simulate_stream(
    config: &JigConfig,
    samples: &[StreamSample],
    devices: &[DeviceId],
    dt: f64,
) -> Result<Vec<StreamSample>, JigError> {
    if devices.len() != config.input_count() {
        return Err(JigError::WrongInputCount {
            kind: config.kind(),
            expected: config.input_count(),
            got: devices.len(),
        });
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(JigError::InvalidTimeStep(dt));
    }
    for d in devices {
        if !samples.iter().any(|s| s.device == *d) {
            return Err(JigError::MissingDevice(d.0.clone()));
        }
    }
    let mut order: Vec<&StreamSample> = samples.iter().filter(|s| devices.contains(&s.device)).collect();
    order.sort_by(|a, b| a.t.total_cmp(&b.t));
    let last = order.last().map_or(0.0, |s| s.t);
    let mut jig = Jig::new(config.clone())?;
    let mut latest: Vec<Option<Pose>> = vec![None; devices.len()];
    let mut next = 0;
    let mut started = false;
    let mut out = Vec::new();
    for k in 0.. {
        let t = k as f64 * dt;
        if t > last + GRID_EPS {
            break;
        }
        while next < order.len() && order[next].t <= t + GRID_EPS {
            let slot = devices.iter().position(|d| *d == order[next].device).expect("filtered above");
            latest[slot] = Some(order[next].pose());
            next += 1;
        }
        let Some(inputs) = latest.iter().copied().collect::<Option<Vec<Pose>>>() else {
            continue;
        };
        let filtered = jig.filter(&inputs, if started { dt } else { 0.0 })?;
        started = true;
        for (d, p) in devices.iter().zip(filtered) {
            out.push(StreamSample {
                t,
                device: d.clone(),
                pos: p.position,
                quat: p.orientation,
            });
        }
    }
    Ok(out)
}
