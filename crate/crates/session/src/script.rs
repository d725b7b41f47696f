//! Virtual-clock driver: feeds a recorded stream and timed commands through
//! an [`Engine`] without sleeping.

use motionsketch_core::io::StreamSample;
use motionsketch_core::rig::{Armature, BindMode, DeviceId};
use motionsketch_core::takes::Take;
use motionsketch_core::trajectory::{Trajectory, TrajectoryId, GRID_EPS};

use crate::engine::{resolve_jig, Engine, EngineConfig};
use crate::protocol::{Command, CommandMsg, ErrorMsg, JigSpec, RecordKind, Snapshot, WireMessage};
use crate::SessionError;

#[derive(Debug, Clone, PartialEq)]
pub struct TimedCommand {
    pub at: f64,
    pub command: Command,
}

impl TimedCommand {
    pub fn new(at: f64, command: Command) -> Self {
        Self { at, command }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScriptRun {
    /// One ack or error per command, in order; `seq` counts from 1.
    pub replies: Vec<WireMessage>,
    pub snapshots: Vec<Snapshot>,
    pub errors: Vec<ErrorMsg>,
}

/// Queues every sample, then ticks until the clock reaches `until`. Each
/// command is applied between ticks, at the first tick boundary at or after
/// its time; commands left over at the end are applied after the last tick.
pub fn run_script(engine: &mut Engine, samples: &[StreamSample], commands: &[TimedCommand], until: f64) -> ScriptRun {
    for s in samples {
        engine.push_sample(s.clone());
    }
    let mut order: Vec<usize> = (0..commands.len()).collect();
    order.sort_by(|&a, &b| commands[a].at.total_cmp(&commands[b].at));
    let mut pending = order.into_iter().peekable();
    let mut run = ScriptRun::default();
    let mut seq = 0;
    let mut apply_due = |engine: &mut Engine, run: &mut ScriptRun, horizon: f64| {
        while let Some(&i) = pending.peek() {
            if commands[i].at > horizon + GRID_EPS {
                break;
            }
            pending.next();
            seq += 1;
            let msg = CommandMsg {
                seq,
                command: commands[i].command.clone(),
            };
            run.replies.push(engine.handle_command(&msg));
        }
    };
    loop {
        apply_due(engine, &mut run, engine.clock());
        if engine.clock() + GRID_EPS >= until {
            break;
        }
        let out = engine.step();
        run.snapshots.extend(out.snapshot);
        run.errors.extend(out.errors);
    }
    apply_due(engine, &mut run, f64::INFINITY);
    run
}

/// What to capture from a stream.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordPlan {
    pub kind: RecordKind,
    pub bindings: Vec<(DeviceId, String)>,
    pub mode: BindMode,
    /// Applied to every bound device; two-handed jigs take the first two.
    pub jig: Option<JigSpec>,
    /// Traced device for trajectories (default: first bound, then first seen).
    pub device: Option<DeviceId>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Recorded {
    Take(Take),
    Trajectory(Trajectory),
}

fn command_error(reply: &WireMessage) -> Option<SessionError> {
    match reply {
        WireMessage::Error(e) => Some(SessionError::Command {
            code: e.code,
            message: e.message.clone(),
        }),
        _ => None,
    }
}

/// Records a take or trajectory from a whole stream: binds and arms the
/// jigs at t = 0, records from t = 0 to the last sample.
pub fn record_stream(
    armature: &Armature,
    config: EngineConfig,
    samples: &[StreamSample],
    plan: &RecordPlan,
) -> Result<Recorded, SessionError> {
    let until = samples
        .iter()
        .map(|s| s.t)
        .fold(None, |m: Option<f64>, t| Some(m.map_or(t, |m| m.max(t))))
        .ok_or(SessionError::EmptyStream)?;
    let mut commands = Vec::new();
    for (device, bone) in &plan.bindings {
        commands.push(TimedCommand::new(
            0.0,
            Command::Bind {
                device: device.clone(),
                bone: bone.clone(),
                mode: plan.mode,
            },
        ));
    }
    if let Some(spec) = &plan.jig {
        let cfg = resolve_jig(spec).map_err(|e| SessionError::Command {
            code: e.code,
            message: e.message,
        })?;
        let devices: Vec<DeviceId> = plan.bindings.iter().map(|(d, _)| d.clone()).collect();
        let groups: Vec<Vec<DeviceId>> = match cfg.input_count() {
            1 => devices.into_iter().map(|d| vec![d]).collect(),
            n if devices.len() >= n => vec![devices[..n].to_vec()],
            n => return Err(SessionError::Plan(format!("{} jig needs {n} bound devices", cfg.kind()))),
        };
        for g in groups {
            commands.push(TimedCommand::new(
                0.0,
                Command::SetJig {
                    device: g[0].clone(),
                    partner: g.get(1).cloned(),
                    jig: Some(spec.clone()),
                },
            ));
        }
    }
    commands.push(TimedCommand::new(
        0.0,
        Command::RecordStart {
            kind: plan.kind,
            device: plan
                .device
                .clone()
                .or_else(|| plan.bindings.first().map(|(d, _)| d.clone()))
                .or_else(|| samples.first().map(|s| s.device.clone())),
        },
    ));
    commands.push(TimedCommand::new(until, Command::RecordStop { kind: plan.kind }));
    let mut engine = Engine::new(armature.clone(), config);
    let run = run_script(&mut engine, samples, &commands, until);
    if let Some(e) = run.replies.iter().find_map(command_error) {
        return Err(e);
    }
    if let Some(e) = run.errors.first() {
        return Err(SessionError::Tick(e.message.clone()));
    }
    Ok(match plan.kind {
        RecordKind::Take => Recorded::Take(engine.takes().values().next().cloned().expect("take recorded")),
        RecordKind::Trajectory => Recorded::Trajectory(
            engine
                .trajectories()
                .get(&TrajectoryId(1))
                .cloned()
                .expect("trajectory recorded"),
        ),
    })
}
