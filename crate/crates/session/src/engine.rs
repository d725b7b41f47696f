//! The authoritative session state and its fixed-step tick.

use std::collections::BTreeMap;

use motionsketch_core::calibration::{calibrate_four_point, CalibrationProbe, CoordinateMap};
use motionsketch_core::io::StreamSample;
use motionsketch_core::jig::{preset_by_name, Jig, JigConfig};
use motionsketch_core::rig::{
    apply_constraints, bone_tail, fk_world, Armature, BindingSet, DeviceId, PoseState, RigError,
};
use motionsketch_core::takes::{layer_takes, recorded_bones, Take, TakeRecorder, Timeline};
use motionsketch_core::trajectory::{
    record_begin, replay_eval, rotate_traj, translate_traj, zoom_traj, ReplayCursor, Trajectory, TrajectoryId,
    TrajectoryRecorder, DEFAULT_SAMPLE_PERIOD, GRID_EPS, ROTATE_STEP, ZOOM_STEP,
};
use motionsketch_core::{Pose, Quat};

use crate::protocol::{
    Ack, BindingView, BoneView, Command, CommandMsg, CursorView, DeviceView, EditOp, ErrorCode, ErrorMsg, JigSpec,
    JigView, LayerView, Mode, RecordKind, Snapshot, TrajectoryView, WireMessage,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    /// Fixed tick length in seconds.
    pub dt: f64,
    pub snapshot_period: f64,
    /// Grid period for trajectories and takes.
    pub sample_period: f64,
    pub max_devices: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            dt: 1.0 / 60.0,
            snapshot_period: 1.0 / 30.0,
            sample_period: DEFAULT_SAMPLE_PERIOD,
            max_devices: motionsketch_core::rig::DEFAULT_MAX_DEVICES,
        }
    }
}

#[derive(Debug, Clone)]
struct JigSlot {
    devices: Vec<DeviceId>,
    jig: Jig,
}

#[derive(Debug, Clone)]
enum Recording {
    Trajectory { device: DeviceId, rec: TrajectoryRecorder },
    Take(TakeRecorder),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TickOutput {
    pub snapshot: Option<Snapshot>,
    /// Errors raised inside the tick, as `error` messages without `seq`.
    pub errors: Vec<ErrorMsg>,
}

type Reply = Result<Vec<u32>, ErrorMsg>;

fn fail(code: ErrorCode, message: impl Into<String>) -> Reply {
    Err(ErrorMsg::new(None, code, message))
}

pub fn resolve_jig(spec: &JigSpec) -> Result<JigConfig, ErrorMsg> {
    let cfg = match spec {
        JigSpec::Preset(name) => {
            let kind = name.strip_suffix(":default").unwrap_or(name);
            preset_by_name(name)
                .or_else(|| JigConfig::preset(kind))
                .ok_or_else(|| ErrorMsg::new(None, ErrorCode::UnknownId, format!("unknown jig preset `{name}`")))?
        }
        JigSpec::Config(c) => c.clone(),
    };
    cfg.validate()
        .map_err(|e| ErrorMsg::new(None, ErrorCode::MalformedCommand, e.to_string()))?;
    Ok(cfg)
}

/// Session state. All mutation goes through [`Engine::handle_command`],
/// [`Engine::push_sample`] and [`Engine::tick`]; callers serialize them.
#[derive(Debug, Clone)]
pub struct Engine {
    config: EngineConfig,
    armature: Armature,
    pose: PoseState,
    bindings: BindingSet,
    jigs: Vec<JigSlot>,
    trajectories: BTreeMap<TrajectoryId, Trajectory>,
    cursors: Vec<ReplayCursor>,
    takes: BTreeMap<u32, Take>,
    timeline: Timeline,
    calibration: Option<(CoordinateMap, Quat)>,
    clock: f64,
    inbox: Vec<StreamSample>,
    raw: BTreeMap<DeviceId, (f64, Pose)>,
    devices: BTreeMap<DeviceId, Pose>,
    recording: Option<Recording>,
    mode: Mode,
    next_trajectory: u32,
    next_take: u32,
    next_snapshot: f64,
}

impl Engine {
    pub fn new(armature: Armature, config: EngineConfig) -> Self {
        assert!(config.dt > 0.0 && config.dt.is_finite(), "tick length must be positive");
        Self {
            pose: PoseState::rest(&armature),
            bindings: BindingSet::new(config.max_devices),
            armature,
            config,
            jigs: Vec::new(),
            trajectories: BTreeMap::new(),
            cursors: Vec::new(),
            takes: BTreeMap::new(),
            timeline: Timeline::new(),
            calibration: None,
            clock: 0.0,
            inbox: Vec::new(),
            raw: BTreeMap::new(),
            devices: BTreeMap::new(),
            recording: None,
            mode: Mode::Idle,
            next_trajectory: 1,
            next_take: 1,
            next_snapshot: 0.0,
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn armature(&self) -> &Armature {
        &self.armature
    }

    pub fn pose(&self) -> &PoseState {
        &self.pose
    }

    pub fn bindings(&self) -> &BindingSet {
        &self.bindings
    }

    pub fn trajectories(&self) -> &BTreeMap<TrajectoryId, Trajectory> {
        &self.trajectories
    }

    pub fn takes(&self) -> &BTreeMap<u32, Take> {
        &self.takes
    }

    pub fn timeline(&self) -> &Timeline {
        &self.timeline
    }

    pub fn calibration(&self) -> Option<&CoordinateMap> {
        self.calibration.as_ref().map(|(m, _)| m)
    }

    /// Calibrated, jig-filtered device poses as of the last tick.
    pub fn devices(&self) -> &BTreeMap<DeviceId, Pose> {
        &self.devices
    }

    /// Queues a tracker sample; it is applied by the first tick whose clock
    /// reaches its timestamp.
    pub fn push_sample(&mut self, sample: StreamSample) {
        self.inbox.push(sample);
    }

    pub fn pending_samples(&self) -> usize {
        self.inbox.len()
    }

    fn drain_inputs(&mut self) {
        let horizon = self.clock + GRID_EPS;
        let (mut due, rest): (Vec<_>, Vec<_>) = std::mem::take(&mut self.inbox).into_iter().partition(|s| s.t <= horizon);
        self.inbox = rest;
        // stable: equal timestamps keep arrival order
        due.sort_by(|a, b| a.t.total_cmp(&b.t));
        for s in due {
            let stale = self.raw.get(&s.device).is_some_and(|(t, _)| s.t < *t);
            if !stale {
                self.raw.insert(s.device.clone(), (s.t, s.pose()));
            }
        }
    }

    fn calibrated(&self, pose: &Pose) -> Pose {
        match &self.calibration {
            Some((map, q)) => Pose::new(map.map_point(pose.position), (*q * pose.orientation).normalize()),
            None => *pose,
        }
    }

    /// Advances the session by `dt` seconds.
    pub fn tick(&mut self, dt: f64) -> TickOutput {
        let mut out = TickOutput::default();
        if !(dt.is_finite() && dt > 0.0) {
            out.errors
                .push(ErrorMsg::new(None, ErrorCode::Engine, format!("tick length must be positive, got {dt}")));
            return out;
        }
        self.clock += dt;
        self.drain_inputs();

        let mut inputs: BTreeMap<DeviceId, Pose> =
            self.raw.iter().map(|(d, (_, p))| (d.clone(), self.calibrated(p))).collect();

        for slot in &mut self.jigs {
            let Some(poses) = slot.devices.iter().map(|d| inputs.get(d).copied()).collect::<Option<Vec<Pose>>>() else {
                continue;
            };
            match slot.jig.filter(&poses, dt) {
                Ok(filtered) => {
                    for (d, p) in slot.devices.iter().zip(filtered) {
                        inputs.insert(d.clone(), p);
                    }
                }
                Err(e) => out
                    .errors
                    .push(ErrorMsg::new(None, ErrorCode::Engine, format!("jig {}: {e}", slot.jig.config.kind()))),
            }
        }
        self.devices = inputs;

        match self.solve() {
            Ok(()) => {}
            Err(e) => out.errors.push(ErrorMsg::new(None, ErrorCode::Engine, e.to_string())),
        }

        if let Some(err) = self.advance_recording() {
            out.errors.push(err);
        }
        if self.mode == Mode::Replaying && !self.any_cursor_active() {
            self.mode = Mode::Idle;
        }

        if self.clock + GRID_EPS >= self.next_snapshot {
            out.snapshot = Some(self.snapshot());
            self.next_snapshot = self.clock + self.config.snapshot_period;
        }
        out
    }

    /// Runs one fixed-length tick.
    pub fn step(&mut self) -> TickOutput {
        self.tick(self.config.dt)
    }

    fn solve(&mut self) -> Result<(), RigError> {
        let externals = self.bindings.apply_input(&self.armature, &mut self.pose, &self.devices)?;
        self.pose = apply_constraints(&self.armature, &self.pose, &externals)?;
        Ok(())
    }

    fn advance_recording(&mut self) -> Option<ErrorMsg> {
        let clock = self.clock;
        let err = match self.recording.as_mut()? {
            Recording::Trajectory { device, rec } => {
                let pos = self.devices.get(device)?.position;
                rec.sample(pos, clock).err().map(|e| e.to_string())
            }
            Recording::Take(rec) => rec.sample(&self.pose, clock).err().map(|e| e.to_string()),
        };
        err.map(|m| ErrorMsg::new(None, ErrorCode::Engine, m))
    }

    fn any_cursor_active(&self) -> bool {
        self.cursors.iter().any(|c| {
            self.trajectories
                .get(&c.trajectory)
                .is_some_and(|t| c.stopped_at.is_none() && !replay_eval(c, t, self.clock).finished)
        })
    }

    /// Applies one command between ticks. Returns exactly one `ack` or
    /// `error` echoing the command's `seq`.
    pub fn handle_command(&mut self, msg: &CommandMsg) -> WireMessage {
        match self.apply(&msg.command) {
            Ok(ids) => WireMessage::Ack(Ack {
                seq: msg.seq,
                cmd: msg.command.name().to_string(),
                ids,
            }),
            Err(mut e) => {
                e.seq = Some(msg.seq);
                WireMessage::Error(e)
            }
        }
    }

    fn require_mode(&self, allowed: &[Mode], what: &str) -> Result<(), ErrorMsg> {
        if allowed.contains(&self.mode) {
            Ok(())
        } else {
            Err(ErrorMsg::new(
                None,
                ErrorCode::BadMode,
                format!("cannot {what} while {}", mode_name(self.mode)),
            ))
        }
    }

    fn trajectory_ids(&self, ids: &Option<Vec<u32>>) -> Result<Vec<TrajectoryId>, ErrorMsg> {
        match ids {
            None => Ok(self.trajectories.keys().copied().collect()),
            Some(ids) => ids
                .iter()
                .map(|&i| {
                    let id = TrajectoryId(i);
                    if self.trajectories.contains_key(&id) {
                        Ok(id)
                    } else {
                        Err(ErrorMsg::new(None, ErrorCode::UnknownId, format!("no trajectory {i}")))
                    }
                })
                .collect(),
        }
    }

    fn apply(&mut self, cmd: &Command) -> Reply {
        use Mode::*;
        match cmd {
            Command::Bind { device, bone, mode } => {
                self.require_mode(&[Idle, Replaying, RecordingTrajectory], "bind")?;
                if self.armature.bone_index(bone).is_none() {
                    return fail(ErrorCode::UnknownId, format!("unknown bone `{bone}`"));
                }
                let current = self.devices.get(device).copied();
                self.bindings
                    .bind(&self.armature, &self.pose, device.clone(), bone, *mode, current)
                    .map_err(|e| ErrorMsg::new(None, ErrorCode::Rejected, e.to_string()))?;
                Ok(vec![])
            }
            Command::Unbind { device } => {
                self.require_mode(&[Idle, Replaying, RecordingTrajectory], "unbind")?;
                self.bindings
                    .unbind(device)
                    .map_err(|e| ErrorMsg::new(None, ErrorCode::UnknownId, e.to_string()))?;
                Ok(vec![])
            }
            Command::SetJig { device, partner, jig } => {
                let config = jig.as_ref().map(resolve_jig).transpose()?;
                let mut devices = vec![device.clone()];
                devices.extend(partner.iter().cloned());
                if let Some(cfg) = &config {
                    if cfg.input_count() != devices.len() {
                        return fail(
                            ErrorCode::MalformedCommand,
                            format!("{} jig takes {} device(s), got {}", cfg.kind(), cfg.input_count(), devices.len()),
                        );
                    }
                }
                if devices.len() == 2 && devices[0] == devices[1] {
                    return fail(ErrorCode::MalformedCommand, "partner must differ from device");
                }
                self.jigs.retain(|s| !s.devices.iter().any(|d| devices.contains(d)));
                if let Some(cfg) = config {
                    let jig = Jig::new(cfg).map_err(|e| ErrorMsg::new(None, ErrorCode::MalformedCommand, e.to_string()))?;
                    self.jigs.push(JigSlot { devices, jig });
                }
                Ok(vec![])
            }
            Command::RecordStart { kind, device } => {
                self.require_mode(&[Idle], "start recording")?;
                match kind {
                    RecordKind::Trajectory => {
                        let device = match device {
                            Some(d) => d.clone(),
                            None => self
                                .bindings
                                .bindings()
                                .first()
                                .map(|b| b.device.clone())
                                .or_else(|| self.raw.keys().next().cloned())
                                .ok_or_else(|| ErrorMsg::new(None, ErrorCode::UnknownId, "no device to trace"))?,
                        };
                        let id = TrajectoryId(self.next_trajectory);
                        let mut rec = record_begin(id, self.clock, self.config.sample_period)
                            .map_err(|e| ErrorMsg::new(None, ErrorCode::Rejected, e.to_string()))?;
                        if let Some(p) = self.devices.get(&device) {
                            rec.sample(p.position, self.clock)
                                .map_err(|e| ErrorMsg::new(None, ErrorCode::Rejected, e.to_string()))?;
                        }
                        self.next_trajectory += 1;
                        self.recording = Some(Recording::Trajectory { device, rec });
                        self.mode = RecordingTrajectory;
                        Ok(vec![id.0])
                    }
                    RecordKind::Take => {
                        let bones = recorded_bones(&self.armature, &self.bindings)
                            .map_err(|e| ErrorMsg::new(None, ErrorCode::Rejected, e.to_string()))?;
                        let id = self.next_take;
                        let rec = TakeRecorder::begin(
                            id,
                            &self.armature,
                            &bones,
                            &self.pose,
                            self.clock,
                            self.config.sample_period,
                        )
                        .map_err(|e| ErrorMsg::new(None, ErrorCode::Rejected, e.to_string()))?;
                        self.next_take += 1;
                        self.recording = Some(Recording::Take(rec));
                        self.mode = RecordingTake;
                        Ok(vec![id])
                    }
                }
            }
            Command::RecordStop { kind } => {
                let expected = match kind {
                    RecordKind::Trajectory => RecordingTrajectory,
                    RecordKind::Take => RecordingTake,
                };
                self.require_mode(&[expected], "stop this recording")?;
                let recording = self.recording.take().expect("recording mode has a recorder");
                self.mode = Idle;
                match recording {
                    Recording::Trajectory { rec, .. } => {
                        let traj = rec
                            .finish(self.clock)
                            .map_err(|e| ErrorMsg::new(None, ErrorCode::Rejected, e.to_string()))?;
                        let id = traj.id();
                        self.trajectories.insert(id, traj);
                        Ok(vec![id.0])
                    }
                    Recording::Take(rec) => {
                        let take = rec
                            .finish(self.clock)
                            .map_err(|e| ErrorMsg::new(None, ErrorCode::Rejected, e.to_string()))?;
                        let id = take.id;
                        self.takes.insert(id, take);
                        Ok(vec![id])
                    }
                }
            }
            Command::Replay { ids, speed } => {
                self.require_mode(&[Idle, Replaying], "replay")?;
                if !(speed.is_finite() && *speed > 0.0) {
                    return fail(ErrorCode::MalformedCommand, format!("speed must be positive, got {speed}"));
                }
                let ids = self.trajectory_ids(ids)?;
                if ids.is_empty() {
                    return fail(ErrorCode::Rejected, "no trajectories to replay");
                }
                self.cursors = ids
                    .iter()
                    .map(|&id| ReplayCursor::new(id, self.clock, *speed).expect("speed checked"))
                    .collect();
                self.mode = Replaying;
                Ok(ids.into_iter().map(|i| i.0).collect())
            }
            Command::Stop => {
                self.require_mode(&[Idle, Replaying], "stop replay")?;
                for c in &mut self.cursors {
                    c.stopped_at.get_or_insert(self.clock);
                }
                self.mode = Idle;
                Ok(vec![])
            }
            Command::Edit { ids, op } => {
                self.require_mode(&[Idle, Replaying], "edit")?;
                let ids = self.trajectory_ids(ids)?;
                let edit = |t: &Trajectory| -> Result<Trajectory, ErrorMsg> {
                    match op {
                        EditOp::Translate { delta } => {
                            if !delta.is_finite() {
                                return Err(ErrorMsg::new(None, ErrorCode::MalformedCommand, "non-finite delta"));
                            }
                            Ok(translate_traj(t, *delta))
                        }
                        EditOp::Rotate { axis, angle, taps } => {
                            let a = match (angle, taps) {
                                (Some(a), None) if a.is_finite() => *a,
                                (None, Some(n)) => *n as f64 * ROTATE_STEP,
                                _ => {
                                    return Err(ErrorMsg::new(
                                        None,
                                        ErrorCode::MalformedCommand,
                                        "rotate needs exactly one of a finite `angle` or `taps`",
                                    ))
                                }
                            };
                            Ok(rotate_traj(t, *axis, a))
                        }
                        EditOp::Zoom { factor, taps } => {
                            let f = match (factor, taps) {
                                (Some(f), None) => *f,
                                (None, Some(n)) => ZOOM_STEP.powi(*n),
                                _ => {
                                    return Err(ErrorMsg::new(
                                        None,
                                        ErrorCode::MalformedCommand,
                                        "zoom needs exactly one of `factor` or `taps`",
                                    ))
                                }
                            };
                            zoom_traj(t, f).map_err(|e| ErrorMsg::new(None, ErrorCode::MalformedCommand, e.to_string()))
                        }
                    }
                };
                // all or nothing
                let edited = ids
                    .iter()
                    .map(|id| edit(&self.trajectories[id]))
                    .collect::<Result<Vec<_>, _>>()?;
                for t in edited {
                    self.trajectories.insert(t.id(), t);
                }
                Ok(ids.into_iter().map(|i| i.0).collect())
            }
            Command::Layer { take, offset } => {
                let t = self
                    .takes
                    .get(take)
                    .ok_or_else(|| ErrorMsg::new(None, ErrorCode::UnknownId, format!("no take {take}")))?;
                self.timeline = layer_takes(&self.timeline, t.clone(), *offset)
                    .map_err(|e| ErrorMsg::new(None, ErrorCode::MalformedCommand, e.to_string()))?;
                Ok(vec![*take])
            }
            Command::Calibrate { readings, t } => {
                self.require_mode(&[Idle], "calibrate")?;
                if !(t.is_finite() && *t > 0.0) || readings.iter().any(|r| !r.is_finite()) {
                    return fail(ErrorCode::MalformedCommand, "readings and spacing must be finite, spacing positive");
                }
                let map = calibrate_four_point(&CalibrationProbe::new(*readings, *t))
                    .map_err(|e| ErrorMsg::new(None, ErrorCode::Rejected, e.to_string()))?;
                // orientations follow the rotation part of the fitted similarity
                let q = map
                    .to_similarity()
                    .map(|s| Quat::from_mat3(s.rotation()))
                    .unwrap_or(Quat::IDENTITY);
                self.calibration = Some((map, q));
                Ok(vec![])
            }
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        let world = fk_world(&self.armature, &self.pose);
        let bones = self
            .armature
            .bones()
            .iter()
            .zip(&world)
            .map(|(b, w)| BoneView {
                name: b.name.clone(),
                head: w.position,
                tail: bone_tail(w, b.length),
                q: w.orientation,
            })
            .collect();
        let cursors = if self.mode == Mode::Replaying {
            self.cursors
                .iter()
                .filter_map(|c| {
                    let traj = self.trajectories.get(&c.trajectory)?;
                    if !c.is_active(traj, self.clock) {
                        return None;
                    }
                    let f = replay_eval(c, traj, self.clock);
                    Some(CursorView {
                        id: c.trajectory.0,
                        p: f.pos,
                        visible: f.visible.collect(),
                        speed: c.speed,
                    })
                })
                .collect()
        } else {
            Vec::new()
        };
        Snapshot {
            clock: self.clock,
            mode: self.mode,
            bones,
            bindings: self
                .bindings
                .bindings()
                .iter()
                .map(|b| BindingView {
                    device: b.device.clone(),
                    bone: b.bone.clone(),
                    mode: b.mode,
                })
                .collect(),
            devices: self
                .devices
                .iter()
                .map(|(d, p)| DeviceView {
                    device: d.clone(),
                    p: p.position,
                    q: p.orientation,
                })
                .collect(),
            cursors,
            jigs: self
                .jigs
                .iter()
                .map(|s| JigView {
                    kind: s.jig.config.kind().to_string(),
                    devices: s.devices.clone(),
                    outputs: s.jig.state.as_ref().map(|st| st.outputs()).unwrap_or_default(),
                })
                .collect(),
            trajectories: self
                .trajectories
                .values()
                .map(|t| TrajectoryView {
                    id: t.id().0,
                    points: t.waypoints().iter().map(|w| w.pos).collect(),
                })
                .collect(),
            takes: self.takes.keys().copied().collect(),
            timeline: self
                .timeline
                .entries
                .iter()
                .map(|e| LayerView {
                    take: e.take.id,
                    offset: e.offset,
                    end: e.end(),
                })
                .collect(),
            calibrated: self.calibration.is_some(),
        }
    }
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Idle => "idle",
        Mode::RecordingTrajectory => "recording a trajectory",
        Mode::RecordingTake => "recording a take",
        Mode::Replaying => "replaying",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use motionsketch_core::rig::presets;
    use motionsketch_core::Vec3;

    fn cmd(seq: u64, command: Command) -> CommandMsg {
        CommandMsg { seq, command }
    }

    fn sample(t: f64, device: &str, p: Vec3) -> StreamSample {
        StreamSample {
            t,
            device: device.into(),
            pos: p,
            quat: Quat::IDENTITY,
        }
    }

    fn code(reply: &WireMessage) -> Option<ErrorCode> {
        match reply {
            WireMessage::Error(e) => Some(e.code),
            _ => None,
        }
    }

    #[test]
    fn idle_tick_only_moves_clock() {
        let arm = presets::legs();
        let mut e = Engine::new(arm.clone(), EngineConfig::default());
        let before = e.snapshot();
        let out = e.step();
        assert!(out.errors.is_empty());
        let snap = out.snapshot.unwrap();
        assert_eq!(snap.mode, Mode::Idle);
        assert!((snap.clock - 1.0 / 60.0).abs() < 1e-15);
        for (a, b) in snap.bones.iter().zip(&before.bones) {
            assert!(a.head.distance(b.head) < 1e-12 && a.tail.distance(b.tail) < 1e-12, "{}", a.name);
            assert!(a.q.angle_to(b.q) < 1e-12, "{}", a.name);
        }
    }

    #[test]
    fn snapshots_are_rate_limited() {
        let mut e = Engine::new(presets::legs(), EngineConfig::default());
        let n = (0..60).filter(|_| e.step().snapshot.is_some()).count();
        assert_eq!(n, 30);
    }

    #[test]
    fn record_start_guards() {
        let mut e = Engine::new(presets::legs(), EngineConfig::default());
        e.handle_command(&cmd(
            1,
            Command::Bind {
                device: "ctrl1".into(),
                bone: "ankle_L.ik".into(),
                mode: Default::default(),
            },
        ));
        let r = e.handle_command(&cmd(2, Command::RecordStart { kind: RecordKind::Take, device: None }));
        assert!(matches!(r, WireMessage::Ack(Ack { seq: 2, ref ids, .. }) if ids == &[1]));
        assert_eq!(e.mode(), Mode::RecordingTake);
        let r = e.handle_command(&cmd(3, Command::RecordStart { kind: RecordKind::Take, device: None }));
        assert_eq!(code(&r), Some(ErrorCode::BadMode));
        let r = e.handle_command(&cmd(
            4,
            Command::Edit {
                ids: None,
                op: EditOp::Translate { delta: Vec3::X },
            },
        ));
        assert_eq!(code(&r), Some(ErrorCode::BadMode));
        for _ in 0..30 {
            e.step();
        }
        let r = e.handle_command(&cmd(5, Command::RecordStop { kind: RecordKind::Take }));
        assert!(matches!(r, WireMessage::Ack(Ack { seq: 5, .. })));
        assert_eq!(e.takes()[&1].channels[0].keys.len(), 31);
    }

    #[test]
    fn zoom_by_negative_factor_is_malformed() {
        let mut e = Engine::new(presets::simple_abstract(), EngineConfig::default());
        e.push_sample(sample(0.0, "a", Vec3::ZERO));
        e.step();
        e.handle_command(&cmd(2, Command::RecordStart { kind: RecordKind::Trajectory, device: None }));
        for k in 0..20 {
            e.push_sample(sample(e.clock() + 1.0 / 60.0, "a", Vec3::new(k as f64 * 0.01, 0.0, 0.0)));
            e.step();
        }
        let r = e.handle_command(&cmd(3, Command::RecordStop { kind: RecordKind::Trajectory }));
        assert!(matches!(r, WireMessage::Ack(Ack { ref ids, .. }) if ids == &[1]), "{r:?}");
        let before = e.trajectories().clone();
        let r = e.handle_command(&cmd(
            4,
            Command::Edit {
                ids: None,
                op: EditOp::Zoom {
                    factor: Some(-1.0),
                    taps: None,
                },
            },
        ));
        assert_eq!(code(&r), Some(ErrorCode::MalformedCommand));
        assert_eq!(e.trajectories(), &before);
    }

    #[test]
    fn unknown_ids_are_reported() {
        let mut e = Engine::new(presets::legs(), EngineConfig::default());
        let r = e.handle_command(&cmd(1, Command::Layer { take: 9, offset: 0.0 }));
        assert_eq!(code(&r), Some(ErrorCode::UnknownId));
        let r = e.handle_command(&cmd(
            2,
            Command::Bind {
                device: "a".into(),
                bone: "tail".into(),
                mode: Default::default(),
            },
        ));
        assert_eq!(code(&r), Some(ErrorCode::UnknownId));
        let r = e.handle_command(&cmd(3, Command::Unbind { device: "a".into() }));
        assert_eq!(code(&r), Some(ErrorCode::UnknownId));
        let r = e.handle_command(&cmd(
            4,
            Command::Replay {
                ids: Some(vec![3]),
                speed: 1.0,
            },
        ));
        assert_eq!(code(&r), Some(ErrorCode::UnknownId));
        let r = e.handle_command(&cmd(
            5,
            Command::SetJig {
                device: "a".into(),
                partner: None,
                jig: Some(JigSpec::Preset("trampoline".into())),
            },
        ));
        assert_eq!(code(&r), Some(ErrorCode::UnknownId));
    }

    #[test]
    fn two_bindings_show_in_snapshot() {
        let mut e = Engine::new(presets::legs(), EngineConfig::default());
        for (i, (d, b)) in [("ctrl1", "ankle_L.ik"), ("ctrl2", "ankle_R.ik")].into_iter().enumerate() {
            let r = e.handle_command(&cmd(
                i as u64,
                Command::Bind {
                    device: d.into(),
                    bone: b.into(),
                    mode: Default::default(),
                },
            ));
            assert!(matches!(r, WireMessage::Ack(_)));
        }
        let s = e.snapshot();
        assert_eq!(s.bindings.len(), 2);
        assert_eq!(s.bindings[1].bone, "ankle_R.ik");
    }

    #[test]
    fn samples_wait_for_their_tick() {
        let mut e = Engine::new(presets::simple_abstract(), EngineConfig::default());
        e.push_sample(sample(0.05, "a", Vec3::X));
        e.step();
        e.step();
        assert!(e.devices().is_empty());
        assert_eq!(e.pending_samples(), 1);
        e.step();
        assert_eq!(e.devices()[&DeviceId::from("a")].position, Vec3::X);
    }

    #[test]
    fn calibration_maps_device_positions() {
        let mut e = Engine::new(presets::simple_abstract(), EngineConfig::default());
        let shift = Vec3::new(1.0, 2.0, 3.0);
        let readings = motionsketch_core::calibration::cube_positions(0.1).map(|c| c + shift);
        let r = e.handle_command(&cmd(1, Command::Calibrate { readings, t: 0.1 }));
        assert!(matches!(r, WireMessage::Ack(_)));
        e.push_sample(sample(0.0, "a", shift + Vec3::Y));
        e.step();
        assert!(e.devices()[&DeviceId::from("a")].position.distance(Vec3::Y) < 1e-12);
        let degenerate = [Vec3::ZERO; 4];
        let r = e.handle_command(&cmd(2, Command::Calibrate { readings: degenerate, t: 0.1 }));
        assert_eq!(code(&r), Some(ErrorCode::Rejected));
    }
}
