//! Acceptance run: one PASS/FAIL line per headline criterion. Exits nonzero
//! if any line fails.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use motionsketch_core::calibration::{
    calibrate_four_point, cube_positions, fit_similarity_lsq, residual_rmse, CalibrationProbe, CorrespondenceSet,
};
use motionsketch_core::io::{
    bvh_world_positions, export_bvh, parse_bvh, read_stream_csv, write_bvh, write_stream_csv, StreamSample,
};
use motionsketch_core::jig::{
    closest_point_on_path, jig_settle_time, jig_step, pendulum_energy, JigConfig, JigState,
};
use motionsketch_core::rig::{
    fk_world, presets, solve_ik_fabrik, solve_ik_two_bone, Armature, BindMode, Bone, Constraint, DeviceId,
};
use motionsketch_core::takes::{layer_takes, sample_timeline, Channel, Keys, Take, Timeline};
use motionsketch_core::trajectory::{
    replay_eval, rotate_traj, translate_traj, zoom_traj, Axis, ReplayCursor, Trajectory, TrajectoryId, Waypoint,
};
use motionsketch_core::{Pose, Quat, SimilarityTransform, Vec3};
use motionsketch_session::protocol::{JigSpec, RecordKind};
use motionsketch_session::{
    record_stream, run_script, Command, CommandMsg, Engine, EngineConfig, Mode, RecordPlan, Recorded, TimedCommand,
    WireMessage,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

type Check = (bool, String);

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rvec(r: &mut ChaCha8Rng, half: f64) -> Vec3 {
    Vec3::new(
        r.random_range(-half..half),
        r.random_range(-half..half),
        r.random_range(-half..half),
    )
}

fn rdir(r: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(r.sample(StandardNormal), r.sample(StandardNormal), r.sample(StandardNormal));
        if let Some(u) = v.try_normalize() {
            return u;
        }
    }
}

fn rquat(r: &mut ChaCha8Rng) -> Quat {
    loop {
        let q = Quat::new(
            r.sample(StandardNormal),
            r.sample(StandardNormal),
            r.sample(StandardNormal),
            r.sample(StandardNormal),
        );
        if q.dot(q) > 1e-6 {
            return q.normalize();
        }
    }
}

fn rsimilarity(r: &mut ChaCha8Rng) -> SimilarityTransform {
    let k = r.random_range(0.5..3.0);
    let q = rquat(r);
    let b = rvec(r, 2.0);
    SimilarityTransform::from_parts(k, q, b).unwrap()
}

fn rtrajectory(r: &mut ChaCha8Rng, id: u32) -> Trajectory {
    let n = r.random_range(2..120);
    let period = 1.0 / 60.0;
    let t0 = r.random_range(0.0..10.0);
    let wps = (0..n)
        .map(|i| Waypoint {
            pos: rvec(r, 2.0),
            time: t0 + i as f64 * period,
        })
        .collect();
    Trajectory::new(TrajectoryId(id), period, wps).unwrap()
}

fn calibration() -> Check {
    let started = Instant::now();
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let t = rsimilarity(&mut r);
        let readings = cube_positions(0.1).map(|c| t.invert().apply(c));
        let map = calibrate_four_point(&CalibrationProbe::new(readings, 0.1)).unwrap();
        for _ in 0..100 {
            let p = rvec(&mut r, 2.0);
            worst = worst.max(map.map_point(p).distance(t.apply(p)));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    (
        worst < 1e-9 && secs < 5.0,
        format!("1000 transforms x 100 points, max error {worst:.2e} m, {secs:.3} s"),
    )
}

fn lsq() -> Check {
    let mut r = rng(2);
    let mut noiseless: f64 = 0.0;
    for _ in 0..100 {
        let t = rsimilarity(&mut r);
        let pairs: Vec<_> = (0..20).map(|_| rvec(&mut r, 0.5)).map(|p| (p, t.apply(p))).collect();
        let fit = fit_similarity_lsq(&CorrespondenceSet::new(pairs.clone()).unwrap()).unwrap();
        for (p, q) in &pairs {
            noiseless = noiseless.max(fit.apply(*p).distance(*q));
        }
    }
    let noise = Normal::new(0.0, 1e-3).unwrap();
    let (mut worst_rmse, mut worst_scale): (f64, f64) = (0.0, 0.0);
    for seed in 0..100 {
        let mut r = rng(1000 + seed);
        let t = rsimilarity(&mut r);
        let pairs: Vec<_> = (0..20)
            .map(|_| {
                let p = rvec(&mut r, 0.5);
                let jitter = Vec3::new(noise.sample(&mut r), noise.sample(&mut r), noise.sample(&mut r));
                (p, t.apply(p) + jitter)
            })
            .collect();
        let set = CorrespondenceSet::new(pairs).unwrap();
        let fit = fit_similarity_lsq(&set).unwrap();
        worst_rmse = worst_rmse.max(residual_rmse(&fit, &set));
        worst_scale = worst_scale.max((fit.scale() / t.scale() - 1.0).abs());
    }
    (
        noiseless < 1e-9 && worst_rmse < 3e-3 && worst_scale < 0.01,
        format!(
            "noiseless max {noiseless:.2e} m; sigma 1 mm over 100 seeds: worst RMSE {:.3} mm, worst scale error {:.3} %",
            worst_rmse * 1e3,
            worst_scale * 100.0
        ),
    )
}

fn line_samples(device: &str, seconds: f64, rate: f64) -> Vec<StreamSample> {
    let n = (seconds * rate).round() as usize;
    (0..=n)
        .map(|k| {
            let t = k as f64 / rate;
            StreamSample {
                t,
                device: device.into(),
                pos: Vec3::new(0.3 * (2.0 * t).sin(), 1.0 + 0.1 * t, 0.2 * (3.0 * t).cos()),
                quat: Quat::IDENTITY,
            }
        })
        .collect()
}

fn replay() -> Check {
    // library windows against a brute-force count of waypoints still ahead
    let mut r = rng(3);
    let mut window_failures = 0;
    for i in 0..1000 {
        let traj = rtrajectory(&mut r, i);
        let speed = r.random_range(0.25..4.0);
        let start = r.random_range(0.0..5.0);
        let cursor = ReplayCursor::new(traj.id(), start, speed).unwrap();
        for _ in 0..20 {
            let clock = start + r.random_range(-0.1..1.1) * traj.duration() / speed;
            let frame = replay_eval(&cursor, &traj, clock);
            let u = ((clock - start) * speed).max(0.0);
            let t0 = traj.start_time();
            let ahead = if u >= traj.duration() {
                0
            } else {
                traj.waypoints().iter().filter(|w| w.time - t0 >= u).count()
            };
            let expected = (traj.len() - ahead)..(traj.len() - ahead + ahead.min(5));
            if frame.visible != expected {
                window_failures += 1;
            }
        }
    }

    // engine: windows in snapshots and ticks until the replay ends
    let dt = EngineConfig::default().dt;
    let mut worst_timing: f64 = 0.0;
    let mut snapshot_failures = 0;
    let mut frames = 0;
    for (k, speed) in [0.5, 1.0, 1.5, 2.0, 3.0].into_iter().enumerate() {
        let seconds = 0.5 + 0.4 * k as f64;
        let samples = line_samples("sim1", seconds, 90.0);
        let mut engine = Engine::new(presets::simple_abstract(), EngineConfig::default());
        let cmds = [
            TimedCommand::new(
                0.0,
                Command::RecordStart {
                    kind: RecordKind::Trajectory,
                    device: Some("sim1".into()),
                },
            ),
            TimedCommand::new(seconds, Command::RecordStop { kind: RecordKind::Trajectory }),
        ];
        run_script(&mut engine, &samples, &cmds, seconds);
        let traj = engine.trajectories()[&TrajectoryId(1)].clone();
        let reply = engine.handle_command(&CommandMsg {
            seq: 1,
            command: Command::Replay { ids: None, speed },
        });
        assert!(matches!(reply, WireMessage::Ack(_)), "{reply:?}");
        let cursor = ReplayCursor::new(traj.id(), engine.clock(), speed).unwrap();
        let mut ticks = 0usize;
        while engine.mode() == Mode::Replaying && ticks < 100_000 {
            let out = engine.step();
            ticks += 1;
            if let Some(s) = out.snapshot.filter(|s| s.mode == Mode::Replaying) {
                frames += 1;
                let frame = replay_eval(&cursor, &traj, s.clock);
                let visible = &s.cursors[0].visible;
                let first = visible.first().copied().unwrap_or(traj.len());
                if *visible != frame.visible.clone().collect::<Vec<_>>() || visible.len() != (traj.len() - first).min(5)
                {
                    snapshot_failures += 1;
                }
            }
        }
        let wall = ticks as f64 * dt;
        worst_timing = worst_timing.max((wall - traj.duration() / speed).abs());
    }
    (
        window_failures == 0 && snapshot_failures == 0 && worst_timing <= dt + 1e-9,
        format!(
            "20000 library frames ({window_failures} bad), {frames} engine frames ({snapshot_failures} bad); \
             worst |wall - duration/speed| {:.2} ms (tick {:.2} ms)",
            worst_timing * 1e3,
            dt * 1e3
        ),
    )
}

fn edits() -> Check {
    let mut r = rng(4);
    let (mut dist, mut zoom, mut stamps) = (0.0f64, 0.0f64, true);
    for i in 0..1000 {
        let traj = rtrajectory(&mut r, i);
        let delta = rvec(&mut r, 2.0);
        let axis = [Axis::X, Axis::Y, Axis::Z][r.random_range(0..3)];
        let angle = r.random_range(-7.0..7.0);
        let factor = r.random_range(0.1..4.0);
        let moved = translate_traj(&traj, delta);
        let turned = rotate_traj(&traj, axis, angle);
        let zoomed = zoom_traj(&traj, factor).unwrap();
        let w = traj.waypoints();
        for edited in [&moved, &turned] {
            let e = edited.waypoints();
            for a in 0..w.len() {
                for b in a + 1..w.len() {
                    dist = dist.max((w[a].pos.distance(w[b].pos) - e[a].pos.distance(e[b].pos)).abs());
                }
            }
        }
        let (c0, c1) = (traj.centroid(), zoomed.centroid());
        for (a, b) in w.iter().zip(zoomed.waypoints()) {
            zoom = zoom.max((a.pos.distance(c0) * factor - b.pos.distance(c1)).abs());
        }
        for edited in [&moved, &turned, &zoomed] {
            stamps &= w
                .iter()
                .zip(edited.waypoints())
                .all(|(a, b)| a.time.to_bits() == b.time.to_bits());
        }
    }
    (
        dist < 1e-12 && zoom < 1e-12 && stamps,
        format!(
            "1000 trajectories: pairwise distance drift {dist:.2e}, zoom centroid error {zoom:.2e}, timestamps {}",
            if stamps { "bit-identical" } else { "CHANGED" }
        ),
    )
}

fn ik() -> Check {
    let mut r = rng(5);
    let (mut two_err, mut coplanar): (f64, f64) = (0.0, 0.0);
    for _ in 0..1000 {
        let root = Pose::new(rvec(&mut r, 1.0), rquat(&mut r));
        let (l1, l2): (f64, f64) = (r.random_range(0.2..1.0), r.random_range(0.2..1.0));
        let (lo, hi) = ((l1 - l2).abs(), l1 + l2);
        let d = lo + (hi - lo) * r.random_range(0.001..0.999);
        let target = root.position + rdir(&mut r) * d;
        let pole = root.position + rvec(&mut r, 2.0);
        let sol = solve_ik_two_bone(root, l1, l2, target, Some(pole));
        two_err = two_err
            .max(sol.effector.distance(target))
            .max((sol.mid.distance(root.position) - l1).abs())
            .max((sol.effector.distance(sol.mid) - l2).abs());
        let rp = root.position;
        coplanar = coplanar.max((target - rp).cross(pole - rp).dot(sol.mid - rp).abs());
    }

    let (mut converged, mut length_drift) = (0usize, 0.0f64);
    for seed in 0..1000 {
        let mut r = rng(10_000 + seed);
        let n = r.random_range(3..7);
        let lengths: Vec<f64> = (0..n).map(|_| r.random_range(0.2..1.0)).collect();
        let mut joints = vec![Vec3::ZERO];
        for l in &lengths {
            let last = *joints.last().unwrap();
            joints.push(last + rdir(&mut r) * *l);
        }
        let total: f64 = lengths.iter().sum();
        let longest = lengths.iter().cloned().fold(0.0, f64::max);
        let inner = (2.0 * longest - total).max(0.0);
        let reach = inner + (total - inner) * r.random_range(0.0f64..1.0).cbrt();
        let target = rdir(&mut r) * reach;
        let pole = (r.random_range(0.0..1.0) < 0.5).then(|| rvec(&mut r, 2.0));
        let sol = solve_ik_fabrik(&joints, &lengths, target, pole, 50, 1e-4);
        if sol.error <= 1e-4 && sol.iterations <= 50 {
            converged += 1;
        }
        for (i, l) in lengths.iter().enumerate() {
            length_drift = length_drift.max((sol.joints[i].distance(sol.joints[i + 1]) - l).abs());
        }
    }
    (
        two_err < 1e-9 && converged >= 990 && length_drift < 1e-6 && coplanar < 1e-6,
        format!(
            "two-bone max error {two_err:.2e} m; FABRIK {converged}/1000 within 1e-4 in 50 iterations; \
             length drift {length_drift:.2e}; pole coplanarity {coplanar:.2e}"
        ),
    )
}

fn random_take(r: &mut ChaCha8Rng, id: u32, bones: &[&str]) -> Take {
    let period = r.random_range(1.0 / 90.0..0.1);
    let keys = r.random_range(2..60);
    let duration = (keys - 1) as f64 * period;
    let mut channels = Vec::new();
    for b in bones {
        let times: Vec<f64> = (0..keys).map(|k| k as f64 * period).collect();
        channels.push(Channel {
            bone: b.to_string(),
            keys: Keys::Position(times.iter().map(|&t| (t, rvec(r, 0.3))).collect()),
        });
        channels.push(Channel {
            bone: b.to_string(),
            keys: Keys::Orientation(times.iter().map(|&t| (t, rquat(r))).collect()),
        });
    }
    Take {
        id,
        channels,
        bound_bones: bones.iter().map(|b| b.to_string()).collect(),
        duration,
        sample_period: period,
    }
}

fn pick_bones<'a>(r: &mut ChaCha8Rng, names: &[&'a str]) -> Vec<&'a str> {
    let k = r.random_range(1..=names.len().min(6));
    let mut picked = BTreeSet::new();
    while picked.len() < k {
        picked.insert(names[r.random_range(0..names.len())]);
    }
    picked.into_iter().collect()
}

fn layering() -> Check {
    let arm = presets::humanoid();
    let names: Vec<&str> = arm.bones().iter().map(|b| b.name.as_str()).collect();
    let mut r = rng(6);
    let (mut compared, mut violations, mut changed) = (0usize, 0usize, 0usize);
    for id in 0..100u32 {
        let mut tl = Timeline::new();
        let layers = r.random_range(1..4);
        for l in 0..layers {
            let bones = pick_bones(&mut r, &names);
            let offset = if l == 0 { 0.0 } else { r.random_range(0.0..2.0) };
            tl = layer_takes(&tl, random_take(&mut r, id * 10 + l, &bones), offset).unwrap();
        }
        let s = pick_bones(&mut r, &names);
        let overlay = random_take(&mut r, id * 10 + 9, &s);
        let offset = r.random_range(0.0..2.5);
        let end = offset + overlay.duration;
        let top = layer_takes(&tl, overlay, offset).unwrap();
        let horizon = top.duration() + 0.5;
        let mut times: Vec<f64> = (0..=(horizon * 240.0) as usize).map(|i| i as f64 / 240.0).collect();
        times.extend([offset, end, offset - 1e-9, end + 1e-9, offset + 1e-9, end - 1e-9]);
        for t in times.into_iter().filter(|t| *t >= 0.0) {
            let a = sample_timeline(&tl, &arm, t);
            let b = sample_timeline(&top, &arm, t);
            for (i, name) in names.iter().enumerate() {
                compared += 1;
                let inside = s.contains(name) && t >= offset && t <= end;
                if a.local(i) != b.local(i) {
                    if inside {
                        changed += 1;
                    } else {
                        violations += 1;
                    }
                }
            }
        }
    }
    (
        violations == 0 && changed > 0,
        format!(
            "100 timelines, {compared} bone samples compared, {violations} changes outside S or its interval, \
             {changed} inside"
        ),
    )
}

fn jigs() -> Check {
    let dt = 1.0 / 60.0;
    // pendulum: fixed pivot, bob on the string with tangential velocity
    let mut r = rng(7);
    let mut energy_rise = f64::NEG_INFINITY;
    for _ in 0..200 {
        let length = r.random_range(0.1..1.0);
        let damping = r.random_range(0.0..3.0);
        let pivot = rvec(&mut r, 1.0);
        let cfg = JigConfig::Pendulum {
            length,
            gravity: 9.81,
            damping,
        };
        let dir = rdir(&mut r);
        let kick = rvec(&mut r, 2.0);
        let velocity = kick - dir * kick.dot(dir);
        let mut state = JigState::Pendulum {
            bob: pivot + dir * length,
            velocity,
        };
        let energy = |s: &JigState| match s {
            JigState::Pendulum { bob, velocity } => pendulum_energy(*bob, *velocity, pivot, 9.81),
            _ => unreachable!(),
        };
        let mut e = energy(&state);
        for _ in 0..600 {
            let (next, _) = jig_step(&cfg, &state, &[Pose::from_position(pivot)], dt).unwrap();
            let e1 = energy(&next);
            energy_rise = energy_rise.max(e1 - e);
            e = e1;
            state = next;
        }
    }

    // weight: constant input after a jump, 10 settling times
    let mut weight_err: f64 = 0.0;
    for _ in 0..100 {
        let cfg = JigConfig::Weight {
            mass: r.random_range(0.5..5.0),
            stiffness: r.random_range(20.0..200.0),
            damping: r.random_range(5.0..50.0),
        };
        let start = rvec(&mut r, 1.0);
        let target = rvec(&mut r, 1.0);
        let mut state = JigState::at_rest(&cfg, &[Pose::from_position(start)]).unwrap();
        let steps = (10.0 * jig_settle_time(&cfg).unwrap() / dt).ceil() as usize;
        let mut out = start;
        for _ in 0..steps {
            let (next, o) = jig_step(&cfg, &state, &[Pose::from_position(target)], dt).unwrap();
            state = next;
            out = o[0].position;
        }
        weight_err = weight_err.max(out.distance(target));
    }

    // stick: outputs lie on the polyline
    let mut off_path: f64 = 0.0;
    for _ in 0..100 {
        let n = r.random_range(2..7);
        let path: Vec<Vec3> = (0..n).map(|_| rvec(&mut r, 1.0)).collect();
        let cfg = JigConfig::Stick { path: path.clone() };
        let mut state = JigState::at_rest(&cfg, &[Pose::from_position(rvec(&mut r, 2.0))]).unwrap();
        for _ in 0..200 {
            let (next, o) = jig_step(&cfg, &state, &[Pose::from_position(rvec(&mut r, 2.0))], dt).unwrap();
            state = next;
            let p = o[0].position;
            off_path = off_path.max(closest_point_on_path(&path, p).distance(p));
        }
    }
    (
        energy_rise <= 1e-6 && weight_err < 1e-4 && off_path < 1e-9,
        format!(
            "pendulum worst per-step energy change {energy_rise:+.2e} J; weight residual {weight_err:.2e} m; \
             stick off-path {off_path:.2e} m"
        ),
    )
}

/// Two devices moving on separate loops, ~90 Hz with jitter.
fn two_hand_csv() -> String {
    let mut samples = Vec::new();
    for k in 0..=135 {
        let t = k as f64 / 90.0 + if k % 4 == 1 { 0.0013 } else { 0.0 };
        samples.push(StreamSample {
            t,
            device: "ctrl1".into(),
            pos: Vec3::new(0.25 + 0.1 * (3.0 * t).sin(), 1.1 + 0.1 * (2.0 * t).cos(), 0.15),
            quat: Quat::from_axis_angle(Vec3::Y, 0.5 * t),
        });
        samples.push(StreamSample {
            t,
            device: "ctrl2".into(),
            pos: Vec3::new(-0.25 - 0.1 * (4.0 * t).sin(), 1.0 + 0.05 * t, 0.1 * (5.0 * t).cos()),
            quat: Quat::IDENTITY,
        });
    }
    write_stream_csv(&samples)
}

/// CSV in, BVH out: a two-handed band take with a pendulum leg take on top.
fn csv_to_bvh(csv: &str) -> String {
    let arm = presets::humanoid();
    let samples = read_stream_csv(csv).unwrap();
    let take = |plan: &RecordPlan| match record_stream(&arm, EngineConfig::default(), &samples, plan).unwrap() {
        Recorded::Take(t) => t,
        Recorded::Trajectory(_) => unreachable!(),
    };
    let hands = take(&RecordPlan {
        kind: RecordKind::Take,
        bindings: vec![("ctrl1".into(), "hand_L.ik".into()), ("ctrl2".into(), "hand_R.ik".into())],
        mode: BindMode::LocationOnly,
        jig: Some(JigSpec::Preset("band".into())),
        device: None,
    });
    let leg = take(&RecordPlan {
        kind: RecordKind::Take,
        bindings: vec![("ctrl2".into(), "ankle_L.ik".into())],
        mode: BindMode::LocationOnly,
        jig: Some(JigSpec::Preset("pendulum".into())),
        device: None,
    });
    let tl = layer_takes(&Timeline::new(), hands, 0.0).unwrap();
    let tl = layer_takes(&tl, leg, 0.4).unwrap();
    write_bvh(&export_bvh(&arm, &tl, 30.0).unwrap().document)
}

fn determinism() -> Check {
    let csv = two_hand_csv();
    let reference = csv_to_bvh(&csv);
    let mut runs = 1;
    let mut identical = true;
    for _ in 0..4 {
        identical &= csv_to_bvh(&csv) == reference;
        runs += 1;
    }
    for threads in [2, 4, 8] {
        let outputs: Vec<String> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads).map(|_| s.spawn(|| csv_to_bvh(&csv))).collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        runs += outputs.len();
        identical &= outputs.iter().all(|o| *o == reference);
    }
    (
        identical,
        format!(
            "{runs} runs (5 sequential, then 2/4/8 concurrent threads), {} byte BVH, {}",
            reference.len(),
            if identical { "all identical" } else { "OUTPUTS DIFFER" }
        ),
    )
}

fn bvh() -> Check {
    let mut ok = true;
    let mut worst_channel: f64 = 0.0;
    let mut worst_joint: f64 = 0.0;
    let mut notes = Vec::new();
    for name in presets::NAMES {
        let arm = presets::by_name(name).unwrap();
        let controls = presets::control_bones(&arm);
        // the simple rig has no controls; drive its only root
        let driven = controls.first().copied().unwrap_or(arm.bone(0).name.as_str()).to_string();
        let samples = line_samples("ctrl1", 1.0, 90.0);
        let Recorded::Take(take) = record_stream(
            &arm,
            EngineConfig::default(),
            &samples,
            &RecordPlan {
                kind: RecordKind::Take,
                bindings: vec![("ctrl1".into(), driven)],
                mode: BindMode::LocationOnly,
                jig: None,
                device: None,
            },
        )
        .unwrap() else {
            unreachable!()
        };
        let tl = layer_takes(&Timeline::new(), take, 0.0).unwrap();
        let export = export_bvh(&arm, &tl, 30.0).unwrap();
        let parsed = match parse_bvh(&write_bvh(&export.document)) {
            Ok(d) => d,
            Err(e) => {
                ok = false;
                notes.push(format!("{name}: {e}"));
                continue;
            }
        };
        let topology = parsed.joints.len() == export.document.joints.len()
            && parsed.joints.iter().zip(&export.document.joints).all(|(a, b)| {
                a.name == b.name && a.parent == b.parent && a.channels == b.channels && a.offset == b.offset
            })
            && parsed.joints.len() == arm.len()
            && parsed.frames.len() == export.document.frames.len();
        ok &= topology;
        for (fa, fb) in parsed.frames.iter().zip(&export.document.frames) {
            for (a, b) in fa.iter().zip(fb) {
                worst_channel = worst_channel.max((a - b).abs());
            }
        }
        let index: BTreeMap<&str, usize> =
            parsed.joints.iter().enumerate().map(|(i, j)| (j.name.as_str(), i)).collect();
        for f in 0..parsed.frames.len() {
            let heads = fk_world(&arm, &sample_timeline(&tl, &arm, f as f64 * parsed.frame_time));
            let pos = bvh_world_positions(&parsed, f);
            for (i, b) in arm.bones().iter().enumerate() {
                worst_joint = worst_joint.max(pos[index[b.name.as_str()]].distance(heads[i].position));
            }
        }
        notes.push(format!(
            "{name} {} joints/{} controls {}",
            parsed.joints.len(),
            controls.len(),
            if topology { "ok" } else { "TOPOLOGY MISMATCH" }
        ));
        if name == "humanoid" && controls.len() < 5 {
            ok = false;
        }
    }
    ok &= worst_channel < 1e-3 && worst_joint < 1e-3;
    (
        ok,
        format!(
            "{}; worst channel {worst_channel:.1e}, worst joint position {worst_joint:.1e} m",
            notes.join(", ")
        ),
    )
}

/// 64 bones: a root, four 14-bone chains, four IK targets and three poles.
fn sixty_four_bone_rig() -> Armature {
    let mut bones = vec![Bone::new("root", None, Pose::IDENTITY, 0.1)];
    let mut constraints = Vec::new();
    for c in 0..4 {
        let x = -0.45 + 0.3 * c as f64;
        for k in 0..14 {
            let (parent, pos) = if k == 0 {
                (0, Vec3::new(x, 0.1, 0.0))
            } else {
                (bones.len() - 1, Vec3::new(0.0, 0.1, 0.0))
            };
            bones.push(Bone::new(format!("chain{c}_{k}"), Some(parent), Pose::from_position(pos), 0.1));
        }
    }
    for c in 0..4 {
        let x = -0.45 + 0.3 * c as f64;
        bones.push(Bone::new(format!("c{c}.ik"), None, Pose::from_position(Vec3::new(x, 1.25, 0.2)), 0.05));
    }
    for c in 0..3 {
        let x = -0.45 + 0.3 * c as f64;
        bones.push(Bone::new(format!("p{c}.pole"), None, Pose::from_position(Vec3::new(x, 1.0, 1.0)), 0.05));
    }
    for c in 0..4 {
        constraints.push(Constraint::IkChain {
            tip: format!("chain{c}_13"),
            chain_length: 6,
            target: format!("c{c}.ik"),
            pole: (c < 3).then(|| format!("p{c}.pole")),
            iterations: 20,
            tolerance: 1e-4,
        });
    }
    Armature::new(bones, constraints).unwrap()
}

fn performance() -> Check {
    let arm = sixty_four_bone_rig();
    let bones = arm.len();
    let mut engine = Engine::new(arm, EngineConfig::default());
    let mut seq = 0;
    let mut command = |engine: &mut Engine, command: Command| {
        seq += 1;
        let reply = engine.handle_command(&CommandMsg { seq, command });
        assert!(matches!(reply, WireMessage::Ack(_)), "{reply:?}");
    };
    for (dev, bone, jig) in [("ctrl1", "c0.ik", "weight"), ("ctrl2", "c1.ik", "pendulum")] {
        command(
            &mut engine,
            Command::Bind {
                device: DeviceId::from(dev),
                bone: bone.into(),
                mode: BindMode::LocationOnly,
            },
        );
        command(
            &mut engine,
            Command::SetJig {
                device: DeviceId::from(dev),
                partner: None,
                jig: Some(JigSpec::Preset(jig.into())),
            },
        );
    }
    command(
        &mut engine,
        Command::RecordStart {
            kind: RecordKind::Take,
            device: None,
        },
    );
    let ticks = 600;
    let mut times = Vec::with_capacity(ticks);
    for k in 0..ticks {
        let t = engine.clock();
        for (dev, x, phase) in [("ctrl1", -0.45, 0.0), ("ctrl2", -0.15, 1.0)] {
            engine.push_sample(StreamSample {
                t,
                device: dev.into(),
                pos: Vec3::new(x + 0.2 * (2.0 * t + phase).sin(), 1.1 + 0.15 * (3.0 * t).cos(), 0.3 * (t + phase).sin()),
                quat: Quat::IDENTITY,
            });
        }
        let started = Instant::now();
        let out = engine.step();
        times.push(started.elapsed().as_secs_f64());
        assert!(out.errors.is_empty(), "tick {k}: {:?}", out.errors);
    }
    let mean = times.iter().sum::<f64>() / ticks as f64;
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    let p99 = sorted[(ticks * 99) / 100];
    let max = sorted[ticks - 1];
    (
        mean < 2e-3,
        format!(
            "{bones}-bone rig, 2 jigs, recording, {ticks} ticks: mean {:.3} ms, p99 {:.3} ms, max {:.3} ms",
            mean * 1e3,
            p99 * 1e3,
            max * 1e3
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("calibration exactness", calibration),
        ("lsq fit", lsq),
        ("replay semantics", replay),
        ("edit isometries", edits),
        ("ik suite", ik),
        ("layering locality", layering),
        ("jig invariants", jigs),
        ("determinism", determinism),
        ("bvh round-trip", bvh),
        ("performance", performance),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let (pass, detail) = check();
        if !pass {
            failed += 1;
        }
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
