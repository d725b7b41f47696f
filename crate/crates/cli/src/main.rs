//! `motionsketch`: file-driven access to the whole pipeline, plus the live
//! server. File commands run on a virtual clock and never sleep.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use motionsketch_core::calibration::{calibrate_four_point, fit_similarity_lsq, residual_rmse};
use motionsketch_core::io::{
    export_bvh, from_json, read_correspondence_csv, read_probe_csv, read_stream_csv, to_json, write_bvh,
    write_replay_csv, write_stream_csv, Document,
};
use motionsketch_core::jig::{preset_library, simulate_stream, JigConfig};
use motionsketch_core::rig::{presets, Armature, BindMode, DeviceId};
use motionsketch_core::takes::{layer_takes, Take, Timeline};
use motionsketch_core::trajectory::{
    replay_samples, rotate_traj, translate_traj, zoom_traj, Axis, Trajectory, ROTATE_STEP, ZOOM_STEP,
};
use motionsketch_core::Vec3;
use motionsketch_session::engine::resolve_jig;
use motionsketch_session::protocol::{JigSpec, RecordKind};
use motionsketch_session::server::{start, ServeConfig};
use motionsketch_session::{record_stream, Engine, EngineConfig, RecordPlan, Recorded};

#[derive(Debug, Parser)]
#[command(name = "motionsketch", version, about = "Movement sketching for rigged characters")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Build the tracker-to-display map from a four-point probe file.
    Calibrate(CalibrateArgs),
    /// Least-squares similarity between two labelled point files.
    FitLsq(FitLsqArgs),
    /// Record a take or trajectory from a device stream.
    Record(RecordArgs),
    /// Translate, rotate or zoom a trajectory.
    Edit(EditArgs),
    /// Sample a trajectory replay into `t,id,x,y,z` rows.
    Replay(ReplayArgs),
    /// Filter a device stream through a jig.
    SimulateJig(SimulateJigArgs),
    /// Layer takes and write BVH.
    ExportBvh(ExportBvhArgs),
    /// Run the live engine: WebSocket `/ws`, UDP samples, static files.
    Serve(ServeArgs),
    /// List rig and jig presets, or dump one as JSON.
    Presets(PresetsArgs),
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// `label,x,y,z` rows for x0, a1, a2, a3.
    #[arg(long)]
    probe: PathBuf,
    /// Cube spacing in display units.
    #[arg(long, default_value_t = 0.1, value_parser = positive)]
    t: f64,
    /// Write the equivalent `{k, A, b}` similarity instead of the map.
    #[arg(long)]
    similarity: bool,
    /// Output file (stdout if omitted or `-`).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitLsqArgs {
    /// Tracker-space points, `label,x,y,z`.
    #[arg(long)]
    from: PathBuf,
    /// Display-space points with the same labels.
    #[arg(long)]
    to: PathBuf,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Take,
    Trajectory,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    LocationOnly,
    FullPose,
}

#[derive(Debug, Clone)]
struct BindArg {
    device: DeviceId,
    bone: String,
}

fn parse_bind(s: &str) -> Result<BindArg, String> {
    match s.split_once('=') {
        Some((d, b)) if !d.is_empty() && !b.is_empty() => Ok(BindArg {
            device: DeviceId::from(d),
            bone: b.to_string(),
        }),
        _ => Err(format!("expected DEVICE=BONE, got `{s}`")),
    }
}

#[derive(Debug, Args)]
struct RecordArgs {
    /// Device stream CSV.
    #[arg(long)]
    stream: PathBuf,
    /// Rig preset name or armature JSON file.
    #[arg(long)]
    rig: String,
    /// DEVICE=BONE; repeat for two-handed capture.
    #[arg(long, value_parser = parse_bind)]
    bind: Vec<BindArg>,
    #[arg(long, value_enum, default_value = "location-only")]
    mode: ModeArg,
    /// Jig preset (`weight`, `band:default`, ...) or jig JSON file.
    #[arg(long)]
    jig: Option<String>,
    #[arg(long, value_enum, default_value = "take")]
    kind: Kind,
    /// Traced device for trajectories (default: first bound, then first seen).
    #[arg(long)]
    device: Option<String>,
    /// Engine ticks per second.
    #[arg(long, default_value_t = 60.0, value_parser = positive)]
    tick_rate: f64,
    /// Trajectory and take grid, 30 to 120 Hz.
    #[arg(long, default_value_t = 60.0, value_parser = positive)]
    sample_rate: f64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy)]
struct AxisAmount {
    axis: Axis,
    amount: f64,
}

fn parse_axis_amount(s: &str) -> Result<AxisAmount, String> {
    let (a, v) = s.split_once(':').ok_or_else(|| format!("expected AXIS:VALUE, got `{s}`"))?;
    let axis = match a.to_ascii_lowercase().as_str() {
        "x" => Axis::X,
        "y" => Axis::Y,
        "z" => Axis::Z,
        _ => return Err(format!("axis must be x, y or z, got `{a}`")),
    };
    let amount = finite(v)?;
    Ok(AxisAmount { axis, amount })
}

fn parse_vec3(s: &str) -> Result<Vec3, String> {
    let parts: Vec<&str> = s.split(',').collect();
    match parts[..] {
        [x, y, z] => Ok(Vec3::new(finite(x)?, finite(y)?, finite(z)?)),
        _ => Err(format!("expected X,Y,Z, got `{s}`")),
    }
}

fn finite(s: &str) -> Result<f64, String> {
    match s.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("`{s}` is not a finite number")),
    }
}

fn positive(s: &str) -> Result<f64, String> {
    match finite(s)? {
        v if v > 0.0 => Ok(v),
        v => Err(format!("must be positive, got {v}")),
    }
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("op").required(true).multiple(false)))]
struct EditArgs {
    /// Trajectory JSON.
    #[arg(long)]
    traj: PathBuf,
    /// Move by X,Y,Z.
    #[arg(long, group = "op", value_parser = parse_vec3, allow_hyphen_values = true)]
    translate: Option<Vec3>,
    /// AXIS:DEGREES about the centroid.
    #[arg(long, group = "op", value_parser = parse_axis_amount, allow_hyphen_values = true)]
    rotate: Option<AxisAmount>,
    /// AXIS:N rotation taps of 5 degrees.
    #[arg(long, group = "op", value_parser = parse_axis_amount, allow_hyphen_values = true)]
    rotate_taps: Option<AxisAmount>,
    /// Scale about the centroid.
    #[arg(long, group = "op", value_parser = positive)]
    zoom: Option<f64>,
    /// N zoom taps of x1.1 (negative shrinks).
    #[arg(long, group = "op", allow_hyphen_values = true)]
    zoom_taps: Option<i32>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(long)]
    traj: PathBuf,
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    speed: f64,
    /// Output rows per second of session time.
    #[arg(long, default_value_t = 60.0, value_parser = positive)]
    rate: f64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateJigArgs {
    /// Jig preset or jig JSON file.
    #[arg(long)]
    jig: String,
    #[arg(long)]
    stream: PathBuf,
    /// Input devices (default: the first ones seen in the stream).
    #[arg(long)]
    device: Vec<String>,
    #[arg(long, default_value_t = 60.0, value_parser = positive)]
    rate: f64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone)]
struct TakeArg {
    path: PathBuf,
    offset: f64,
}

fn parse_take(s: &str) -> Result<TakeArg, String> {
    match s.rsplit_once('@') {
        Some((p, o)) => {
            let offset = finite(o)?;
            if offset < 0.0 {
                return Err(format!("offset must be non-negative, got {offset}"));
            }
            Ok(TakeArg {
                path: p.into(),
                offset,
            })
        }
        None => Ok(TakeArg {
            path: s.into(),
            offset: 0.0,
        }),
    }
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).multiple(false)))]
struct ExportBvhArgs {
    #[arg(long)]
    rig: String,
    /// TAKE.json[@OFFSET]; later takes layer on top.
    #[arg(long, group = "source", value_parser = parse_take)]
    take: Vec<TakeArg>,
    /// Timeline JSON instead of individual takes.
    #[arg(long, group = "source")]
    timeline: Option<PathBuf>,
    #[arg(long, default_value_t = 30.0, value_parser = positive)]
    fps: f64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, env = "MOTIONSKETCH_HTTP", default_value = "127.0.0.1:8080")]
    http: SocketAddr,
    #[arg(long, env = "MOTIONSKETCH_UDP", default_value = "127.0.0.1:9000")]
    udp: SocketAddr,
    /// Do not listen for UDP samples.
    #[arg(long)]
    no_udp: bool,
    #[arg(long, env = "MOTIONSKETCH_RIG", default_value = "humanoid")]
    rig: String,
    #[arg(long, env = "MOTIONSKETCH_TICK_RATE", default_value_t = 60.0, value_parser = positive)]
    tick_rate: f64,
    #[arg(long, env = "MOTIONSKETCH_SNAPSHOT_RATE", default_value_t = 30.0, value_parser = positive)]
    snapshot_rate: f64,
    /// Directory served at `/` (the viewport build).
    #[arg(long = "static", env = "MOTIONSKETCH_STATIC")]
    static_dir: Option<PathBuf>,
    /// Keep device timestamps instead of stamping arrivals with the engine clock.
    #[arg(long)]
    no_restamp: bool,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("dump").multiple(false)))]
struct PresetsArgs {
    /// Write this rig preset as armature JSON.
    #[arg(long, group = "dump")]
    rig: Option<String>,
    /// Write this jig preset as JSON.
    #[arg(long, group = "dump")]
    jig: Option<String>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_doc<D: Document>(path: &Path) -> Result<D> {
    from_json(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) if p != Path::new("-") => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        _ => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

/// A preset name, or an armature JSON file.
fn load_rig(rig: &str) -> Result<Armature> {
    let path = Path::new(rig);
    if path.is_file() {
        return read_doc(path);
    }
    presets::by_name(rig)
        .ok_or_else(|| anyhow!("`{rig}` is neither a file nor a rig preset ({})", presets::NAMES.join(", ")))
}

/// A preset name, or a jig JSON file.
fn jig_spec(jig: &str) -> Result<JigSpec> {
    let path = Path::new(jig);
    if path.is_file() {
        return Ok(JigSpec::Config(read_doc::<JigConfig>(path)?));
    }
    let spec = JigSpec::Preset(jig.to_string());
    resolve_jig(&spec).map_err(|e| anyhow!(e.message))?;
    Ok(spec)
}

fn calibrate(a: CalibrateArgs) -> Result<()> {
    let probe = read_probe_csv(&read(&a.probe)?, a.t)?;
    let map = calibrate_four_point(&probe)?;
    let text = if a.similarity {
        to_json(&map.to_similarity()?)?
    } else {
        to_json(&map)?
    };
    write_out(a.output.as_deref(), &text)
}

fn fit_lsq(a: FitLsqArgs) -> Result<()> {
    let set = read_correspondence_csv(&read(&a.from)?, &read(&a.to)?)?;
    let fit = fit_similarity_lsq(&set)?;
    eprintln!("rmse {:.6e} over {} pairs", residual_rmse(&fit, &set), set.len());
    write_out(a.output.as_deref(), &to_json(&fit)?)
}

fn record(a: RecordArgs) -> Result<()> {
    let arm = load_rig(&a.rig)?;
    let samples = read_stream_csv(&read(&a.stream)?)?;
    let kind = match a.kind {
        Kind::Take => RecordKind::Take,
        Kind::Trajectory => RecordKind::Trajectory,
    };
    if matches!(kind, RecordKind::Take) && a.bind.is_empty() {
        bail!("a take needs at least one --bind DEVICE=BONE");
    }
    let plan = RecordPlan {
        kind,
        bindings: a.bind.into_iter().map(|b| (b.device, b.bone)).collect(),
        mode: match a.mode {
            ModeArg::LocationOnly => BindMode::LocationOnly,
            ModeArg::FullPose => BindMode::FullPose,
        },
        jig: a.jig.as_deref().map(jig_spec).transpose()?,
        device: a.device.map(DeviceId::new),
    };
    let config = EngineConfig {
        dt: 1.0 / a.tick_rate,
        sample_period: 1.0 / a.sample_rate,
        ..EngineConfig::default()
    };
    let text = match record_stream(&arm, config, &samples, &plan)? {
        Recorded::Take(t) => to_json(&t)?,
        Recorded::Trajectory(t) => to_json(&t)?,
    };
    write_out(a.output.as_deref(), &text)
}

fn edit(a: EditArgs) -> Result<()> {
    let traj: Trajectory = read_doc(&a.traj)?;
    let edited = if let Some(d) = a.translate {
        translate_traj(&traj, d)
    } else if let Some(r) = a.rotate {
        rotate_traj(&traj, r.axis, r.amount.to_radians())
    } else if let Some(r) = a.rotate_taps {
        rotate_traj(&traj, r.axis, r.amount * ROTATE_STEP)
    } else if let Some(f) = a.zoom {
        zoom_traj(&traj, f)?
    } else if let Some(n) = a.zoom_taps {
        zoom_traj(&traj, ZOOM_STEP.powi(n))?
    } else {
        unreachable!("clap requires one edit")
    };
    write_out(a.output.as_deref(), &to_json(&edited)?)
}

fn replay(a: ReplayArgs) -> Result<()> {
    let traj: Trajectory = read_doc(&a.traj)?;
    let rows = replay_samples(&traj, a.speed, 1.0 / a.rate)?;
    write_out(a.output.as_deref(), &write_replay_csv(traj.id(), &rows))
}

fn simulate_jig(a: SimulateJigArgs) -> Result<()> {
    let config = resolve_jig(&jig_spec(&a.jig)?).map_err(|e| anyhow!(e.message))?;
    let samples = read_stream_csv(&read(&a.stream)?)?;
    let devices: Vec<DeviceId> = if a.device.is_empty() {
        let mut seen: Vec<DeviceId> = Vec::new();
        for s in &samples {
            if !seen.contains(&s.device) {
                seen.push(s.device.clone());
            }
        }
        seen.truncate(config.input_count());
        seen
    } else {
        a.device.into_iter().map(DeviceId::new).collect()
    };
    let out = simulate_stream(&config, &samples, &devices, 1.0 / a.rate)?;
    write_out(a.output.as_deref(), &write_stream_csv(&out))
}

fn export(a: ExportBvhArgs) -> Result<()> {
    let arm = load_rig(&a.rig)?;
    let timeline = match &a.timeline {
        Some(p) => read_doc(p)?,
        None => {
            let mut tl = Timeline::new();
            for t in &a.take {
                let take: Take = read_doc(&t.path)?;
                tl = layer_takes(&tl, take, t.offset)?;
            }
            tl
        }
    };
    let export = export_bvh(&arm, &timeline, a.fps)?;
    if export.gimbal_warnings > 0 {
        eprintln!("warning: {} rotations clamped near gimbal lock", export.gimbal_warnings);
    }
    write_out(a.output.as_deref(), &write_bvh(&export.document))
}

fn serve(a: ServeArgs) -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let arm = load_rig(&a.rig)?;
    let engine = Engine::new(
        arm,
        EngineConfig {
            dt: 1.0 / a.tick_rate,
            snapshot_period: 1.0 / a.snapshot_rate,
            ..EngineConfig::default()
        },
    );
    let config = ServeConfig {
        http: a.http,
        udp: (!a.no_udp).then_some(a.udp),
        static_dir: a.static_dir,
        restamp: !a.no_restamp,
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let server = start(engine, config).await.context("binding sockets")?;
        eprintln!("listening on ws://{}/ws", server.http);
        if let Some(udp) = server.udp {
            eprintln!("udp samples on {udp}");
        }
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = server.join() => {}
        }
        Ok(())
    })
}

fn list_presets(a: PresetsArgs) -> Result<()> {
    let text = if let Some(name) = &a.rig {
        let arm = presets::by_name(name).ok_or_else(|| anyhow!("unknown rig preset `{name}`"))?;
        to_json(&arm)?
    } else if let Some(name) = &a.jig {
        let cfg = resolve_jig(&JigSpec::Preset(name.clone())).map_err(|e| anyhow!(e.message))?;
        to_json(&cfg)?
    } else {
        let mut out = String::from("rigs:\n");
        for name in presets::NAMES {
            let arm = presets::by_name(name).expect("listed preset");
            out += &format!(
                "  {name:<10} {:>3} bones  controls: {}\n",
                arm.len(),
                presets::control_bones(&arm).join(" ")
            );
        }
        out += "jigs:\n";
        for (name, cfg) in preset_library() {
            out += &format!("  {name:<17} {} input(s)\n", cfg.input_count());
        }
        out
    };
    write_out(a.output.as_deref(), &text)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Calibrate(a) => calibrate(a),
        Cmd::FitLsq(a) => fit_lsq(a),
        Cmd::Record(a) => record(a),
        Cmd::Edit(a) => edit(a),
        Cmd::Replay(a) => replay(a),
        Cmd::SimulateJig(a) => simulate_jig(a),
        Cmd::ExportBvh(a) => export(a),
        Cmd::Serve(a) => serve(a),
        Cmd::Presets(a) => list_presets(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
