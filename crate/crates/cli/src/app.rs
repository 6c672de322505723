use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, Write};
use std::net::{IpAddr, SocketAddr, ToSocketAddrs};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use ozforge_core::fixtures::{gen_fixtures, FixtureSpec};
use ozforge_core::frames::SyntheticFrames;
use ozforge_core::gaze::FixationParams;
use ozforge_core::host::ActionStack;
use ozforge_core::recorder::{LineGazeSource, RecorderConfig, ScreenBounds};
use ozforge_core::replay;
use ozforge_core::store::load_store;
use ozforge_core::trace::validate_session;
use ozforge_core::trace::SessionMeta;
use ozforge_core::wire::{DEFAULT_CONTROL_PORT, DEFAULT_FRAME_PORT};
use ozforge_net::wizard::DEFAULT_UI_PORT;
use ozforge_net::{SubjectAgent, SubjectConfig, WizardConfig, WizardLink};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use tracing_subscriber::EnvFilter;

use crate::bench::{self, BenchParams};
use crate::driver::{drive, DriverConfig};

pub const LOG_ENV: &str = "OZFORGE_LOG";

#[derive(Debug, Parser)]
#[command(name = "ozforge", version, about = "Wizard-of-Oz platform for studying contextual help")]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Record a session and stream it to a wizard, driven by synthetic activity.
    Subject(SubjectArgs),
    /// Run the wizard service.
    Wizard(WizardArgs),
    /// Inspect or export a recorded session.
    #[command(subcommand)]
    Replay(ReplayCommand),
    /// Same as `replay export`.
    Export(ExportArgs),
    /// Check a session directory (or a message store) and report every problem.
    Validate(ValidateArgs),
    /// Generate a deterministic message store, mirror and scripted session.
    GenFixtures(GenArgs),
    /// Measure frame throughput and control round trips on loopback.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct SubjectArgs {
    /// Wizard host, optionally with the control port (HOST[:PORT]).
    #[arg(long, required_unless_present = "offline", conflicts_with = "offline")]
    wizard: Option<String>,
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    session: PathBuf,
    /// Record locally without a wizard.
    #[arg(long)]
    offline: bool,
    #[arg(long)]
    forward_gaze: bool,
    /// Idle auto-capture period in ms.
    #[arg(long, default_value_t = 500)]
    auto_period: u32,
    #[arg(long, default_value_t = DEFAULT_FRAME_PORT)]
    frame_port: u16,
    #[arg(long, default_value_t = DEFAULT_CONTROL_PORT)]
    control_port: u16,
    /// Session length in seconds; 0 runs until interrupted.
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    #[arg(long, default_value_t = 4.0)]
    events_per_sec: f64,
    /// Synthetic gaze rate in Hz; 0 disables it.
    #[arg(long, default_value_t = 0, conflicts_with = "gaze_file")]
    gaze_hz: u32,
    /// Read gaze samples (`t_us,x,y,valid` lines) from this file instead.
    #[arg(long)]
    gaze_file: Option<PathBuf>,
    /// Seconds between synthetic help requests; 0 disables them.
    #[arg(long, default_value_t = 0.0)]
    request_every: f64,
    #[arg(long, default_value_t = ozforge_net::subject::DEFAULT_MAX_SEND_FPS)]
    max_send_fps: u32,
    #[arg(long, default_value_t = 1024)]
    width: u32,
    #[arg(long, default_value_t = 768)]
    height: u32,
    /// Pad each screen capture to this many bytes.
    #[arg(long, default_value_t = 0)]
    frame_bytes: usize,
    #[arg(long, default_value_t = 1)]
    session_id: u32,
    #[arg(long, default_value = "subject")]
    label: String,
}

#[derive(Debug, Args)]
struct WizardArgs {
    #[arg(long)]
    mirror: PathBuf,
    #[arg(long, default_value = "0.0.0.0")]
    bind: IpAddr,
    #[arg(long, default_value_t = DEFAULT_FRAME_PORT)]
    frame_port: u16,
    #[arg(long, default_value_t = DEFAULT_CONTROL_PORT)]
    control_port: u16,
    #[arg(long, default_value_t = DEFAULT_UI_PORT)]
    ui_port: u16,
    /// Action log path.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Stop after this many seconds instead of waiting for Ctrl-C.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum ReplayCommand {
    /// Render the session to numbered PNG frames plus index.json.
    Export(ExportArgs),
    /// Print the render instruction at a position.
    Seek(SeekArgs),
}

#[derive(Debug, Args)]
struct FixationArgs {
    /// Fixation dispersion threshold in pixels.
    #[arg(long, default_value_t = FixationParams::default().dispersion_px)]
    dispersion: u32,
    /// Minimum fixation duration in ms.
    #[arg(long, default_value_t = FixationParams::default().min_duration_ms)]
    min_dur: u32,
}

impl FixationArgs {
    fn params(&self) -> FixationParams {
        FixationParams { dispersion_px: self.dispersion, min_duration_ms: self.min_dur }
    }
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    session: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    fps: u32,
    #[command(flatten)]
    fixation: FixationArgs,
}

#[derive(Debug, Args)]
struct SeekArgs {
    #[arg(long)]
    session: PathBuf,
    /// Position in µs from session start.
    #[arg(long, allow_negative_numbers = true)]
    t_us: i64,
    #[command(flatten)]
    fixation: FixationArgs,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    dir: PathBuf,
    /// Treat DIR as a message store instead of a session.
    #[arg(long)]
    store: bool,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = FixtureSpec::default().n_messages)]
    messages: usize,
    #[arg(long, default_value_t = FixtureSpec::default().lexicon_depth)]
    lexicon_depth: u32,
    #[arg(long, default_value_t = FixtureSpec::default().lexicon_branching)]
    lexicon_branching: usize,
    #[arg(long, default_value_t = FixtureSpec::default().session_secs)]
    session_secs: u32,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, default_value_t = BenchParams::default().frames)]
    frames: u64,
    /// Frame size in bytes.
    #[arg(long, default_value_t = BenchParams::default().size)]
    size: usize,
    /// Datagram loss probability.
    #[arg(long, default_value_t = 0.0)]
    loss: f64,
    #[arg(long, default_value_t = BenchParams::default().fps)]
    fps: u32,
    /// Frames between help requests; 0 disables them.
    #[arg(long, default_value_t = BenchParams::default().request_every)]
    request_every: u64,
    #[arg(long, default_value_t = BenchParams::default().width)]
    width: u32,
    #[arg(long, default_value_t = BenchParams::default().height)]
    height: u32,
    /// Keep the subject session in this directory.
    #[arg(long)]
    session: Option<PathBuf>,
}

/// Failure that maps to a specific exit code.
#[derive(Debug)]
struct Exit(u8);

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "exit {}", self.0)
    }
}

impl std::error::Error for Exit {}

pub fn main<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let filter = EnvFilter::try_from_env(LOG_ENV).unwrap_or_else(|_| EnvFilter::new("warn"));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => match e.downcast_ref::<Exit>() {
            Some(Exit(code)) => ExitCode::from(*code),
            None => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        },
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Subject(a) => subject(a, cli.seed),
        Command::Wizard(a) => wizard(a),
        Command::Replay(ReplayCommand::Export(a)) | Command::Export(a) => export(a),
        Command::Replay(ReplayCommand::Seek(a)) => seek(a),
        Command::Validate(a) => validate(a),
        Command::GenFixtures(a) => fixtures(a, cli.seed),
        Command::Bench(a) => bench_cmd(a, cli.seed),
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// Set once Ctrl-C arrives.
fn interrupt_flag() -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let f = flag.clone();
    std::thread::spawn(move || {
        let Ok(rt) = tokio::runtime::Builder::new_current_thread().enable_io().build() else {
            return;
        };
        if rt.block_on(tokio::signal::ctrl_c()).is_ok() {
            f.store(true, Ordering::SeqCst);
        }
    });
    flag
}

fn resolve(host: &str, default_port: u16) -> Result<SocketAddr> {
    let with_port = if host.parse::<SocketAddr>().is_ok() || host.rsplit_once(':').is_some_and(|(h, p)| !h.contains(':') && p.parse::<u16>().is_ok()) {
        host.to_string()
    } else if host.contains(':') && !host.starts_with('[') {
        format!("[{host}]:{default_port}")
    } else {
        format!("{host}:{default_port}")
    };
    with_port
        .to_socket_addrs()
        .with_context(|| format!("cannot resolve wizard address `{host}`"))?
        .next()
        .ok_or_else(|| anyhow!("wizard address `{host}` resolves to nothing"))
}

fn subject(a: SubjectArgs, seed: u64) -> Result<()> {
    let mut rc = RecorderConfig::new(SyntheticFrames::new(a.width, a.height, a.frame_bytes));
    rc.screen_bounds = ScreenBounds { width: a.width, height: a.height };
    rc.auto_capture_period_ms = a.auto_period;
    if let Some(path) = &a.gaze_file {
        let file = File::open(path).with_context(|| format!("opening gaze file {}", path.display()))?;
        rc.gaze_source = Some(Box::new(LineGazeSource::new(BufReader::new(file))));
    }
    rc.validate()?;

    let mut meta = SessionMeta::new(a.session_id, a.label.clone());
    let snapshot = [
        ("seed", seed.to_string()),
        ("wizard", a.wizard.clone().unwrap_or_default()),
        ("offline", a.offline.to_string()),
        ("forward_gaze", a.forward_gaze.to_string()),
        ("auto_period", a.auto_period.to_string()),
        ("frame_port", a.frame_port.to_string()),
        ("control_port", a.control_port.to_string()),
        ("duration", a.duration.to_string()),
        ("events_per_sec", a.events_per_sec.to_string()),
        ("gaze_hz", a.gaze_hz.to_string()),
        ("gaze_file", a.gaze_file.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
        ("request_every", a.request_every.to_string()),
        ("max_send_fps", a.max_send_fps.to_string()),
        ("width", a.width.to_string()),
        ("height", a.height.to_string()),
        ("frame_bytes", a.frame_bytes.to_string()),
    ];
    meta.config_snapshot = snapshot.into_iter().map(|(k, v)| (k.to_string(), v)).collect();

    let mut cfg = SubjectConfig::new(&a.store, &a.session, rc, Box::new(ActionStack::new()));
    cfg.meta = meta;
    cfg.forward_gaze = a.forward_gaze;
    cfg.max_send_fps = a.max_send_fps;
    if let Some(host) = a.wizard.as_deref().filter(|_| !a.offline) {
        let control = resolve(host, a.control_port)?;
        cfg.link = Some(WizardLink::new(control, SocketAddr::new(control.ip(), a.frame_port)));
    }
    let agent = SubjectAgent::start(cfg)?;
    tracing::info!(online = agent.is_online(), session = %a.session.display(), "recording");

    let driver = DriverConfig {
        duration: if a.duration > 0.0 { Duration::from_secs_f64(a.duration) } else { Duration::MAX / 4 },
        events_per_sec: a.events_per_sec,
        gaze_hz: a.gaze_hz,
        request_every: (a.request_every > 0.0).then(|| Duration::from_secs_f64(a.request_every)),
        ..DriverConfig::default()
    };
    let stop = interrupt_flag();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let driven = drive(&agent, &driver, &mut rng, &stop);
    let online = agent.is_online();
    let stats = agent.stats();
    let host_state = agent.host_state();
    let summary = agent.stop()?;
    let driven = driven?;
    print_json(&json!({
        "session": a.session,
        "online": online,
        "records": summary.total_records(),
        "counts": summary.counts,
        "duration_us": summary.duration_us,
        "gaze_rows": summary.gaze_rows,
        "driver": driven,
        "frames_sent": stats.frames_sent,
        "events_forwarded": stats.events_forwarded,
        "commands_applied": stats.commands_applied,
        "playbacks_completed": stats.playbacks_completed,
        "host_state": host_state,
    }))
}

fn wizard(a: WizardArgs) -> Result<()> {
    let mut cfg = WizardConfig::new(&a.mirror);
    cfg.frame_addr = SocketAddr::new(a.bind, a.frame_port);
    cfg.control_addr = SocketAddr::new(a.bind, a.control_port);
    cfg.ui_addr = SocketAddr::new(a.bind, a.ui_port);
    cfg.action_log = a.log;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let handle = ozforge_net::wizard::serve(cfg).await?;
        print_json(&json!({
            "frame_addr": handle.frame_addr,
            "control_addr": handle.control_addr,
            "ui_addr": handle.ui_addr,
        }))?;
        match a.duration {
            Some(secs) => {
                tokio::select! {
                    _ = tokio::time::sleep(Duration::from_secs_f64(secs.max(0.0))) => {}
                    _ = tokio::signal::ctrl_c() => {}
                }
            }
            None => tokio::signal::ctrl_c().await?,
        }
        let snap = handle.snapshot().await?;
        handle.shutdown();
        print_json(&json!({
            "session": snap.session,
            "events_received": snap.events_received,
            "requests_received": snap.requests_received,
            "commands_sent": snap.commands_sent,
            "link": snap.link,
            "filter_latency": snap.filter_latency,
        }))
    })
}

fn export(a: ExportArgs) -> Result<()> {
    let timeline = replay::load(&a.session, &a.fixation.params())?;
    let summary = replay::export(&timeline, a.fps, &a.out)?;
    print_json(&json!({
        "out": a.out,
        "frames_written": summary.frames_written,
        "width": summary.width,
        "height": summary.height,
    }))
}

fn seek(a: SeekArgs) -> Result<()> {
    let timeline = replay::load(&a.session, &a.fixation.params())?;
    print_json(&timeline.seek(a.t_us))
}

fn validate(a: ValidateArgs) -> Result<()> {
    if a.store {
        return match load_store(&a.dir) {
            Ok(store) => {
                println!("ok: {} messages", store.len());
                Ok(())
            }
            Err(e) => {
                eprintln!("{e}");
                Err(Exit(1).into())
            }
        };
    }
    let report = validate_session(&a.dir)?;
    eprint!("{report}");
    if report.is_empty() {
        println!("ok");
        Ok(())
    } else {
        eprintln!("{} error(s)", report.issues.len());
        Err(Exit(1).into())
    }
}

fn fixtures(a: GenArgs, seed: u64) -> Result<()> {
    let spec = FixtureSpec {
        n_messages: a.messages,
        lexicon_depth: a.lexicon_depth,
        lexicon_branching: a.lexicon_branching,
        session_secs: a.session_secs,
        seed,
    };
    let tree = gen_fixtures(&a.out, &spec)?;
    print_json(&json!({
        "root": tree.root,
        "store": tree.store_dir,
        "mirror": tree.mirror_dir,
        "session": tree.session_dir,
    }))
}

fn bench_cmd(a: BenchArgs, seed: u64) -> Result<()> {
    let params = BenchParams {
        frames: a.frames,
        size: a.size,
        loss: a.loss,
        seed,
        fps: a.fps,
        request_every: a.request_every,
        width: a.width,
        height: a.height,
        session_dir: a.session,
    };
    print_json(&bench::run(&params)?)
}
