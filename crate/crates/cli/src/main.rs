use std::collections::BTreeMap;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use ghostarm_core::capture::{CaptureConfig, CaptureSession};
use ghostarm_core::dataset::{
    list_episodes, read_episode, write_episode, ActionSpace, DemoEpisode, NormalizationStats,
};
use ghostarm_core::executor::{run_policy_loop, ExecutorConfig, FeedbackSource, ReplayPolicy, VecSink};
use ghostarm_core::kinematics::ArmModel;
use ghostarm_core::scripted::{
    pickplace, pickplace_with_obstacle, run_capture, stack, Detour, RecipeParams, RunOptions, ScriptedTrajectory,
};
use ghostarm_core::validator::{render_table, replay_validate, summarize, ValidateOptions};
use ghostarm_core::workspace::Scene;
use ghostarm_gateway::{Gateway, SharedConfig};

#[derive(Parser)]
#[command(
    name = "ghostarm",
    version,
    about = "Record, validate and replay robot demonstrations captured through a simulated arm overlay"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum RecipeName {
    Pickplace,
    Stack,
    PickplaceWall,
}

#[derive(Clone, Copy, ValueEnum)]
enum Space {
    Joint,
    EePose,
}

impl From<Space> for ActionSpace {
    fn from(s: Space) -> Self {
        match s {
            Space::Joint => ActionSpace::Joint,
            Space::EePose => ActionSpace::EePose,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a task recipe (scene, hand script, arm and executor configs) to a directory.
    Recipe {
        #[arg(value_enum)]
        name: RecipeName,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Place objects randomly inside their regions.
        #[arg(long)]
        randomize: bool,
    },
    /// Drive a capture session from a scripted hand trajectory and save the episodes.
    Record {
        #[arg(long)]
        scripted: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Arm description; UR3e when omitted.
        #[arg(long)]
        arm: Option<PathBuf>,
        #[arg(long, default_value_t = 30.0)]
        hand_rate: f64,
        /// Climb to this height and around obstacles instead of stalling on a freeze.
        #[arg(long)]
        detour_height: Option<f64>,
    },
    /// Re-check every episode kinematically and print the success rate.
    Validate {
        /// An episode directory or a directory of episodes.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        arm: Option<PathBuf>,
        /// Also write the reports and summary as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        allow_scene_mismatch: bool,
    },
    /// Play an episode's actions through the chunked executor and write the trace.
    Replay {
        #[arg(long)]
        episode: PathBuf,
        /// Executor configuration; defaults to 25 Hz, 25-step replans, horizon 100.
        #[arg(long)]
        schedule: Option<PathBuf>,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_enum, default_value = "joint")]
        space: Space,
    },
    /// Fit per-dimension action normalization over a dataset.
    Normalize {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "joint")]
        space: Space,
        #[arg(long, default_value_t = 100)]
        horizon: usize,
    },
    /// Run the WebSocket capture gateway.
    Serve {
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
        /// Scene manifest; repeat to offer several. The first is the default.
        #[arg(long, required = true)]
        scene: Vec<PathBuf>,
        #[arg(long)]
        arm: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Seconds without client messages before a session is closed.
        #[arg(long, default_value_t = 30.0)]
        idle_timeout: f64,
        /// Serve a static web client from this directory.
        #[arg(long)]
        serve_ui: Option<PathBuf>,
    },
}

fn load_arm(path: Option<&Path>) -> Result<ArmModel> {
    match path {
        Some(p) => ArmModel::load(p).with_context(|| format!("loading arm {}", p.display())),
        None => Ok(ArmModel::ur3e()),
    }
}

fn load_scene(path: &Path) -> Result<Scene> {
    Scene::load(path).with_context(|| format!("loading scene {}", path.display()))
}

/// A single episode directory, or every episode under a dataset root.
fn load_dataset(path: &Path) -> Result<Vec<DemoEpisode>> {
    let dirs = if path.join("manifest.toml").is_file() {
        vec![path.to_path_buf()]
    } else {
        list_episodes(path).with_context(|| format!("listing {}", path.display()))?
    };
    if dirs.is_empty() {
        bail!("no episodes under {}", path.display());
    }
    dirs.iter()
        .map(|d| read_episode(d).with_context(|| format!("reading {}", d.display())))
        .collect()
}

fn recipe(name: RecipeName, out: &Path, seed: u64, randomize: bool) -> Result<()> {
    let params = RecipeParams {
        seed,
        randomize,
        ..Default::default()
    };
    let bundle = match name {
        RecipeName::Pickplace => pickplace(&params),
        RecipeName::Stack => stack(&params),
        RecipeName::PickplaceWall => pickplace_with_obstacle(&params),
    };
    std::fs::create_dir_all(out)?;
    let scene = bundle.scene.save(out)?;
    let script = out.join(format!("{}.hand.toml", bundle.name));
    bundle.trajectory.save(&script)?;
    std::fs::write(out.join("ur3e.toml"), ArmModel::ur3e().to_toml())?;
    std::fs::write(out.join("executor.toml"), ExecutorConfig::default().to_toml())?;
    println!("scene    {}", scene.display());
    println!("script   {}", script.display());
    println!("arm      {}", out.join("ur3e.toml").display());
    println!("executor {}", out.join("executor.toml").display());
    if let Some(d) = bundle.detour {
        println!("record with --detour-height {}", d.height);
    }
    Ok(())
}

fn record(
    scripted: &Path,
    scene: &Path,
    out: &Path,
    arm: Option<&Path>,
    hand_rate: f64,
    detour_height: Option<f64>,
) -> Result<()> {
    let trajectory = ScriptedTrajectory::load(scripted).with_context(|| format!("loading {}", scripted.display()))?;
    let scene = Arc::new(load_scene(scene)?);
    let model = load_arm(arm)?;
    let id = scripted
        .file_name()
        .and_then(|n| n.to_str())
        .map_or("scripted", |n| n.split('.').next().unwrap_or(n))
        .to_string();
    let mut session = CaptureSession::calibrated(model, scene, CaptureConfig::default(), id);
    let options = RunOptions {
        hand_rate,
        record: true,
        detour: detour_height.map(|height| Detour {
            height,
            ..Default::default()
        }),
    };
    let run = run_capture(&mut session, &trajectory, options)?;
    for (t, reason) in &run.rejected_commands {
        eprintln!("command refused at {t:.2} s: {reason}");
    }
    if run.episodes.is_empty() {
        bail!("no episode was recorded");
    }
    for ep in &run.episodes {
        let path = write_episode(ep, out)?;
        println!(
            "{}  {} samples  {:.1} s  {}",
            ep.episode_id,
            ep.len(),
            ep.duration(),
            path.display()
        );
    }
    println!("freezes {}  detours {}", run.freezes, run.detours);
    Ok(())
}

fn validate(dataset: &Path, scene: &Path, arm: Option<&Path>, report: Option<&Path>, allow: bool) -> Result<bool> {
    let scene = load_scene(scene)?;
    let model = load_arm(arm)?;
    let options = ValidateOptions {
        allow_scene_mismatch: allow,
    };
    let reports = load_dataset(dataset)?
        .iter()
        .map(|ep| replay_validate(ep, &scene, &model, options))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = summarize(&reports)?;
    print!("{}", render_table(&reports, &summary));
    if let Some(path) = report {
        let json = serde_json::json!({ "summary": summary, "reports": reports });
        std::fs::write(path, serde_json::to_string_pretty(&json)?)?;
    }
    Ok(summary.success_count == summary.episode_count)
}

fn replay(episode: &Path, schedule: Option<&Path>, trace: &Path, space: ActionSpace) -> Result<()> {
    let episode = read_episode(episode).with_context(|| format!("reading {}", episode.display()))?;
    let config = match schedule {
        Some(p) => ExecutorConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExecutorConfig::default(),
    };
    let mut policy = ReplayPolicy::from_episode(&episode, space, config.schedule.control_rate)?;
    let mut sink = VecSink::default();
    let ticks = policy.len() as u64;
    let result = run_policy_loop(&mut policy, &config, ticks, &mut FeedbackSource, &mut sink)?;
    result.save(trace)?;
    println!(
        "{}: {} queries, {} actions at {} Hz, trace {}",
        episode.episode_id,
        result.query_count(),
        sink.actions.len(),
        config.schedule.control_rate,
        trace.display()
    );
    Ok(())
}

fn normalize(dataset: &Path, out: &Path, space: ActionSpace, horizon: usize) -> Result<()> {
    let episodes = load_dataset(dataset)?;
    let stats = NormalizationStats::fit(&episodes, space, horizon)?;
    stats.save(out)?;
    println!(
        "{} episodes, {} dimensions, {}",
        episodes.len(),
        stats.mean.len(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
async fn serve(
    port: u16,
    bind: IpAddr,
    scenes: &[PathBuf],
    arm: Option<&Path>,
    out: &Path,
    idle_timeout: f64,
    serve_ui: Option<PathBuf>,
) -> Result<()> {
    let mut library = BTreeMap::new();
    let mut default_scene = None;
    for path in scenes {
        let scene = load_scene(path)?;
        default_scene.get_or_insert_with(|| scene.id.clone());
        if library.insert(scene.id.clone(), Arc::new(scene)).is_some() {
            bail!("scene id from {} is loaded twice", path.display());
        }
    }
    if idle_timeout.is_nan() || idle_timeout <= 0.0 {
        bail!("--idle-timeout must be positive");
    }
    let shared = SharedConfig {
        scenes: library,
        default_scene: default_scene.expect("clap requires one scene"),
        model: load_arm(arm)?,
        capture: CaptureConfig::default(),
        out_dir: out.to_path_buf(),
        heartbeat: Duration::from_secs(1),
        idle_timeout: Duration::from_secs_f64(idle_timeout),
    };
    let gateway = Gateway::bind(SocketAddr::new(bind, port), shared, serve_ui).await?;
    println!("listening on ws://{}/ws", gateway.local_addr()?);
    std::io::stdout().flush()?;
    gateway.run().await?;
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Recipe {
            name,
            out,
            seed,
            randomize,
        } => recipe(name, &out, seed, randomize).map(|_| true),
        Command::Record {
            scripted,
            scene,
            out,
            arm,
            hand_rate,
            detour_height,
        } => record(&scripted, &scene, &out, arm.as_deref(), hand_rate, detour_height).map(|_| true),
        Command::Validate {
            dataset,
            scene,
            arm,
            report,
            allow_scene_mismatch,
        } => validate(
            &dataset,
            &scene,
            arm.as_deref(),
            report.as_deref(),
            allow_scene_mismatch,
        ),
        Command::Replay {
            episode,
            schedule,
            trace,
            space,
        } => replay(&episode, schedule.as_deref(), &trace, space.into()).map(|_| true),
        Command::Normalize {
            dataset,
            out,
            space,
            horizon,
        } => normalize(&dataset, &out, space.into(), horizon).map(|_| true),
        Command::Serve {
            port,
            bind,
            scene,
            arm,
            out,
            idle_timeout,
            serve_ui,
        } => tokio::runtime::Runtime::new()
            .context("starting runtime")
            .and_then(|rt| rt.block_on(serve(port, bind, &scene, arm.as_deref(), &out, idle_timeout, serve_ui)))
            .map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
