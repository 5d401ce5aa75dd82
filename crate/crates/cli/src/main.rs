//! `prefrl`: run preference-learning experiments, host the labeling service
//! and export learning curves.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use prefrl_core::envs::{EnvConfig, EnvKind};
use prefrl_core::feedback::{build_provider, PromptTemplate, ProviderKind};
use prefrl_core::orchestrator::{
    write_curves_csv, write_force_csv, Experiment, ExperimentConfig, ExperimentLog, FeedbackKind, FeedbackSource, Mode,
    OracleSource, Preset,
};
use prefrl_service::{serve_on, HumanFeedback, Phase, QueryBoard, SystemClock};

#[derive(Parser)]
#[command(name = "prefrl", version, about = "Preference-based RL with highlighted feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train against the synthetic oracle, optionally phrased through an LLM.
    OracleExperiment(RunArgs),
    /// Train with the feedback source named in the config (oracle, llm or human).
    Train(RunArgs),
    /// Train with human feedback collected through the labeling service.
    Serve(RunArgs),
    /// Write curves.csv and force.csv from saved run logs.
    Export(ExportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvArg {
    Pointreach,
    Socialnav,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Predilect,
    Baseline,
    #[value(name = "highlights_only", alias = "highlights-only")]
    HighlightsOnly,
}

#[derive(Clone, Copy, ValueEnum)]
enum LlmArg {
    Mock,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Full,
    Desk,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum)]
    env: Option<EnvArg>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Total query budget.
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in budget used when no config file is given.
    #[arg(long, value_enum, conflicts_with = "config")]
    preset: Option<PresetArg>,
    /// Route feedback text through an LLM provider.
    #[arg(long, value_enum)]
    llm: Option<LlmArg>,
    /// Comma-separated feature names to restrict highlights to.
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
    #[arg(long)]
    timesteps: Option<usize>,
    /// Directory for the log and checkpoints.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue the run checkpointed in `--out`.
    #[arg(long, requires = "out")]
    resume: bool,
    #[arg(long, default_value = "127.0.0.1:8080")]
    serve_addr: SocketAddr,
    /// Built labeling UI to host at `/`.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    /// Seconds to wait for a labeling phase; partial labels are kept.
    #[arg(long)]
    label_timeout: Option<u64>,
}

#[derive(Args)]
struct ExportArgs {
    /// Run directories or log files; directories are searched for log.json.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn env_kind(e: EnvArg) -> EnvKind {
    match e {
        EnvArg::Pointreach => EnvKind::PointReach,
        EnvArg::Socialnav => EnvKind::SocialNav,
    }
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut cfg: ExperimentConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            if let Some(kind) = args.env.map(env_kind) {
                if cfg.env.kind() != kind {
                    cfg.env = EnvConfig::default_for(kind);
                }
            }
            cfg
        }
        None => {
            let kind = args.env.map(env_kind).unwrap_or(EnvKind::PointReach);
            let preset = match args.preset {
                Some(PresetArg::Desk) => Preset::Desk,
                _ => Preset::Full,
            };
            ExperimentConfig::preset(kind, preset)
        }
    };
    if let Some(m) = args.mode {
        cfg.schedule.mode = match m {
            ModeArg::Predilect => Mode::Predilect,
            ModeArg::Baseline => Mode::Baseline,
            ModeArg::HighlightsOnly => Mode::HighlightsOnly,
        };
    }
    if let Some(q) = args.queries {
        cfg.schedule.queries = q;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(t) = args.timesteps {
        cfg.schedule.total_timesteps = t;
    }
    if let Some(f) = &args.features {
        cfg.schedule.features = Some(f.iter().map(|s| s.trim().to_string()).collect());
    }
    if let Some(l) = args.llm {
        cfg.llm.provider = match l {
            LlmArg::Mock => ProviderKind::Mock,
            LlmArg::Remote => ProviderKind::Remote,
        };
        if cfg.schedule.feedback == FeedbackKind::Oracle {
            cfg.schedule.feedback = FeedbackKind::Llm;
        }
    }
    Ok(cfg)
}

fn default_out(cfg: &ExperimentConfig) -> PathBuf {
    PathBuf::from("runs").join(format!("{}-{}-s{}", cfg.env.kind().name(), cfg.schedule.mode.name(), cfg.seed))
}

fn run(args: RunArgs, forced: Option<FeedbackKind>) -> Result<()> {
    let mut cfg = if args.resume {
        let out = args.out.as_deref().expect("clap requires --out with --resume");
        let text = std::fs::read_to_string(out.join("config.json")).context("reading checkpointed config")?;
        serde_json::from_str(&text)?
    } else {
        build_config(&args)?
    };
    if let Some(kind) = forced {
        // The oracle experiment keeps LLM phrasing when one was requested.
        if !(kind == FeedbackKind::Oracle && cfg.schedule.feedback == FeedbackKind::Llm) {
            cfg.schedule.feedback = kind;
        }
    }
    if args.config.is_none() && !args.resume {
        println!("no --config given; using built-in defaults:");
    }
    println!("{}", serde_json::to_string_pretty(&cfg)?);
    cfg.validate()?;

    let out = args.out.clone().unwrap_or_else(|| default_out(&cfg));
    let mut server = None;
    let mut source: Box<dyn FeedbackSource> = if cfg.schedule.feedback == FeedbackKind::Human {
        let provider = build_provider(&cfg.llm)?;
        let template = match cfg.env.kind() {
            EnvKind::PointReach => PromptTemplate::pointreach(),
            EnvKind::SocialNav => PromptTemplate::default(),
        };
        let board = Arc::new(
            QueryBoard::new(Arc::from(provider), template, Arc::new(SystemClock)).with_dataset_dir(out.join("submissions")),
        );
        server = Some((board.clone(), spawn_server(args.serve_addr, board.clone(), args.static_dir.clone())?));
        eprintln!("labeling service on http://{}", args.serve_addr);
        Box::new(HumanFeedback::new(board, args.label_timeout.map(Duration::from_secs)))
    } else {
        Box::new(OracleSource::from_config(&cfg)?)
    };

    let exp = if args.resume {
        Experiment::resume(&out, source.as_mut())?
    } else {
        Experiment::new(cfg, source.as_mut())?.with_output(&out)
    };
    let artifacts = exp.run()?;
    if let Some((board, _handle)) = &server {
        board.set_phase(Phase::Finished);
    }
    if let Some(last) = artifacts.log.final_entry() {
        println!(
            "finished at {} steps: true return {:.3} +/- {:.3}, {} queries labeled",
            last.timestep, last.true_return, last.true_return_stderr, last.queries_labeled
        );
    }
    println!("log and checkpoint written to {}", out.display());
    Ok(())
}

fn spawn_server(addr: SocketAddr, board: Arc<QueryBoard>, static_dir: Option<PathBuf>) -> Result<std::thread::JoinHandle<()>> {
    let runtime = tokio::runtime::Runtime::new()?;
    let listener = runtime.block_on(tokio::net::TcpListener::bind(addr)).with_context(|| format!("binding {addr}"))?;
    Ok(std::thread::spawn(move || {
        if let Err(e) = runtime.block_on(serve_on(listener, board, static_dir)) {
            eprintln!("labeling service stopped: {e}");
        }
    }))
}

fn find_logs(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_file() {
        out.push(path.to_path_buf());
    } else if path.is_dir() {
        let mut entries: Vec<_> = std::fs::read_dir(path)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.path());
        for e in entries {
            let p = e.path();
            if p.is_dir() {
                find_logs(&p, out)?;
            } else if p.file_name().is_some_and(|n| n == "log.json") {
                out.push(p);
            }
        }
    } else {
        bail!("{} does not exist", path.display());
    }
    Ok(())
}

fn export(args: ExportArgs) -> Result<()> {
    let mut paths = vec![];
    for r in &args.runs {
        find_logs(r, &mut paths)?;
    }
    if paths.is_empty() {
        bail!("no log.json found");
    }
    let logs = paths
        .iter()
        .map(|p| ExperimentLog::load(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(&args.out)?;
    write_curves_csv(args.out.join("curves.csv"), &logs)?;
    write_force_csv(args.out.join("force.csv"), &logs)?;
    println!("exported {} runs to {}", logs.len(), args.out.display());
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt().with_env_filter(tracing_subscriber::EnvFilter::from_default_env()).with_writer(std::io::stderr).init();
    match Cli::parse().command {
        Command::OracleExperiment(a) => run(a, Some(FeedbackKind::Oracle)),
        Command::Train(a) => run(a, None),
        Command::Serve(a) => run(a, Some(FeedbackKind::Human)),
        Command::Export(a) => export(a),
    }
}
