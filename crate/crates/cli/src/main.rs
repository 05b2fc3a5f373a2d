//! `ttl-itd`: train, evaluate, sweep, frontier, generate, serve.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use ttl_itd::baselines::{PolicyName, PolicySpec};
use ttl_itd::harness::{
    self, emit_reports, evaluate_policies, fqe_config, frontier, max_k, run_all, save_training,
    sweep, train_pipeline, transitions, write_comparison, write_frontier, write_sweep, Evaluator,
    PolicyArtifact, RunConfig, RunManifest, ARTIFACT_FILE, MANIFEST_FILE, TEST_EPISODES_FILE,
};
use ttl_itd::trajectory::{
    generate_synthetic, ingest, write_csv, write_jsonl, DataFormat, Episode, SplitMode,
};
use ttl_itd::Exec;
use ttl_itd_service::{AppState, Loaded};

#[derive(Parser)]
#[command(
    name = "ttl-itd",
    version,
    about = "Cost-aware outreach policies from logged episodes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic outreach logs.
    Generate(GenerateArgs),
    /// Train a policy artifact.
    Train(CommonArgs),
    /// Compare TTL+ITD against the baselines on the test split.
    Evaluate(EvalArgs),
    /// Sensitivity sweep over K, beta and lambda.
    Sweep(EvalArgs),
    /// Efficiency frontier across cost penalties.
    Frontier(EvalArgs),
    /// Train, evaluate, sweep and frontier in one go.
    Run(CommonArgs),
    /// Serve recommendations over HTTP.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ExecArg {
    Sequential,
    Parallel,
}

#[derive(Args)]
struct CommonArgs {
    /// YAML run configuration; defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Split on time order (true) or dataset order (false).
    #[arg(long, action = clap::ArgAction::Set)]
    temporal_split: Option<bool>,
    /// Input log (CSV or JSONL); overrides the config's data path.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    exec: Option<ExecArg>,
}

#[derive(Args)]
struct EvalArgs {
    /// Trained artifact; its manifest and test episodes are read from the
    /// same directory.
    #[arg(long)]
    artifact: PathBuf,
    /// Evaluation episodes; defaults to the test split saved with the artifact.
    #[arg(long)]
    episodes: Option<PathBuf>,
    /// Configuration; defaults to the one recorded in the artifact's manifest.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Policies to compare (evaluate only); all six by default.
    #[arg(long, value_delimiter = ',')]
    policies: Vec<String>,
    #[arg(long, value_enum)]
    exec: Option<ExecArg>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file (.csv or .jsonl) or directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    members: Option<usize>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    artifact: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long, default_value_t = ttl_itd_service::DEFAULT_FRONTIER_CAP)]
    frontier_cap: usize,
}

fn exec_of(arg: Option<ExecArg>) -> Exec {
    match arg {
        Some(ExecArg::Sequential) => Exec::Sequential,
        Some(ExecArg::Parallel) => Exec::Parallel,
        None => Exec::default(),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn common_config(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(temporal) = args.temporal_split {
        cfg.data.split = if temporal {
            SplitMode::Temporal
        } else {
            SplitMode::Index
        };
    }
    if let Some(data) = &args.data {
        cfg.data.path = Some(data.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let started = Instant::now();
    match cli.command {
        Command::Generate(args) => generate(args)?,
        Command::Train(args) => train(args)?,
        Command::Run(args) => run(args)?,
        Command::Evaluate(args) => evaluate(args, Stage::Evaluate)?,
        Command::Sweep(args) => evaluate(args, Stage::Sweep)?,
        Command::Frontier(args) => evaluate(args, Stage::Frontier)?,
        Command::Serve(args) => serve(args)?,
    }
    info!("done in {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.data.synthetic.seed = seed;
    }
    if let Some(n) = args.members {
        cfg.data.synthetic.n_members = n;
    }
    let data = generate_synthetic(&cfg.data.synthetic)?;
    let path = match DataFormat::from_path(&args.out) {
        Some(_) => args.out.clone(),
        None => {
            std::fs::create_dir_all(&args.out)?;
            args.out.join("episodes.csv")
        }
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    match DataFormat::from_path(&path) {
        Some(DataFormat::Jsonl) => write_jsonl(&path, &data.episodes)?,
        _ => write_csv(&path, &data.episodes)?,
    }
    info!(
        "wrote {} episodes ({} steps) to {}",
        data.episodes.len(),
        ttl_itd::trajectory::total_steps(&data.episodes),
        path.display()
    );
    Ok(())
}

fn train(args: CommonArgs) -> Result<()> {
    let cfg = common_config(&args)?;
    let episodes = harness::load_episodes(&cfg)?;
    let out = train_pipeline(&episodes, &cfg, exec_of(args.exec))?;
    save_training(&out, &args.out)?;
    info!(
        "artifact {} written to {}",
        out.manifest.artifact_version,
        args.out.join(ARTIFACT_FILE).display()
    );
    Ok(())
}

fn run(args: CommonArgs) -> Result<()> {
    let cfg = common_config(&args)?;
    let episodes = harness::load_episodes(&cfg)?;
    let out = run_all(&episodes, &cfg, exec_of(args.exec))?;
    save_training(&out.train, &args.out)?;
    for f in emit_reports(&out.reports, &args.out)? {
        info!("wrote {}", f.display());
    }
    Ok(())
}

enum Stage {
    Evaluate,
    Sweep,
    Frontier,
}

fn evaluation_inputs(args: &EvalArgs) -> Result<(PolicyArtifact, RunConfig, Vec<Episode>)> {
    let artifact = PolicyArtifact::load(&args.artifact)
        .with_context(|| format!("loading artifact {}", args.artifact.display()))?;
    let dir = args.artifact.parent().unwrap_or(Path::new("."));
    let mut cfg = match &args.config {
        Some(p) => load_config(Some(p))?,
        None => {
            let manifest = dir.join(MANIFEST_FILE);
            if manifest.exists() {
                RunManifest::load(&manifest)?.config
            } else {
                RunConfig {
                    dials: artifact.dials.clone(),
                    ..RunConfig::default()
                }
            }
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let eps_path = args
        .episodes
        .clone()
        .unwrap_or_else(|| dir.join(TEST_EPISODES_FILE));
    if !eps_path.exists() {
        bail!(
            "evaluation episodes not found at {}; pass --episodes",
            eps_path.display()
        );
    }
    let format = DataFormat::from_path(&eps_path).unwrap_or(DataFormat::Jsonl);
    let episodes = ingest(&eps_path, format, artifact.action_count)?;
    Ok((artifact, cfg, episodes))
}

fn evaluate(args: EvalArgs, stage: Stage) -> Result<()> {
    let exec = exec_of(args.exec);
    let (artifact, cfg, episodes) = evaluation_inputs(&args)?;
    let data = transitions(&artifact, &episodes);
    let k = match stage {
        Stage::Sweep => max_k(&cfg),
        _ => cfg.dials.k.max(artifact.dials.k),
    };
    let ev = Evaluator::new(&artifact, data, k, exec)?;
    std::fs::create_dir_all(&args.out)?;
    let files = match stage {
        Stage::Evaluate => {
            let specs = if args.policies.is_empty() {
                harness::default_specs()
            } else {
                args.policies
                    .iter()
                    .map(|p| p.parse::<PolicyName>().map(PolicySpec::new))
                    .collect::<ttl_itd::Result<Vec<_>>>()?
            };
            let (rows, warnings) = evaluate_policies(&ev, &specs, &cfg.model, cfg.seed, exec)?;
            for w in warnings {
                log::warn!("{w}");
            }
            write_comparison(&args.out, &rows)?
        }
        Stage::Sweep => write_sweep(
            &args.out,
            &sweep(&ev, &cfg.sweep, &cfg.dials, &cfg.model, exec)?,
        )?,
        Stage::Frontier => {
            let fqe = fqe_config(&cfg.model, cfg.model.fqe_iterations);
            write_frontier(
                &args.out,
                &frontier(&ev, &cfg.sweep.lambda_costs, &cfg.dials, &fqe, exec)?,
            )?
        }
    };
    for f in files {
        info!("wrote {}", f.display());
    }
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let loaded = match &args.artifact {
        Some(p) => Some(Loaded::from_paths(p, args.episodes.as_deref())?),
        None => None,
    };
    let state = Arc::new(AppState::new(loaded).with_frontier_cap(args.frontier_cap));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(ttl_itd_service::serve(args.addr, state))?;
    Ok(())
}
