//! `dualsim` command line. Every stage reads a JSON experiment config;
//! artifacts land in the config's output directory. Exit status is 0 only
//! on success.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dualsim::encoder::EncoderConfig;
use dualsim::error::{Error, Result, Stage};
use dualsim::io;
use dualsim::pipeline::{DataConfig, Experiment, ExperimentConfig};
use dualsim::synthworld::{generate, WorldConfig};
use dualsim_service::{serve, Artifacts, ServeConfig};

#[derive(Parser)]
#[command(name = "dualsim", version, about = "Group-level purchase-rate simulation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mine the policy registry from the mining split.
    Mine(StageArgs),
    /// Train the fitting branch on the mining split.
    Train(StageArgs),
    /// Simulate every evaluation merchant.
    Simulate(StageArgs),
    /// Score the simulated estimates.
    Evaluate(StageArgs),
    /// Mine, train, simulate and evaluate in one go.
    Run(StageArgs),
    /// Run the branch, policy and mining-variant ablation grid.
    Ablate(StageArgs),
    /// Generate a synthetic world plus a ready-to-run experiment config.
    SynthGen(SynthArgs),
    /// Serve the diagnosis HTTP API over trained artifacts.
    Serve(ServeArgs),
}

#[derive(Args)]
struct StageArgs {
    /// Experiment config (JSON).
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides every section seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Fusion weight of the reasoning branch.
    #[arg(long)]
    lambda: Option<f64>,
    /// Monte Carlo draws per merchant.
    #[arg(long)]
    samples: Option<usize>,
    /// Allocate draws to policies by largest remainder.
    #[arg(long)]
    stratified: bool,
    /// Minimum merchants compared for a session to be mined.
    #[arg(long)]
    min_compared: Option<u32>,
    /// Also mine sessions that ended without a purchase or an exit.
    #[arg(long)]
    include_nonterminal: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    Duality,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "default")]
    preset: Preset,
    /// World config (JSON); replaces the preset.
    #[arg(long)]
    world: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trajectories: Option<usize>,
    #[arg(long)]
    users: Option<usize>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Static bearer token; requests without it get 401.
    #[arg(long, env = "DUALSIM_SERVICE_TOKEN")]
    token: Option<String>,
    /// Root of the server-issued simulation seeds.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Session store snapshot, read at startup and written on shutdown.
    #[arg(long)]
    snapshot: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Mine(a) => {
            let (registry, report) = experiment(&a)?.mine()?;
            log::info!("mined {} policies", registry.len());
            print(&report)
        }
        Command::Train(a) => {
            let model = experiment(&a)?.train()?;
            log::info!("trained {} trees", model.model.rounds);
            Ok(())
        }
        Command::Simulate(a) => {
            let estimates = experiment(&a)?.simulate()?;
            log::info!("simulated {} merchants", estimates.len());
            Ok(())
        }
        Command::Evaluate(a) => print(&experiment(&a)?.evaluate()?),
        Command::Run(a) => print(&experiment(&a)?.run()?),
        Command::Ablate(a) => print(&experiment(&a)?.ablate()?),
        Command::SynthGen(a) => synth_gen(&a),
        Command::Serve(a) => {
            let exp = load(&a.config, |_| {})?;
            let artifacts = Artifacts::load(&exp)?;
            log::info!(
                "loaded {} policies and {} merchants",
                artifacts.registry.len(),
                artifacts.merchants.len()
            );
            let cfg = ServeConfig {
                bind: a.bind,
                token: a.token,
                seed: a.seed,
                snapshot: a.snapshot,
            };
            tokio::runtime::Runtime::new()
                .map_err(|e| Error::io("starting runtime", e))?
                .block_on(serve(artifacts, cfg))
        }
    }
}

fn print<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", io::to_pretty_json(value)?);
    Ok(())
}

fn load(path: &Path, patch: impl FnOnce(&mut ExperimentConfig)) -> Result<Experiment> {
    let mut cfg: ExperimentConfig = io::read_json(path).map_err(|e| e.at(Stage::Config))?;
    patch(&mut cfg);
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Experiment::new(cfg, base)
}

fn experiment(a: &StageArgs) -> Result<Experiment> {
    load(&a.config, |cfg| {
        if a.seed.is_some() {
            cfg.seed = a.seed;
        }
        if let Some(l) = a.lambda {
            cfg.aggregation.lambda = l;
        }
        if let Some(n) = a.samples {
            cfg.aggregation.samples = n;
        }
        if a.stratified {
            cfg.aggregation.stratified = true;
        }
        if let Some(m) = a.min_compared {
            cfg.mining.min_compared = m;
        }
        if a.include_nonterminal {
            cfg.mining.require_terminal = false;
        }
    })
}

/// Writes the world files and `experiment.json` pointing at them.
fn synth_gen(a: &SynthArgs) -> Result<()> {
    let mut world = match (&a.world, a.preset) {
        (Some(p), _) => io::read_json(p).map_err(|e| e.at(Stage::Config))?,
        (None, Preset::Default) => WorldConfig::default(),
        (None, Preset::Duality) => WorldConfig::duality(),
    };
    if let Some(s) = a.seed {
        world.seed = s;
    }
    if let Some(n) = a.trajectories {
        world.trajectories = n;
    }
    if let Some(n) = a.users {
        world.users = n;
    }
    let generated = generate(&world)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(format!("creating {}", a.out.display()), e))?;
    generated.write(&a.out)?;
    let mut cfg = ExperimentConfig::new(DataConfig {
        trajectories: "trajectories.jsonl".into(),
        visitors: Some("visitors.jsonl".into()),
        latent_truth: Some("latent_truth.json".into()),
        output_dir: "out".into(),
        registry: None,
        model: None,
        mining_fraction: 0.2,
    });
    cfg.seed = Some(world.seed);
    cfg.mining.k = world.personas.len();
    cfg.mining.min_cluster_size = 30;
    cfg.mining.encoder = EncoderConfig::new(512, 1, 1, 0)?;
    io::write_json(&a.out.join("experiment.json"), &cfg)?;
    log::info!(
        "wrote {} trajectories for {} merchants to {}",
        generated.trajectories.len(),
        generated.visitor_logs.len(),
        a.out.display()
    );
    Ok(())
}
