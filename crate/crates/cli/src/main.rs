//! `fairfgl` — federated graph-learning simulator driver.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage/validation error.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use config::{ExperimentConfig, RunOverrides};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "fairfgl",
    version,
    about = "Federated graph learning simulator: fairness-aware training, sparse top-k uploads, clustered aggregation",
    after_help = "Config values come from the TOML file; command-line flags override them. \
The FAIRFGL_OUT_ROOT environment variable overrides the [output] dir."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Generate the configured synthetic dataset in canonical graph format
    Gen(GenArgs),
    /// Split the dataset into client subgraphs and print class histograms
    Partition(PartitionArgs),
    /// Run federated training for every configured strategy and seed
    Train(TrainArgs),
    /// Aggregate run summaries across seeds into one table
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Experiment config file (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output graph file [default: graph.txt]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Generator seed override [default: dataset seed or first run seed]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PartitionArgs {
    /// Experiment config file (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output assignment file [default: partition.txt]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Partition seed override (label-skew) [default: first run seed]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Default)]
struct TrainArgs {
    /// Experiment config file (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated strategies: fairfgl, fedavg, fedprox [default: fairfgl]
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<String>>,
    /// Comma-separated run seeds [default: 0]
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Communication rounds T [default: 150]
    #[arg(long)]
    rounds: Option<usize>,
    /// Local epochs per round E [default: 3]
    #[arg(long)]
    local_epochs: Option<usize>,
    /// Masked fine-tune epochs after top-k selection [default: 1]
    #[arg(long)]
    fine_tune_epochs: Option<usize>,
    /// GCN hidden dimension h [default: 64]
    #[arg(long)]
    hidden_dim: Option<usize>,
    /// Gradient-descent learning rate [default: 0.05]
    #[arg(long)]
    lr: Option<f64>,
    /// History-distillation weight lambda_d [default: 1.0]
    #[arg(long)]
    lambda_distill: Option<f64>,
    /// Majority-alignment weight lambda_s [default: 1.0]
    #[arg(long)]
    lambda_struct: Option<f64>,
    /// Gradient-surgery margin [default: 0.1]
    #[arg(long)]
    margin: Option<f64>,
    /// Top-k upload ratio in (0,1] [default: 0.4]
    #[arg(long)]
    topk_ratio: Option<f64>,
    /// Homophily threshold tau_h for the homo/hete split [default: 0.5]
    #[arg(long)]
    homophily_threshold: Option<f64>,
    /// FedProx proximal coefficient mu [default: 0.01]
    #[arg(long)]
    fedprox_mu: Option<f64>,
    /// Largest cluster count tried by the silhouette sweep [default: 8]
    #[arg(long)]
    k_max: Option<usize>,
    /// Output directory for run folders [default: runs]
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl TrainArgs {
    fn overrides(&self) -> RunOverrides {
        RunOverrides {
            strategies: self.strategies.clone(),
            seeds: self.seeds.clone(),
            rounds: self.rounds,
            local_epochs: self.local_epochs,
            fine_tune_epochs: self.fine_tune_epochs,
            hidden_dim: self.hidden_dim,
            lr: self.lr,
            lambda_distill: self.lambda_distill,
            lambda_struct: self.lambda_struct,
            margin: self.margin,
            topk_ratio: self.topk_ratio,
            homophily_threshold: self.homophily_threshold,
            fedprox_mu: self.fedprox_mu,
            k_max: self.k_max,
            out_dir: self.out_dir.clone(),
        }
    }
}

#[derive(Args)]
struct ReportArgs {
    /// Experiment config file (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Run-folder root to aggregate [default: the configured output dir]
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn load_validated(path: &std::path::Path, ov: &RunOverrides) -> Result<ExperimentConfig, ExitCode> {
    let mut cfg = ExperimentConfig::load(path).map_err(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(EXIT_USAGE)
    })?;
    cfg.apply(ov);
    cfg.validate().map_err(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(EXIT_USAGE)
    })?;
    Ok(cfg)
}

fn runtime(result: anyhow::Result<()>) -> ExitCode {
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Gen(args) => {
            let cfg = match load_validated(&args.config, &RunOverrides::default()) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let out = args.out.unwrap_or_else(|| PathBuf::from("graph.txt"));
            runtime(commands::cmd_gen(&cfg, &out, args.seed))
        }
        Command::Partition(args) => {
            let cfg = match load_validated(&args.config, &RunOverrides::default()) {
                Ok(c) => c,
                Err(code) => return code,
            };
            if cfg.partition.is_none() {
                eprintln!("error: partition needs a [partition] section");
                return ExitCode::from(EXIT_USAGE);
            }
            let out = args.out.unwrap_or_else(|| PathBuf::from("partition.txt"));
            runtime(commands::cmd_partition(&cfg, &out, args.seed))
        }
        Command::Train(args) => {
            let cfg = match load_validated(&args.config, &args.overrides()) {
                Ok(c) => c,
                Err(code) => return code,
            };
            runtime(commands::cmd_train(&cfg))
        }
        Command::Report(args) => {
            let ov = RunOverrides {
                out_dir: args.out_dir.clone(),
                ..RunOverrides::default()
            };
            let cfg = match load_validated(&args.config, &ov) {
                Ok(c) => c,
                Err(code) => return code,
            };
            runtime(commands::cmd_report(&cfg))
        }
    }
}
