//! Experiment configuration: a TOML file with `[dataset]`, `[partition]`,
//! `[run]`, and `[output]` sections. Command-line flags override file
//! values, which override built-in defaults. Unknown keys are rejected.

use anyhow::{bail, Context, Result};
use fairfgl_core::{EtaMode, FairnessLossConfig, RunConfig, SbmConfig, ServerConfig, Strategy};
use serde::Deserialize;
use std::path::{Path, PathBuf};

/// Environment variable overriding `[output] dir`.
pub const OUT_ROOT_ENV: &str = "FAIRFGL_OUT_ROOT";

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Canonical-format graph file.
    pub path: Option<PathBuf>,
    /// Inline synthetic dataset spec (exactly one of `path`/`sbm`).
    pub sbm: Option<SbmSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmSection {
    pub block_sizes: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    #[serde(default = "default_center_scale")]
    pub feature_center_scale: f64,
    #[serde(default = "default_train_frac")]
    pub train_frac: f64,
    #[serde(default = "default_val_frac")]
    pub val_frac: f64,
    /// Fixed generator seed; defaults to the run seed so each federation
    /// seed sees a fresh draw.
    pub seed: Option<u64>,
}

fn default_center_scale() -> f64 {
    1.0
}
fn default_train_frac() -> f64 {
    0.2
}
fn default_val_frac() -> f64 {
    0.4
}

impl SbmSection {
    pub fn to_config(&self, seed: u64) -> SbmConfig {
        SbmConfig {
            block_sizes: self.block_sizes.clone(),
            p_in: self.p_in,
            p_out: self.p_out,
            feature_dim: self.feature_dim,
            feature_center_scale: self.feature_center_scale,
            train_frac: self.train_frac,
            val_frac: self.val_frac,
            seed: self.seed.unwrap_or(seed),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    /// `fennel` or `label-skew`.
    #[serde(default = "default_method")]
    pub method: String,
    pub num_clients: usize,
    #[serde(default = "default_gamma")]
    pub balance_gamma: f64,
    /// Dirichlet concentration for `label-skew`.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Fixed partition seed (label-skew); defaults to the run seed.
    pub seed: Option<u64>,
    /// Precomputed assignment file; skips partitioning when present.
    pub path: Option<PathBuf>,
}

fn default_method() -> String {
    "fennel".into()
}
fn default_gamma() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    0.5
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(default)]
pub struct RunSection {
    pub strategies: Vec<String>,
    pub rounds: usize,
    pub local_epochs: usize,
    pub fine_tune_epochs: usize,
    pub hidden_dim: usize,
    pub lr: f64,
    pub lambda_distill: f64,
    pub lambda_struct: f64,
    pub margin: f64,
    pub topk_ratio: f64,
    pub homophily_threshold: f64,
    pub history_window: usize,
    pub fusion: bool,
    pub deviated: bool,
    pub fedprox_mu: f64,
    /// Cross-cluster rate: the string `"auto"` or a positive number.
    pub eta: toml::Value,
    pub k_max: usize,
    pub kmeans_restarts: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            strategies: vec!["fairfgl".into()],
            rounds: 150,
            local_epochs: 3,
            fine_tune_epochs: 1,
            hidden_dim: 64,
            lr: 0.05,
            lambda_distill: 1.0,
            lambda_struct: 1.0,
            margin: 0.1,
            topk_ratio: 0.4,
            homophily_threshold: 0.5,
            history_window: 5,
            fusion: true,
            deviated: true,
            fedprox_mu: 0.01,
            eta: toml::Value::String("auto".into()),
            k_max: 8,
            kmeans_restarts: 5,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub seeds: Vec<u64>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("runs"),
            seeds: vec![0],
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub dataset: DatasetSection,
    pub partition: Option<PartitionSection>,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Command-line overrides for `[run]`/`[output]` values. `None` means the
/// flag was not given.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub strategies: Option<Vec<String>>,
    pub seeds: Option<Vec<u64>>,
    pub rounds: Option<usize>,
    pub local_epochs: Option<usize>,
    pub fine_tune_epochs: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub lr: Option<f64>,
    pub lambda_distill: Option<f64>,
    pub lambda_struct: Option<f64>,
    pub margin: Option<f64>,
    pub topk_ratio: Option<f64>,
    pub homophily_threshold: Option<f64>,
    pub fedprox_mu: Option<f64>,
    pub k_max: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        Ok(cfg)
    }

    /// Apply CLI precedence: flags beat file values.
    pub fn apply(&mut self, ov: &RunOverrides) {
        macro_rules! set {
            ($field:ident, $target:expr) => {
                if let Some(v) = &ov.$field {
                    $target = v.clone();
                }
            };
        }
        set!(strategies, self.run.strategies);
        set!(seeds, self.output.seeds);
        set!(rounds, self.run.rounds);
        set!(local_epochs, self.run.local_epochs);
        set!(fine_tune_epochs, self.run.fine_tune_epochs);
        set!(hidden_dim, self.run.hidden_dim);
        set!(lr, self.run.lr);
        set!(lambda_distill, self.run.lambda_distill);
        set!(lambda_struct, self.run.lambda_struct);
        set!(margin, self.run.margin);
        set!(topk_ratio, self.run.topk_ratio);
        set!(homophily_threshold, self.run.homophily_threshold);
        set!(fedprox_mu, self.run.fedprox_mu);
        set!(k_max, self.run.k_max);
        set!(out_dir, self.output.dir);
        if let Ok(root) = std::env::var(OUT_ROOT_ENV) {
            if !root.is_empty() {
                self.output.dir = PathBuf::from(root);
            }
        }
    }

    pub fn eta_mode(&self) -> Result<EtaMode> {
        match &self.run.eta {
            toml::Value::String(s) if s == "auto" => Ok(EtaMode::Auto),
            toml::Value::Float(f) if *f > 0.0 => Ok(EtaMode::Fixed(*f)),
            toml::Value::Integer(i) if *i > 0 => Ok(EtaMode::Fixed(*i as f64)),
            other => bail!("eta must be \"auto\" or a positive number, got {other:?}"),
        }
    }

    pub fn strategies(&self) -> Result<Vec<Strategy>> {
        if self.run.strategies.is_empty() {
            bail!("at least one strategy is required");
        }
        self.run
            .strategies
            .iter()
            .map(|s| s.parse::<Strategy>().map_err(Into::into))
            .collect()
    }

    /// Validate everything that does not need the dataset on disk.
    pub fn validate(&self) -> Result<()> {
        match (&self.dataset.path, &self.dataset.sbm) {
            (None, None) => bail!("[dataset] needs either `path` or an `[dataset.sbm]` table"),
            (Some(_), Some(_)) => bail!("[dataset] must set exactly one of `path` / `sbm`"),
            _ => {}
        }
        if let Some(sbm) = &self.dataset.sbm {
            sbm.to_config(0).validate()?;
        }
        if let Some(p) = &self.partition {
            if p.method != "fennel" && p.method != "label-skew" {
                bail!(
                    "partition method must be `fennel` or `label-skew`, got {:?}",
                    p.method
                );
            }
            if p.num_clients < 2 {
                bail!("partitioning needs at least 2 clients (single-client runs bypass partitioning)");
            }
            if p.alpha <= 0.0 {
                bail!("label-skew alpha must be > 0");
            }
        }
        if self.output.seeds.is_empty() {
            bail!("[output] seeds must be nonempty");
        }
        self.strategies()?;
        self.eta_mode()?;
        self.run_config(Strategy::FairFgl, *self.output.seeds.first().unwrap())?;
        Ok(())
    }

    /// Materialize the core run configuration for one strategy and seed.
    pub fn run_config(&self, strategy: Strategy, seed: u64) -> Result<RunConfig> {
        let num_clients = self.partition.as_ref().map_or(1, |p| p.num_clients);
        let cfg = RunConfig {
            strategy,
            rounds: self.run.rounds,
            num_clients,
            hidden_dim: self.run.hidden_dim,
            lr: self.run.lr,
            fairness: FairnessLossConfig {
                lambda_distill: self.run.lambda_distill,
                lambda_struct: self.run.lambda_struct,
                margin: self.run.margin,
                topk_ratio: self.run.topk_ratio,
                homophily_threshold: self.run.homophily_threshold,
                local_epochs: self.run.local_epochs,
                fine_tune_epochs: self.run.fine_tune_epochs,
            },
            server: ServerConfig {
                eta: self.eta_mode()?,
                k_max: self.run.k_max,
                kmeans_restarts: self.run.kmeans_restarts,
                seed,
            },
            fedprox_mu: self.run.fedprox_mu,
            seed,
            history_window: self.run.history_window,
            fusion_enabled: self.run.fusion,
            use_deviated: self.run.deviated,
        };
        cfg.fairness.validate()?;
        cfg.server.validate()?;
        if cfg.rounds == 0 {
            bail!("rounds must be >= 1");
        }
        if cfg.lr <= 0.0 {
            bail!("lr must be > 0");
        }
        Ok(cfg)
    }

    pub fn run_dir(&self, strategy: Strategy, seed: u64) -> PathBuf {
        self.output
            .dir
            .join(format!("{}-seed{}", strategy.name(), seed))
    }
}
