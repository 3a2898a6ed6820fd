//! Synchronous federated round loop: broadcast, parallel client training,
//! strategy-specific aggregation, per-round evaluation, and best-round
//! selection on validation performance.

use crate::client::{
    train_local_round, ClientState, DeviatedPackage, FairnessLossConfig, TrainOptions,
};
use crate::error::{Error, Result};
use crate::gnn::{gcn_forward, ModelParams};
use crate::graph::Graph;
use crate::metrics::{
    build_group_tags, macro_f1, metrics_bundle, GroupKind, GroupTags, MetricsBundle,
};
use crate::server::{
    aggregate_round, build_deviated_packages, cluster_updates, pair_deviated, ClusteringResult,
    EtaMode, RoundUploads, ServerConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::time::Instant;

/// GCN normalization kernel used throughout the federation (symmetric).
const KERNEL_R: f64 = 0.5;

/// Aggregation strategy run by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    FairFgl,
    FedAvg,
    FedProx,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::FairFgl => "fairfgl",
            Strategy::FedAvg => "fedavg",
            Strategy::FedProx => "fedprox",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fairfgl" => Ok(Strategy::FairFgl),
            "fedavg" => Ok(Strategy::FedAvg),
            "fedprox" => Ok(Strategy::FedProx),
            other => Err(Error::InvalidConfig(format!(
                "unknown strategy {other:?} (expected fairfgl, fedavg, or fedprox)"
            ))),
        }
    }
}

/// Full configuration of one federation run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub strategy: Strategy,
    /// Communication rounds `T`.
    pub rounds: usize,
    pub num_clients: usize,
    pub hidden_dim: usize,
    pub lr: f64,
    pub fairness: FairnessLossConfig,
    pub server: ServerConfig,
    pub fedprox_mu: f64,
    pub seed: u64,
    /// Received-global retention for the history model.
    pub history_window: usize,
    /// Disable to force `α ≡ 0` (no history fusion).
    pub fusion_enabled: bool,
    /// Disable to run without deviated packages.
    pub use_deviated: bool,
}

impl RunConfig {
    pub fn new(strategy: Strategy, num_clients: usize, seed: u64) -> Self {
        RunConfig {
            strategy,
            rounds: 150,
            num_clients,
            hidden_dim: 64,
            lr: 0.05,
            fairness: FairnessLossConfig::default(),
            server: ServerConfig::default(),
            fedprox_mu: 0.01,
            seed,
            history_window: 5,
            fusion_enabled: true,
            use_deviated: true,
        }
    }
}

/// Metrics for one completed round, evaluated with the freshly aggregated
/// global model.
#[derive(Debug, Clone)]
pub struct RoundReport {
    pub round: usize,
    pub val: MetricsBundle,
    pub test: MetricsBundle,
    pub per_client_test: Vec<MetricsBundle>,
    /// Mean over clients of the final local epoch's composite loss.
    pub mean_train_loss: f64,
    /// Coordinates uploaded by each client this round.
    pub transmitted_coords: Vec<usize>,
    pub wall_clock_secs: f64,
}

/// Outcome of a full run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub rounds: Vec<RoundReport>,
    pub best_round: usize,
    pub best_val: MetricsBundle,
    pub best_test: MetricsBundle,
    pub tags: GroupTags,
}

/// Index of the round with the highest validation overall F1 (earliest on
/// ties).
pub fn select_best_round(reports: &[RoundReport]) -> usize {
    assert!(!reports.is_empty(), "need at least one completed round");
    let mut best = 0usize;
    for (i, r) in reports.iter().enumerate() {
        if r.val.overall_f1 > reports[best].val.overall_f1 {
            best = i;
        }
    }
    best
}

/// First round whose validation overall F1 reaches `target` times the
/// run's best validation overall F1.
pub fn convergence_summary(reports: &[RoundReport], target: f64) -> usize {
    assert!(target > 0.0 && target <= 1.0, "target must be in (0, 1]");
    let best = reports[select_best_round(reports)].val.overall_f1;
    reports
        .iter()
        .position(|r| r.val.overall_f1 >= target * best)
        .expect("the best round itself reaches the target")
}

fn validate_inputs(datasets: &[Graph], cfg: &RunConfig) -> Result<()> {
    if datasets.is_empty() {
        return Err(Error::InvalidConfig(
            "at least one client graph required".into(),
        ));
    }
    if datasets.len() != cfg.num_clients {
        return Err(Error::InvalidConfig(format!(
            "config expects {} clients but {} graphs were provided",
            cfg.num_clients,
            datasets.len()
        )));
    }
    if cfg.rounds == 0 {
        return Err(Error::InvalidConfig("rounds must be >= 1".into()));
    }
    if cfg.hidden_dim == 0 {
        return Err(Error::InvalidConfig("hidden_dim must be >= 1".into()));
    }
    if cfg.lr <= 0.0 {
        return Err(Error::InvalidConfig("lr must be > 0".into()));
    }
    if cfg.fedprox_mu < 0.0 {
        return Err(Error::InvalidConfig("fedprox_mu must be >= 0".into()));
    }
    if cfg.history_window == 0 {
        return Err(Error::InvalidConfig("history_window must be >= 1".into()));
    }
    cfg.fairness.validate()?;
    cfg.server.validate()?;
    let f = datasets[0].feature_dim();
    let c = datasets[0].num_classes;
    for (i, g) in datasets.iter().enumerate() {
        if g.feature_dim() != f || g.num_classes != c {
            return Err(Error::InvalidConfig(format!(
                "client {i} has inconsistent feature dim or class count"
            )));
        }
        if g.num_train() == 0 {
            return Err(Error::InvalidConfig(format!(
                "client {i} has no train nodes"
            )));
        }
    }
    let any_val = datasets.iter().any(|g| g.val_mask.iter().any(|&m| m));
    let any_test = datasets.iter().any(|g| g.test_mask.iter().any(|&m| m));
    if !any_val || !any_test {
        return Err(Error::InvalidConfig(
            "evaluation needs at least one val node and one test node across clients".into(),
        ));
    }
    Ok(())
}

fn train_options(cfg: &RunConfig) -> TrainOptions {
    match cfg.strategy {
        Strategy::FairFgl => TrainOptions {
            fairness: cfg.fairness.clone(),
            lr: cfg.lr,
            history_window: cfg.history_window,
            fusion_enabled: cfg.fusion_enabled,
            fedprox_mu: 0.0,
        },
        Strategy::FedAvg => TrainOptions::fedavg(cfg.fairness.local_epochs, cfg.lr),
        Strategy::FedProx => {
            TrainOptions::fedprox(cfg.fairness.local_epochs, cfg.lr, cfg.fedprox_mu)
        }
    }
}

fn argmax_row(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0usize;
    for k in 1..row.len() {
        if row[k] > row[best] {
            best = k;
        }
    }
    best
}

/// Metrics restricted to one client's pooled test entries.
fn client_bundle(
    preds: &[usize],
    labels: &[usize],
    tags: &GroupTags,
    client: usize,
) -> Option<MetricsBundle> {
    let idx: Vec<usize> = (0..tags.len())
        .filter(|&i| tags.entries[i].0 == client)
        .collect();
    if idx.is_empty() {
        return None;
    }
    let p: Vec<usize> = idx.iter().map(|&i| preds[i]).collect();
    let l: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
    let classes: BTreeSet<usize> = l.iter().copied().collect();
    let sub_group = |kind: GroupKind| -> Option<f64> {
        let sel: Vec<usize> = idx
            .iter()
            .copied()
            .filter(|&i| tags.in_group(i, kind))
            .collect();
        if sel.is_empty() {
            return None;
        }
        let sp: Vec<usize> = sel.iter().map(|&i| preds[i]).collect();
        let sl: Vec<usize> = sel.iter().map(|&i| labels[i]).collect();
        let cls: BTreeSet<usize> = sl.iter().copied().collect();
        Some(macro_f1(&sp, &sl, &cls).expect("nonempty"))
    };
    Some(MetricsBundle {
        accuracy: crate::metrics::accuracy(&p, &l).expect("nonempty"),
        overall_f1: macro_f1(&p, &l, &classes).expect("nonempty"),
        min_f1: sub_group(GroupKind::Minority),
        hete_f1: sub_group(GroupKind::Heterophilous),
        hete_min_f1: sub_group(GroupKind::HeteMin),
        per_class_f1: Vec::new(),
    })
}

/// Run the federation, invoking `on_round` after every aggregation with
/// that round's report (the hook is where the CLI appends and flushes its
/// per-round stream).
pub fn run_federation_with(
    datasets: Vec<Graph>,
    cfg: &RunConfig,
    on_round: &mut dyn FnMut(&RoundReport) -> Result<()>,
) -> Result<RunReport> {
    validate_inputs(&datasets, cfg)?;
    let f = datasets[0].feature_dim();
    let c = datasets[0].num_classes;
    let init_alpha_logit = (0.1f64 / 0.9).ln();

    let tags = build_group_tags(&datasets);
    if tags.is_empty() {
        return Err(Error::InvalidConfig("no test nodes to evaluate".into()));
    }

    let mut master_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut global = ModelParams::glorot(f, cfg.hidden_dim, c, &mut master_rng, init_alpha_logit);
    let client_seeds: Vec<u64> = (0..datasets.len()).map(|_| master_rng.gen()).collect();

    let mut states: Vec<ClientState> = datasets
        .into_iter()
        .zip(client_seeds)
        .map(|(g, seed)| ClientState::new(g, KERNEL_R, &global, init_alpha_logit, seed))
        .collect::<Result<_>>()?;

    let opts = train_options(cfg);
    let flat_len = global.flat_len();
    let fedavg_server = ServerConfig {
        eta: EtaMode::Fixed(1.0),
        ..cfg.server.clone()
    };

    let mut deviated: BTreeMap<usize, DeviatedPackage> = BTreeMap::new();
    let mut reports: Vec<RoundReport> = Vec::with_capacity(cfg.rounds);

    for round in 0..cfg.rounds {
        let start = Instant::now();
        let use_dev = cfg.strategy == Strategy::FairFgl && cfg.use_deviated;
        let dev_ref = &deviated;
        let results: Vec<_> = states
            .par_iter_mut()
            .enumerate()
            .map(|(i, state)| {
                let dev = if use_dev { dev_ref.get(&i) } else { None };
                train_local_round(state, &global, dev, &opts)
            })
            .collect();
        let mut updates = Vec::with_capacity(results.len());
        let mut last_losses = Vec::with_capacity(results.len());
        let mut client_models = Vec::with_capacity(results.len());
        for (i, r) in results.into_iter().enumerate() {
            let (update, fused) = r?;
            last_losses.push(*update.train_loss_trace.last().expect("epochs >= 1"));
            updates.push((i, update));
            client_models.push(fused);
        }
        let transmitted: Vec<usize> = updates.iter().map(|(_, u)| u.delta.len()).collect();
        let uploads = RoundUploads::new(round, updates, flat_len)?;

        let (clustering, server_cfg) = match cfg.strategy {
            Strategy::FairFgl => (cluster_updates(&uploads, &cfg.server)?, &cfg.server),
            _ => (
                ClusteringResult {
                    k: 1,
                    assignment: vec![0; uploads.num_clients()],
                    silhouette: None,
                },
                &fedavg_server,
            ),
        };
        let next_global = aggregate_round(&uploads, &clustering, &global, server_cfg)?;

        if use_dev && uploads.num_clients() >= 2 {
            let pairs = pair_deviated(&uploads)?;
            // Deviated models build on the pre-aggregation global the
            // deltas were trained against.
            deviated = build_deviated_packages(&global, &uploads, &pairs)?;
        }
        global = next_global;

        // Evaluate each client's final model of the round on its own
        // val/test nodes (the client-side model is what serves local
        // nodes; for the fairness strategy that is the fused model).
        let mut val_preds = Vec::new();
        let mut val_labels = Vec::new();
        let mut test_preds = Vec::new();
        let mut test_labels = Vec::new();
        for (state, model) in states.iter().zip(&client_models) {
            let g = &state.subgraph;
            let cache = gcn_forward(model, &state.norm_adj, &g.features);
            for v in 0..g.num_nodes {
                if g.val_mask[v] {
                    val_preds.push(argmax_row(cache.logits.row(v)));
                    val_labels.push(g.labels[v]);
                } else if g.test_mask[v] {
                    test_preds.push(argmax_row(cache.logits.row(v)));
                    test_labels.push(g.labels[v]);
                }
            }
        }
        let val = metrics_bundle(&val_preds, &val_labels, c, None)?;
        let test = metrics_bundle(&test_preds, &test_labels, c, Some(&tags))?;
        let per_client_test: Vec<MetricsBundle> = (0..states.len())
            .filter_map(|i| client_bundle(&test_preds, &test_labels, &tags, i))
            .collect();
        let report = RoundReport {
            round,
            val,
            test,
            per_client_test,
            mean_train_loss: last_losses.iter().sum::<f64>() / last_losses.len() as f64,
            transmitted_coords: transmitted,
            wall_clock_secs: start.elapsed().as_secs_f64(),
        };
        on_round(&report)?;
        reports.push(report);
    }

    let best_round = select_best_round(&reports);
    Ok(RunReport {
        best_val: reports[best_round].val.clone(),
        best_test: reports[best_round].test.clone(),
        best_round,
        rounds: reports,
        tags,
    })
}

/// [`run_federation_with`] without a per-round hook.
pub fn run_federation(datasets: Vec<Graph>, cfg: &RunConfig) -> Result<RunReport> {
    run_federation_with(datasets, cfg, &mut |_| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::sbm::{generate_sbm, SbmConfig};
    use crate::graph::{induce_subgraph, partition::partition_fennel};
    use approx::assert_abs_diff_eq;

    fn sbm_clients(seed: u64, n_clients: usize) -> Vec<Graph> {
        let cfg = SbmConfig {
            block_sizes: vec![40, 25, 15],
            p_in: 0.2,
            p_out: 0.03,
            feature_dim: 6,
            seed,
            ..SbmConfig::default()
        };
        let g = generate_sbm(&cfg).unwrap();
        let assignment = partition_fennel(&g, n_clients, 1.0).unwrap();
        assignment
            .part_members()
            .iter()
            .map(|nodes| induce_subgraph(&g, nodes).unwrap())
            .collect()
    }

    fn quick_cfg(strategy: Strategy, n_clients: usize, seed: u64) -> RunConfig {
        let mut cfg = RunConfig::new(strategy, n_clients, seed);
        cfg.rounds = 4;
        cfg.hidden_dim = 8;
        cfg.fairness.local_epochs = 2;
        cfg.fairness.fine_tune_epochs = 1;
        cfg
    }

    #[test]
    fn run_is_deterministic() {
        let cfg = quick_cfg(Strategy::FairFgl, 3, 5);
        let a = run_federation(sbm_clients(1, 3), &cfg).unwrap();
        let b = run_federation(sbm_clients(1, 3), &cfg).unwrap();
        assert_eq!(a.best_round, b.best_round);
        for (ra, rb) in a.rounds.iter().zip(&b.rounds) {
            assert_eq!(ra.val, rb.val);
            assert_eq!(ra.test, rb.test);
            assert_eq!(ra.mean_train_loss, rb.mean_train_loss);
        }
    }

    #[test]
    fn disabled_fairfgl_reduces_to_fedavg_bitwise() {
        let mut fair = quick_cfg(Strategy::FairFgl, 3, 9);
        fair.fairness.lambda_distill = 0.0;
        fair.fairness.lambda_struct = 0.0;
        fair.fairness.topk_ratio = 1.0;
        fair.fairness.fine_tune_epochs = 0;
        fair.history_window = 1;
        fair.fusion_enabled = false;
        fair.use_deviated = false;
        fair.server.k_max = 1;
        fair.server.eta = EtaMode::Fixed(1.0);
        let avg = quick_cfg(Strategy::FedAvg, 3, 9);
        let a = run_federation(sbm_clients(2, 3), &fair).unwrap();
        let b = run_federation(sbm_clients(2, 3), &avg).unwrap();
        for (ra, rb) in a.rounds.iter().zip(&b.rounds) {
            assert_eq!(ra.val, rb.val);
            assert_eq!(ra.test, rb.test);
            assert_eq!(ra.mean_train_loss, rb.mean_train_loss);
        }
    }

    #[test]
    fn fedprox_zero_mu_equals_fedavg() {
        let mut prox = quick_cfg(Strategy::FedProx, 3, 2);
        prox.fedprox_mu = 0.0;
        let avg = quick_cfg(Strategy::FedAvg, 3, 2);
        let a = run_federation(sbm_clients(4, 3), &prox).unwrap();
        let b = run_federation(sbm_clients(4, 3), &avg).unwrap();
        for (ra, rb) in a.rounds.iter().zip(&b.rounds) {
            assert_eq!(ra.val, rb.val);
            assert_eq!(ra.mean_train_loss, rb.mean_train_loss);
        }
    }

    #[test]
    fn single_client_fedavg_tracks_local_model() {
        // With one client the weighted mean of Eq.-4 style aggregation is
        // the client's own local model.
        let clients = sbm_clients(6, 3);
        let solo = vec![clients.into_iter().next().unwrap()];
        let mut cfg = quick_cfg(Strategy::FedAvg, 1, 3);
        cfg.rounds = 3;
        let report = run_federation(solo.clone(), &cfg).unwrap();

        // Independent replay: plain local training on the same schedule.
        use crate::client::TrainOptions;
        let init_alpha = (0.1f64 / 0.9).ln();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut global = ModelParams::glorot(
            solo[0].feature_dim(),
            cfg.hidden_dim,
            solo[0].num_classes,
            &mut rng,
            init_alpha,
        );
        let mut state = ClientState::new(solo[0].clone(), 0.5, &global, init_alpha, 0).unwrap();
        let opts = TrainOptions::fedavg(2, cfg.lr);
        for _ in 0..3 {
            let before = global.clone();
            let (_, _) = train_local_round(&mut state, &before, None, &opts).unwrap();
            global = ModelParams {
                w1: state.local_params.w1.clone(),
                w2: state.local_params.w2.clone(),
                alpha_logit: global.alpha_logit,
            };
        }
        // The harness global equals the replayed local model to float
        // accumulation error.
        let cache = gcn_forward(&global, &state.norm_adj, &state.subgraph.features);
        let mut preds = Vec::new();
        let mut labels = Vec::new();
        for v in 0..state.subgraph.num_nodes {
            if state.subgraph.val_mask[v] {
                preds.push(argmax_row(cache.logits.row(v)));
                labels.push(state.subgraph.labels[v]);
            }
        }
        let replay_f1 =
            macro_f1(&preds, &labels, &(0..state.subgraph.num_classes).collect()).unwrap();
        assert_abs_diff_eq!(
            report.rounds.last().unwrap().val.overall_f1,
            replay_f1,
            epsilon = 1e-9
        );
    }

    #[test]
    fn best_round_prefers_earliest_tie() {
        let mk = |f1: f64| RoundReport {
            round: 0,
            val: MetricsBundle {
                accuracy: 0.0,
                overall_f1: f1,
                min_f1: None,
                hete_f1: None,
                hete_min_f1: None,
                per_class_f1: vec![],
            },
            test: MetricsBundle {
                accuracy: 0.0,
                overall_f1: 0.0,
                min_f1: None,
                hete_f1: None,
                hete_min_f1: None,
                per_class_f1: vec![],
            },
            per_client_test: vec![],
            mean_train_loss: 0.0,
            transmitted_coords: vec![],
            wall_clock_secs: 0.0,
        };
        let reports: Vec<RoundReport> = [0.3, 0.5, 0.5].iter().map(|&f| mk(f)).collect();
        assert_eq!(select_best_round(&reports), 1);
        let single = vec![mk(0.7)];
        assert_eq!(select_best_round(&single), 0);
        let rising: Vec<RoundReport> = [0.1, 0.2, 0.4].iter().map(|&f| mk(f)).collect();
        assert_eq!(select_best_round(&rising), 2);

        // Convergence: trace [0.2, 0.4, 0.5] reaches 80% of best at round 1.
        let trace: Vec<RoundReport> = [0.2, 0.4, 0.5].iter().map(|&f| mk(f)).collect();
        assert_eq!(convergence_summary(&trace, 0.8), 1);
        assert_eq!(convergence_summary(&trace, 1.0), 2);
        let flat: Vec<RoundReport> = [0.4, 0.4].iter().map(|&f| mk(f)).collect();
        assert_eq!(convergence_summary(&flat, 0.9), 0);
    }

    #[test]
    fn inconsistent_clients_rejected_before_round_one() {
        let mut clients = sbm_clients(1, 2);
        // Give the second client a different feature dimension.
        let other = generate_sbm(&SbmConfig {
            block_sizes: vec![10, 10],
            feature_dim: 3,
            seed: 0,
            ..SbmConfig::default()
        })
        .unwrap();
        clients[1] = other;
        let cfg = quick_cfg(Strategy::FedAvg, 2, 0);
        assert!(run_federation(clients, &cfg).is_err());
    }

    #[test]
    fn transmitted_coords_respect_topk() {
        let mut cfg = quick_cfg(Strategy::FairFgl, 3, 1);
        cfg.fairness.topk_ratio = 0.4;
        let report = run_federation(sbm_clients(3, 3), &cfg).unwrap();
        let p = 6 * cfg.hidden_dim + cfg.hidden_dim * 3;
        let expect = (0.4 * p as f64).ceil() as usize;
        for round in &report.rounds {
            for &sent in &round.transmitted_coords {
                assert_eq!(sent, expect);
            }
        }
    }
}
