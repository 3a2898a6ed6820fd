//! One client's local round: history-model construction and fusion,
//! distillation toward the history model, majority alignment, gradient
//! surgery against the deviated model, and sparse top-k delta extraction.
//!
//! Training never reads a label outside the train mask: every
//! label-dependent step goes through [`Graph::training_labels`] or counts
//! train-mask nodes only.

use crate::error::{Error, Result};
use crate::gnn::{
    composite_loss, gcn_backward, gcn_forward, kl_div_loss, optimizer_step, ForwardCache,
    Gradients, KlTerm, LossSpec, ModelParams, ProxTerm,
};
use crate::graph::{normalize_adjacency, Graph, LabelBasis, NormalizedAdjacency};
use ndarray::{Array1, Array2};
use std::collections::{BTreeMap, BTreeSet};

/// Signed parameter changes at selected flat coordinates of `w1 ∪ w2`.
/// This is the only payload a client uploads; `alpha_logit` is never
/// transmitted.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDelta {
    /// Strictly increasing flat coordinates.
    pub positions: Vec<usize>,
    /// Signed values, parallel to `positions`.
    pub values: Vec<f64>,
}

impl SparseDelta {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Boolean support over the flat parameter coordinates, stored as sorted
/// positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamMask {
    positions: Vec<usize>,
}

impl ParamMask {
    pub fn from_positions(mut positions: Vec<usize>) -> Self {
        positions.sort_unstable();
        positions.dedup();
        ParamMask { positions }
    }

    pub fn from_delta(delta: &SparseDelta) -> Self {
        ParamMask {
            positions: delta.positions.clone(),
        }
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// The deviated model a client received: the previous global model plus
/// its least-similar peer's sparse update, together with that update's
/// support mask.
#[derive(Debug, Clone)]
pub struct DeviatedPackage {
    pub params: ModelParams,
    pub mask: ParamMask,
}

/// What one client sends back to the server after a round.
#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub delta: SparseDelta,
    pub num_train_samples: usize,
    pub train_loss_trace: Vec<f64>,
}

/// Loss weights and schedule knobs for fairness-aware local training.
#[derive(Debug, Clone, PartialEq)]
pub struct FairnessLossConfig {
    /// Weight of the history-model distillation term.
    pub lambda_distill: f64,
    /// Weight of the majority-alignment term.
    pub lambda_struct: f64,
    /// Regulatory pull toward the deviated gradient after projection.
    pub margin: f64,
    /// Fraction of parameters kept by top-k selection, in (0, 1].
    pub topk_ratio: f64,
    /// Homophily threshold splitting majority nodes into homo/hete sets.
    pub homophily_threshold: f64,
    /// Local epochs per round.
    pub local_epochs: usize,
    /// Masked-only epochs after top-k selection.
    pub fine_tune_epochs: usize,
}

impl Default for FairnessLossConfig {
    fn default() -> Self {
        FairnessLossConfig {
            lambda_distill: 1.0,
            lambda_struct: 1.0,
            margin: 0.1,
            topk_ratio: 0.4,
            homophily_threshold: 0.5,
            local_epochs: 3,
            fine_tune_epochs: 1,
        }
    }
}

impl FairnessLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.topk_ratio > 0.0 && self.topk_ratio <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "topk_ratio must be in (0,1], got {}",
                self.topk_ratio
            )));
        }
        if !(0.0..=1.0).contains(&self.homophily_threshold) {
            return Err(Error::InvalidConfig(
                "homophily_threshold must be in [0,1]".into(),
            ));
        }
        if self.lambda_distill < 0.0 || self.lambda_struct < 0.0 || self.margin < 0.0 {
            return Err(Error::InvalidConfig(
                "loss weights and margin must be >= 0".into(),
            ));
        }
        if self.local_epochs == 0 {
            return Err(Error::InvalidConfig("local_epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Full per-round options for one client trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub fairness: FairnessLossConfig,
    pub lr: f64,
    /// How many received global models the client retains.
    pub history_window: usize,
    /// When false the forward pass uses the raw local weights and α gets
    /// no gradient (the `α ≡ 0` baseline setting).
    pub fusion_enabled: bool,
    /// FedProx proximal coefficient; 0 disables the term.
    pub fedprox_mu: f64,
}

impl TrainOptions {
    pub fn fairfgl(fairness: FairnessLossConfig, lr: f64) -> Self {
        TrainOptions {
            fairness,
            lr,
            history_window: 5,
            fusion_enabled: true,
            fedprox_mu: 0.0,
        }
    }

    /// Plain FedAvg local training: every fairness path disabled.
    pub fn fedavg(local_epochs: usize, lr: f64) -> Self {
        TrainOptions {
            fairness: FairnessLossConfig {
                lambda_distill: 0.0,
                lambda_struct: 0.0,
                margin: 0.0,
                topk_ratio: 1.0,
                homophily_threshold: 0.5,
                local_epochs,
                fine_tune_epochs: 0,
            },
            lr,
            history_window: 1,
            fusion_enabled: false,
            fedprox_mu: 0.0,
        }
    }

    pub fn fedprox(local_epochs: usize, lr: f64, mu: f64) -> Self {
        TrainOptions {
            fedprox_mu: mu,
            ..TrainOptions::fedavg(local_epochs, lr)
        }
    }
}

/// Per-client mutable state across rounds.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub subgraph: Graph,
    pub norm_adj: NormalizedAdjacency,
    /// Received global models, most recent last.
    pub global_history: Vec<ModelParams>,
    pub local_params: ModelParams,
    pub rng_seed: u64,
}

impl ClientState {
    /// `init` fixes the parameter shapes; the client keeps its own
    /// `alpha_logit` starting from `init_alpha_logit`.
    pub fn new(
        subgraph: Graph,
        kernel_r: f64,
        init: &ModelParams,
        init_alpha_logit: f64,
        rng_seed: u64,
    ) -> Result<Self> {
        if subgraph.num_train() == 0 {
            return Err(Error::InvalidGraph(
                "client subgraph has an empty train mask".into(),
            ));
        }
        let norm_adj = normalize_adjacency(&subgraph, kernel_r);
        let mut local_params = init.clone();
        local_params.alpha_logit = init_alpha_logit;
        Ok(ClientState {
            subgraph,
            norm_adj,
            global_history: Vec::new(),
            local_params,
            rng_seed,
        })
    }
}

/// Elementwise mean of the last `min(5, len)` received global models. The
/// result stays frozen for the round.
pub fn build_history_model(global_history: &[ModelParams]) -> ModelParams {
    assert!(!global_history.is_empty(), "history must be nonempty");
    let take = global_history.len().min(5);
    let recent = &global_history[global_history.len() - take..];
    let mut w1 = recent[0].w1.clone();
    let mut w2 = recent[0].w2.clone();
    for m in &recent[1..] {
        w1 += &m.w1;
        w2 += &m.w2;
    }
    let scale = 1.0 / take as f64;
    ModelParams {
        w1: w1.mapv(|v| v * scale),
        w2: w2.mapv(|v| v * scale),
        alpha_logit: recent.last().unwrap().alpha_logit,
    }
}

/// `W_eff = α·W_hist + (1−α)·W_local` with `α = sigmoid(local.alpha_logit)`.
pub fn fused_params(local: &ModelParams, hist: &ModelParams) -> ModelParams {
    assert!(local.same_shape(hist), "fusion shape mismatch");
    let alpha = local.sigmoid_alpha();
    ModelParams {
        w1: hist.w1.mapv(|h| h * alpha) + local.w1.mapv(|l| l * (1.0 - alpha)),
        w2: hist.w2.mapv(|h| h * alpha) + local.w2.mapv(|l| l * (1.0 - alpha)),
        alpha_logit: local.alpha_logit,
    }
}

/// Classes whose node count strictly exceeds the per-class average over
/// the chosen label basis.
pub fn majority_classes(g: &Graph, basis: LabelBasis) -> BTreeSet<usize> {
    let counts = g.class_counts(basis);
    let total: usize = counts.iter().sum();
    let mean = total as f64 / g.num_classes as f64;
    counts
        .iter()
        .enumerate()
        .filter(|&(_, &cnt)| cnt as f64 > mean)
        .map(|(c, _)| c)
        .collect()
}

/// Homophily of train nodes over train neighbors only. `None` for
/// non-train nodes; an empty admitted neighbor set scores 0.
fn labeled_homophily(g: &Graph) -> Vec<Option<f64>> {
    let labels = g.training_labels();
    (0..g.num_nodes)
        .map(|v| {
            let y = labels[v]?;
            let mut same = 0usize;
            let mut total = 0usize;
            for &u in g.neighbors(v) {
                if let Some(yu) = labels[u] {
                    total += 1;
                    if yu == y {
                        same += 1;
                    }
                }
            }
            Some(if total == 0 {
                0.0
            } else {
                same as f64 / total as f64
            })
        })
        .collect()
}

/// Mean logits per majority class over its homophilous train nodes
/// (labeled-only homophily `≥ tau_h`). Classes with no qualifying node
/// are omitted. Prototypes are detached constants.
pub fn compute_prototypes(
    cache: &ForwardCache,
    g: &Graph,
    majority: &BTreeSet<usize>,
    tau_h: f64,
) -> BTreeMap<usize, Array1<f64>> {
    let homophily = labeled_homophily(g);
    let labels = g.training_labels();
    let mut sums: BTreeMap<usize, (Array1<f64>, usize)> = BTreeMap::new();
    for v in 0..g.num_nodes {
        let (Some(y), Some(h)) = (labels[v], homophily[v]) else {
            continue;
        };
        if !majority.contains(&y) || h < tau_h {
            continue;
        }
        let entry = sums
            .entry(y)
            .or_insert_with(|| (Array1::zeros(cache.logits.ncols()), 0));
        entry.0 += &cache.logits.row(v);
        entry.1 += 1;
    }
    sums.into_iter()
        .map(|(y, (sum, cnt))| (y, sum.mapv(|s| s / cnt as f64)))
        .collect()
}

/// Alignment targets: mask of heterophilous majority train nodes whose
/// class has a prototype, plus the per-node teacher rows (the class
/// prototype). `None` when every hete set is empty.
pub fn alignment_targets(
    g: &Graph,
    prototypes: &BTreeMap<usize, Array1<f64>>,
    tau_h: f64,
) -> Option<(Vec<bool>, Array2<f64>)> {
    if prototypes.is_empty() {
        return None;
    }
    let num_classes = prototypes.values().next().unwrap().len();
    let homophily = labeled_homophily(g);
    let labels = g.training_labels();
    let mut mask = vec![false; g.num_nodes];
    let mut teacher = Array2::zeros((g.num_nodes, num_classes));
    let mut any = false;
    for v in 0..g.num_nodes {
        let (Some(y), Some(h)) = (labels[v], homophily[v]) else {
            continue;
        };
        if h >= tau_h {
            continue;
        }
        if let Some(proto) = prototypes.get(&y) {
            mask[v] = true;
            teacher.row_mut(v).assign(proto);
            any = true;
        }
    }
    any.then_some((mask, teacher))
}

/// Mean `KL(softmax(μ_y) ‖ softmax(h_v))` over all heterophilous majority
/// train nodes with a prototype; 0 when every hete set is empty.
pub fn majority_alignment_loss(
    cache: &ForwardCache,
    g: &Graph,
    prototypes: &BTreeMap<usize, Array1<f64>>,
    tau_h: f64,
) -> f64 {
    match alignment_targets(g, prototypes, tau_h) {
        Some((mask, teacher)) => {
            kl_div_loss(&teacher, &cache.logits, &mask, 1.0).expect("mask nonempty by construction")
        }
        None => 0.0,
    }
}

/// Gradient of the train-mask cross-entropy evaluated at the deviated
/// model's parameters, zeroed outside the activation mask.
pub fn deviated_gradient(
    dev: &DeviatedPackage,
    g: &Graph,
    adj: &NormalizedAdjacency,
) -> Result<Gradients> {
    if g.num_train() == 0 {
        return Err(Error::EmptyMask("deviated gradient needs train nodes"));
    }
    let cache = gcn_forward(&dev.params, adj, &g.features);
    let labels = g.training_labels();
    let spec = LossSpec::ce_only(g.train_mask.clone());
    let full = gcn_backward(&cache, &dev.params, adj, &g.features, &labels, &spec)?;
    let mut masked = Gradients::zeros_like(&dev.params);
    for &i in dev.mask.positions() {
        masked.flat_set(i, full.flat_get(i));
    }
    Ok(masked)
}

/// Conflict-projecting gradient surgery over the masked coordinates.
///
/// With `d = g_local·g_dev` over the mask: if `d ≥ 0` the gradient passes
/// through unchanged; otherwise the conflicting component is projected
/// out and `margin·g_dev/‖g_dev‖` is added back. Unmasked coordinates are
/// copied exactly. A near-zero `‖g_dev‖` disables the correction.
pub fn modify_gradient(
    g_local: &Gradients,
    g_dev: &Gradients,
    mask: &ParamMask,
    margin: f64,
) -> Gradients {
    let gl: Vec<f64> = mask
        .positions()
        .iter()
        .map(|&i| g_local.flat_get(i))
        .collect();
    let gd: Vec<f64> = mask
        .positions()
        .iter()
        .map(|&i| g_dev.flat_get(i))
        .collect();
    let norm_sq: f64 = gd.iter().map(|v| v * v).sum();
    let norm = norm_sq.sqrt();
    if norm < 1e-12 {
        return g_local.clone();
    }
    let d: f64 = gl.iter().zip(&gd).map(|(a, b)| a * b).sum();
    if d >= 0.0 {
        return g_local.clone();
    }
    let mut out = g_local.clone();
    for (k, &i) in mask.positions().iter().enumerate() {
        let corrected = gl[k] - (d / norm_sq) * gd[k] + margin * gd[k] / norm;
        out.flat_set(i, corrected);
    }
    out
}

/// Keep the `⌈topk_ratio·P⌉` coordinates with the largest absolute change
/// `|W_local − W_global|`; ties at the threshold go to the lower
/// coordinate index. Values are the signed changes at the kept positions.
pub fn select_topk_delta(
    local: &ModelParams,
    global: &ModelParams,
    topk_ratio: f64,
) -> SparseDelta {
    assert!(local.same_shape(global), "delta shape mismatch");
    assert!(
        topk_ratio > 0.0 && topk_ratio <= 1.0,
        "topk_ratio must be in (0,1]"
    );
    let p = local.flat_len();
    let keep = ((topk_ratio * p as f64).ceil() as usize).clamp(1, p);
    let deltas: Vec<f64> = (0..p)
        .map(|i| local.flat_get(i) - global.flat_get(i))
        .collect();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        deltas[b]
            .abs()
            .partial_cmp(&deltas[a].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut positions: Vec<usize> = order[..keep].to_vec();
    positions.sort_unstable();
    let values = positions.iter().map(|&i| deltas[i]).collect();
    SparseDelta { positions, values }
}

fn masked_only(grads: &Gradients, positions: &[usize]) -> Gradients {
    let mut out = Gradients {
        d_w1: Array2::zeros(grads.d_w1.dim()),
        d_w2: Array2::zeros(grads.d_w2.dim()),
        d_alpha_logit: 0.0,
    };
    for &i in positions {
        out.flat_set(i, grads.flat_get(i));
    }
    out
}

/// One client round following the fairness-aware schedule:
/// receive the global model, build the frozen history model, run
/// `local_epochs` fused composite-loss epochs with optional gradient
/// surgery, select the top-k delta, fine-tune the selected coordinates,
/// and return the refreshed sparse update plus the final fused model.
pub fn train_local_round(
    state: &mut ClientState,
    global: &ModelParams,
    dev: Option<&DeviatedPackage>,
    opts: &TrainOptions,
) -> Result<(ClientUpdate, ModelParams)> {
    opts.fairness.validate()?;
    if opts.history_window == 0 {
        return Err(Error::InvalidConfig("history_window must be >= 1".into()));
    }
    let cfg = &opts.fairness;
    let g = &state.subgraph;
    let adj = &state.norm_adj;
    let x = &g.features;
    let labels = g.training_labels();

    // Receive the broadcast global model.
    state.global_history.push(global.clone());
    if state.global_history.len() > opts.history_window {
        let drop = state.global_history.len() - opts.history_window;
        state.global_history.drain(..drop);
    }
    state.local_params.w1 = global.w1.clone();
    state.local_params.w2 = global.w2.clone();

    let hist = build_history_model(&state.global_history);
    let unlabeled: Vec<bool> = g.train_mask.iter().map(|&t| !t).collect();
    let distill_teacher = if cfg.lambda_distill > 0.0 && unlabeled.iter().any(|&u| u) {
        Some(gcn_forward(&hist, adj, x).logits)
    } else {
        None
    };
    let majority = majority_classes(g, LabelBasis::TrainOnly);
    let g_dev = match dev {
        Some(pkg) => Some(deviated_gradient(pkg, g, adj)?),
        None => None,
    };

    let make_spec = |cache: &ForwardCache| -> LossSpec {
        let mut spec = LossSpec::ce_only(g.train_mask.clone());
        if let Some(teacher) = &distill_teacher {
            spec.kl_terms.push(KlTerm {
                weight: cfg.lambda_distill,
                teacher_logits: teacher.clone(),
                mask: unlabeled.clone(),
                temperature: 1.0,
            });
        }
        if cfg.lambda_struct > 0.0 && !majority.is_empty() {
            let prototypes = compute_prototypes(cache, g, &majority, cfg.homophily_threshold);
            if let Some((mask, teacher)) =
                alignment_targets(g, &prototypes, cfg.homophily_threshold)
            {
                spec.kl_terms.push(KlTerm {
                    weight: cfg.lambda_struct,
                    teacher_logits: teacher,
                    mask,
                    temperature: 1.0,
                });
            }
        }
        if opts.fedprox_mu > 0.0 {
            spec.prox = Some(ProxTerm {
                mu: opts.fedprox_mu,
                anchor: global.clone(),
            });
        }
        if opts.fusion_enabled {
            spec.fusion = Some(hist.clone());
        }
        spec
    };

    let mut loss_trace = Vec::with_capacity(cfg.local_epochs + cfg.fine_tune_epochs);
    for _ in 0..cfg.local_epochs {
        let eff = if opts.fusion_enabled {
            fused_params(&state.local_params, &hist)
        } else {
            state.local_params.clone()
        };
        let cache = gcn_forward(&eff, adj, x);
        let spec = make_spec(&cache);
        loss_trace.push(composite_loss(&cache, &state.local_params, &labels, &spec)?);
        let mut grads = gcn_backward(&cache, &state.local_params, adj, x, &labels, &spec)?;
        if let (Some(pkg), Some(gd)) = (dev, &g_dev) {
            grads = modify_gradient(&grads, gd, &pkg.mask, cfg.margin);
        }
        state.local_params = optimizer_step(&state.local_params, &grads, opts.lr)?;
    }

    let delta = select_topk_delta(&state.local_params, global, cfg.topk_ratio);

    for _ in 0..cfg.fine_tune_epochs {
        let eff = if opts.fusion_enabled {
            fused_params(&state.local_params, &hist)
        } else {
            state.local_params.clone()
        };
        let cache = gcn_forward(&eff, adj, x);
        let spec = make_spec(&cache);
        loss_trace.push(composite_loss(&cache, &state.local_params, &labels, &spec)?);
        let grads = gcn_backward(&cache, &state.local_params, adj, x, &labels, &spec)?;
        let restricted = masked_only(&grads, &delta.positions);
        state.local_params = optimizer_step(&state.local_params, &restricted, opts.lr)?;
    }

    // Refresh the transmitted values at the fixed positions.
    let values: Vec<f64> = delta
        .positions
        .iter()
        .map(|&i| state.local_params.flat_get(i) - global.flat_get(i))
        .collect();
    let update = ClientUpdate {
        delta: SparseDelta {
            positions: delta.positions,
            values,
        },
        num_train_samples: g.num_train(),
        train_loss_trace: loss_trace,
    };
    let fused_final = if opts.fusion_enabled {
        fused_params(&state.local_params, &hist)
    } else {
        state.local_params.clone()
    };
    Ok((update, fused_final))
}
