//! Dense/sparse numerics for the two-layer GCN: forward pass, losses,
//! exact analytic gradients, a plain gradient-descent step, and a
//! finite-difference gradient oracle.
//!
//! All softmax/cross-entropy paths go through log-sum-exp; accumulations
//! are in f64 throughout.

use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Trainable weights of the two-layer GCN plus the fusion scalar.
///
/// `alpha_logit` parameterizes the history-fusion weight
/// `α = sigmoid(alpha_logit)`; it is client-personal state and is never
/// transmitted or aggregated.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// First layer, `f×h`.
    pub w1: Array2<f64>,
    /// Second layer, `h×C`.
    pub w2: Array2<f64>,
    pub alpha_logit: f64,
}

impl ModelParams {
    pub fn zeros(f: usize, h: usize, c: usize) -> Self {
        ModelParams {
            w1: Array2::zeros((f, h)),
            w2: Array2::zeros((h, c)),
            alpha_logit: 0.0,
        }
    }

    /// Glorot-uniform initialization: per layer `U(−s, s)` with
    /// `s = sqrt(6/(fan_in+fan_out))`. Entries are drawn in row-major
    /// order, w1 first, so a fixed seed gives fixed weights.
    pub fn glorot(f: usize, h: usize, c: usize, rng: &mut impl Rng, alpha_logit: f64) -> Self {
        let mut draw = |rows: usize, cols: usize| {
            let s = (6.0 / (rows + cols) as f64).sqrt();
            let mut m = Array2::zeros((rows, cols));
            for i in 0..rows {
                for j in 0..cols {
                    m[[i, j]] = rng.gen_range(-s..s);
                }
            }
            m
        };
        ModelParams {
            w1: draw(f, h),
            w2: draw(h, c),
            alpha_logit,
        }
    }

    pub fn sigmoid_alpha(&self) -> f64 {
        1.0 / (1.0 + (-self.alpha_logit).exp())
    }

    pub fn feature_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.w2.ncols()
    }

    /// Number of flat coordinates over `w1 ∪ w2` (excludes `alpha_logit`).
    pub fn flat_len(&self) -> usize {
        self.w1.len() + self.w2.len()
    }

    /// Read flat coordinate `i` in the fixed layout: `w1` row-major, then
    /// `w2` row-major.
    pub fn flat_get(&self, i: usize) -> f64 {
        let n1 = self.w1.len();
        if i < n1 {
            self.w1.as_slice().expect("contiguous")[i]
        } else {
            self.w2.as_slice().expect("contiguous")[i - n1]
        }
    }

    pub fn flat_set(&mut self, i: usize, value: f64) {
        let n1 = self.w1.len();
        if i < n1 {
            self.w1.as_slice_mut().expect("contiguous")[i] = value;
        } else {
            self.w2.as_slice_mut().expect("contiguous")[i - n1] = value;
        }
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.w1.dim() == other.w1.dim() && self.w2.dim() == other.w2.dim()
    }
}

/// Gradients shaped like their owning [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub d_w1: Array2<f64>,
    pub d_w2: Array2<f64>,
    /// Zero whenever the fused path is inactive.
    pub d_alpha_logit: f64,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients {
            d_w1: Array2::zeros(params.w1.dim()),
            d_w2: Array2::zeros(params.w2.dim()),
            d_alpha_logit: 0.0,
        }
    }

    pub fn flat_len(&self) -> usize {
        self.d_w1.len() + self.d_w2.len()
    }

    pub fn flat_get(&self, i: usize) -> f64 {
        let n1 = self.d_w1.len();
        if i < n1 {
            self.d_w1.as_slice().expect("contiguous")[i]
        } else {
            self.d_w2.as_slice().expect("contiguous")[i - n1]
        }
    }

    pub fn flat_set(&mut self, i: usize, value: f64) {
        let n1 = self.d_w1.len();
        if i < n1 {
            self.d_w1.as_slice_mut().expect("contiguous")[i] = value;
        } else {
            self.d_w2.as_slice_mut().expect("contiguous")[i - n1] = value;
        }
    }
}

/// Intermediates retained by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `Ã·X`, input to the first layer product.
    pub propagated_input: Array2<f64>,
    /// Pre-activation hidden matrix `Ã·X·W1`.
    pub pre_hidden: Array2<f64>,
    /// Post-activation hidden matrix `ReLU(pre_hidden)`.
    pub hidden: Array2<f64>,
    /// `Ã·hidden`, input to the second layer product.
    pub propagated_hidden: Array2<f64>,
    /// `n×C` output logits; no softmax applied.
    pub logits: Array2<f64>,
}

impl ForwardCache {
    pub fn num_nodes(&self) -> usize {
        self.logits.nrows()
    }
}

/// Two-layer GCN forward: `logits = Ã·ReLU(Ã·X·W1)·W2`.
///
/// `params` are the weights actually multiplied in — callers running the
/// fused path pass the effective (fused) weights.
pub fn gcn_forward(
    params: &ModelParams,
    adj: &NormalizedAdjacency,
    x: &Array2<f64>,
) -> ForwardCache {
    assert_eq!(
        adj.dim(),
        x.nrows(),
        "adjacency/feature node count mismatch"
    );
    assert_eq!(
        x.ncols(),
        params.feature_dim(),
        "feature dim does not match W1"
    );
    let propagated_input = adj.matrix().matmul(x);
    let pre_hidden = propagated_input.dot(&params.w1);
    let hidden = pre_hidden.mapv(|z| z.max(0.0));
    let propagated_hidden = adj.matrix().matmul(&hidden);
    let logits = propagated_hidden.dot(&params.w2);
    ForwardCache {
        propagated_input,
        pre_hidden,
        hidden,
        propagated_hidden,
        logits,
    }
}

fn log_softmax_row(row: ndarray::ArrayView1<f64>, temperature: f64) -> Array1<f64> {
    let scaled: Array1<f64> = row.mapv(|z| z / temperature);
    let max = scaled.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = max + scaled.mapv(|z| (z - max).exp()).sum().ln();
    scaled.mapv(|z| z - lse)
}

/// Mean negative log-likelihood over masked nodes. Labels are the guarded
/// training view: a masked node without a visible label is an error.
pub fn cross_entropy_loss(
    logits: &Array2<f64>,
    labels: &[Option<usize>],
    mask: &[bool],
) -> Result<f64> {
    assert_eq!(logits.nrows(), labels.len());
    assert_eq!(logits.nrows(), mask.len());
    let mut total = 0.0;
    let mut count = 0usize;
    for v in 0..logits.nrows() {
        if !mask[v] {
            continue;
        }
        let y = labels[v].ok_or(Error::EmptyMask("label not visible to training"))?;
        let log_probs = log_softmax_row(logits.row(v), 1.0);
        total -= log_probs[y];
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyMask("cross-entropy over empty mask"));
    }
    Ok(total / count as f64)
}

/// Mean `KL(softmax(teacher/T) ‖ softmax(student/T))` over masked nodes.
/// The teacher is a constant: no gradient flows to it.
pub fn kl_div_loss(
    teacher_logits: &Array2<f64>,
    student_logits: &Array2<f64>,
    mask: &[bool],
    temperature: f64,
) -> Result<f64> {
    assert_eq!(teacher_logits.dim(), student_logits.dim());
    assert_eq!(teacher_logits.nrows(), mask.len());
    assert!(temperature > 0.0, "temperature must be positive");
    let mut total = 0.0;
    let mut count = 0usize;
    for (v, &selected) in mask.iter().enumerate() {
        if !selected {
            continue;
        }
        let log_p = log_softmax_row(teacher_logits.row(v), temperature);
        let log_q = log_softmax_row(student_logits.row(v), temperature);
        let mut kl = 0.0;
        for c in 0..log_p.len() {
            kl += log_p[c].exp() * (log_p[c] - log_q[c]);
        }
        total += kl;
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyMask("kl divergence over empty mask"));
    }
    Ok(total / count as f64)
}

/// Supervised term: weighted mean cross-entropy over `mask`.
#[derive(Debug, Clone)]
pub struct CeTerm {
    pub weight: f64,
    pub mask: Vec<bool>,
}

/// Distillation-style term: weighted mean KL from fixed per-node teacher
/// logits toward the student logits over `mask`.
#[derive(Debug, Clone)]
pub struct KlTerm {
    pub weight: f64,
    pub teacher_logits: Array2<f64>,
    pub mask: Vec<bool>,
    pub temperature: f64,
}

/// Proximal term `(μ/2)·‖W_local − W_anchor‖²` over `w1 ∪ w2`.
#[derive(Debug, Clone)]
pub struct ProxTerm {
    pub mu: f64,
    pub anchor: ModelParams,
}

/// The weighted sum of loss terms in effect for one backward pass, plus
/// the fused-path configuration.
///
/// When `fusion` holds a history model, forward passes are taken at
/// `W_eff = α·W_hist + (1−α)·W_local` and gradients chain back to the
/// local weights (scaled by `1−α`) and to `alpha_logit`.
#[derive(Debug, Clone, Default)]
pub struct LossSpec {
    pub ce: Option<CeTerm>,
    pub kl_terms: Vec<KlTerm>,
    pub prox: Option<ProxTerm>,
    pub fusion: Option<ModelParams>,
}

impl LossSpec {
    pub fn ce_only(mask: Vec<bool>) -> Self {
        LossSpec {
            ce: Some(CeTerm { weight: 1.0, mask }),
            ..LossSpec::default()
        }
    }

    /// Weights actually multiplied in the forward pass.
    pub fn effective_params(&self, local: &ModelParams) -> ModelParams {
        match &self.fusion {
            Some(hist) => crate::client::fused_params(local, hist),
            None => local.clone(),
        }
    }
}

/// Composite loss value at the cached forward point.
pub fn composite_loss(
    cache: &ForwardCache,
    local: &ModelParams,
    labels: &[Option<usize>],
    spec: &LossSpec,
) -> Result<f64> {
    let mut total = 0.0;
    if let Some(ce) = &spec.ce {
        total += ce.weight * cross_entropy_loss(&cache.logits, labels, &ce.mask)?;
    }
    for term in &spec.kl_terms {
        total += term.weight
            * kl_div_loss(
                &term.teacher_logits,
                &cache.logits,
                &term.mask,
                term.temperature,
            )?;
    }
    if let Some(prox) = &spec.prox {
        let mut sq = 0.0;
        for i in 0..local.flat_len() {
            let d = local.flat_get(i) - prox.anchor.flat_get(i);
            sq += d * d;
        }
        total += 0.5 * prox.mu * sq;
    }
    Ok(total)
}

fn softmax_row(row: ndarray::ArrayView1<f64>, temperature: f64) -> Array1<f64> {
    log_softmax_row(row, temperature).mapv(f64::exp)
}

/// Exact analytic gradients of the composite loss with respect to the
/// local weights and (when fused) `alpha_logit`.
///
/// `cache` must come from a forward pass at `spec.effective_params(local)`;
/// a node-count or shape drift is rejected.
pub fn gcn_backward(
    cache: &ForwardCache,
    local: &ModelParams,
    adj: &NormalizedAdjacency,
    x: &Array2<f64>,
    labels: &[Option<usize>],
    spec: &LossSpec,
) -> Result<Gradients> {
    let n = cache.num_nodes();
    if n != adj.dim() || n != x.nrows() || n != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "cache has {n} nodes, inputs disagree"
        )));
    }
    if cache.pre_hidden.ncols() != local.hidden_dim()
        || cache.logits.ncols() != local.num_classes()
        || x.ncols() != local.feature_dim()
    {
        return Err(Error::ShapeMismatch("stale forward cache".into()));
    }
    if let Some(hist) = &spec.fusion {
        if !hist.same_shape(local) {
            return Err(Error::ShapeMismatch("history model shape differs".into()));
        }
    }

    let c = local.num_classes();
    let mut d_logits: Array2<f64> = Array2::zeros((n, c));

    if let Some(ce) = &spec.ce {
        let count = ce.mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::EmptyMask("cross-entropy over empty mask"));
        }
        let scale = ce.weight / count as f64;
        for v in 0..n {
            if !ce.mask[v] {
                continue;
            }
            let y = labels[v].ok_or(Error::EmptyMask("label not visible to training"))?;
            let probs = softmax_row(cache.logits.row(v), 1.0);
            for k in 0..c {
                let delta = if k == y { 1.0 } else { 0.0 };
                d_logits[[v, k]] += scale * (probs[k] - delta);
            }
        }
    }

    for term in &spec.kl_terms {
        let count = term.mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::EmptyMask("kl divergence over empty mask"));
        }
        let scale = term.weight / (count as f64 * term.temperature);
        for v in 0..n {
            if !term.mask[v] {
                continue;
            }
            let p = softmax_row(term.teacher_logits.row(v), term.temperature);
            let q = softmax_row(cache.logits.row(v), term.temperature);
            for k in 0..c {
                d_logits[[v, k]] += scale * (q[k] - p[k]);
            }
        }
    }

    // Backprop through logits = (Ã·H1)·W2 and H1 = ReLU(Ã·X·W1).
    let eff = spec.effective_params(local);
    let d_w2_eff = cache.propagated_hidden.t().dot(&d_logits);
    let d_hidden = adj.matrix().matmul_transposed(&d_logits).dot(&eff.w2.t());
    let mut d_pre = d_hidden;
    for (dp, &z) in d_pre.iter_mut().zip(cache.pre_hidden.iter()) {
        if z <= 0.0 {
            *dp = 0.0;
        }
    }
    let d_w1_eff = cache.propagated_input.t().dot(&d_pre);

    let (mut d_w1, mut d_w2, d_alpha_logit) = match &spec.fusion {
        Some(hist) => {
            let alpha = local.sigmoid_alpha();
            let mut d_alpha = 0.0;
            for (de, (h, l)) in d_w1_eff.iter().zip(hist.w1.iter().zip(local.w1.iter())) {
                d_alpha += de * (h - l);
            }
            for (de, (h, l)) in d_w2_eff.iter().zip(hist.w2.iter().zip(local.w2.iter())) {
                d_alpha += de * (h - l);
            }
            let d_alpha_logit = d_alpha * alpha * (1.0 - alpha);
            (
                d_w1_eff.mapv(|g| g * (1.0 - alpha)),
                d_w2_eff.mapv(|g| g * (1.0 - alpha)),
                d_alpha_logit,
            )
        }
        None => (d_w1_eff, d_w2_eff, 0.0),
    };

    if let Some(prox) = &spec.prox {
        d_w1 = d_w1 + (&local.w1 - &prox.anchor.w1).mapv(|d| d * prox.mu);
        d_w2 = d_w2 + (&local.w2 - &prox.anchor.w2).mapv(|d| d * prox.mu);
    }

    Ok(Gradients {
        d_w1,
        d_w2,
        d_alpha_logit,
    })
}

/// Composite loss as a pure function of the local weights, re-running the
/// (possibly fused) forward pass. Used by the finite-difference oracle.
pub fn loss_at(
    local: &ModelParams,
    adj: &NormalizedAdjacency,
    x: &Array2<f64>,
    labels: &[Option<usize>],
    spec: &LossSpec,
) -> Result<f64> {
    let cache = gcn_forward(&spec.effective_params(local), adj, x);
    composite_loss(&cache, local, labels, spec)
}

/// Max relative error between `grads` and central finite differences of
/// the composite loss, over a seeded subsample of at most `max_coords`
/// coordinates (plus `alpha_logit` when the fused path is active).
#[allow(clippy::too_many_arguments)]
pub fn finite_diff_error(
    grads: &Gradients,
    local: &ModelParams,
    adj: &NormalizedAdjacency,
    x: &Array2<f64>,
    labels: &[Option<usize>],
    spec: &LossSpec,
    step: f64,
    max_coords: usize,
    seed: u64,
) -> Result<f64> {
    assert!(step > 0.0, "finite-difference step must be positive");
    let p = local.flat_len();
    let mut coords: Vec<usize> = (0..p).collect();
    if coords.len() > max_coords {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        coords.shuffle(&mut rng);
        coords.truncate(max_coords);
        coords.sort_unstable();
    }
    let mut worst = 0.0f64;
    let mut probe = local.clone();
    let central = |probe: &mut ModelParams, i: usize, base: f64| -> Result<f64> {
        probe.flat_set(i, base + step);
        let up = loss_at(probe, adj, x, labels, spec)?;
        probe.flat_set(i, base - step);
        let down = loss_at(probe, adj, x, labels, spec)?;
        probe.flat_set(i, base);
        Ok((up - down) / (2.0 * step))
    };
    for &i in &coords {
        let base = local.flat_get(i);
        let fd = central(&mut probe, i, base)?;
        let an = grads.flat_get(i);
        let denom = an.abs().max(fd.abs()).max(1e-6);
        worst = worst.max((an - fd).abs() / denom);
    }
    if spec.fusion.is_some() {
        let base = local.alpha_logit;
        probe.alpha_logit = base + step;
        let up = loss_at(&probe, adj, x, labels, spec)?;
        probe.alpha_logit = base - step;
        let down = loss_at(&probe, adj, x, labels, spec)?;
        probe.alpha_logit = base;
        let fd = (up - down) / (2.0 * step);
        let an = grads.d_alpha_logit;
        let denom = an.abs().max(fd.abs()).max(1e-6);
        worst = worst.max((an - fd).abs() / denom);
    }
    Ok(worst)
}

/// Compute analytic gradients and report their max relative error against
/// central finite differences.
#[allow(clippy::too_many_arguments)]
pub fn finite_diff_check(
    local: &ModelParams,
    adj: &NormalizedAdjacency,
    x: &Array2<f64>,
    labels: &[Option<usize>],
    spec: &LossSpec,
    step: f64,
    max_coords: usize,
    seed: u64,
) -> Result<f64> {
    let cache = gcn_forward(&spec.effective_params(local), adj, x);
    let grads = gcn_backward(&cache, local, adj, x, labels, spec)?;
    finite_diff_error(&grads, local, adj, x, labels, spec, step, max_coords, seed)
}

/// Plain gradient descent: `p ← p − lr·g`. Rejects non-finite gradients,
/// naming the offending tensor.
pub fn optimizer_step(params: &ModelParams, grads: &Gradients, lr: f64) -> Result<ModelParams> {
    assert!(lr > 0.0, "learning rate must be positive");
    if grads.d_w1.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("d_w1"));
    }
    if grads.d_w2.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("d_w2"));
    }
    if !grads.d_alpha_logit.is_finite() {
        return Err(Error::NonFinite("d_alpha_logit"));
    }
    Ok(ModelParams {
        w1: &params.w1 - &grads.d_w1.mapv(|g| g * lr),
        w2: &params.w2 - &grads.d_w2.mapv(|g| g * lr),
        alpha_logit: params.alpha_logit - lr * grads.d_alpha_logit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalize_adjacency, Graph};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn identity_graph(n: usize, f: usize) -> Graph {
        Graph::new(
            Array2::zeros((n, f)),
            vec![0; n],
            vec![],
            vec![true; n],
            vec![false; n],
            vec![false; n],
            1,
        )
        .unwrap()
    }

    #[test]
    fn forward_isolated_node_relu_clips() {
        let g = identity_graph(1, 2);
        let adj = normalize_adjacency(&g, 0.5);
        let params = ModelParams {
            w1: Array2::eye(2),
            w2: Array2::eye(2),
            alpha_logit: 0.0,
        };
        let x = array![[2.0, -3.0]];
        let cache = gcn_forward(&params, &adj, &x);
        assert_eq!(cache.logits, array![[2.0, 0.0]]);
    }

    #[test]
    fn forward_zero_features_zero_logits() {
        let g = identity_graph(3, 2);
        let adj = normalize_adjacency(&g, 0.5);
        let params = ModelParams::glorot(2, 4, 3, &mut ChaCha8Rng::seed_from_u64(0), 0.0);
        let cache = gcn_forward(&params, &adj, &Array2::zeros((3, 2)));
        assert!(cache.logits.iter().all(|&z| z == 0.0));
    }

    #[test]
    fn forward_first_layer_preactivation_is_linear_in_x() {
        let g = identity_graph(2, 3);
        let adj = normalize_adjacency(&g, 0.5);
        let params = ModelParams::glorot(3, 4, 2, &mut ChaCha8Rng::seed_from_u64(1), 0.0);
        let x = array![[0.5, -1.0, 2.0], [1.5, 0.25, -0.75]];
        let a = gcn_forward(&params, &adj, &x);
        let b = gcn_forward(&params, &adj, &x.mapv(|v| 2.0 * v));
        assert_abs_diff_eq!(
            b.pre_hidden.as_slice().unwrap(),
            a.pre_hidden.mapv(|v| 2.0 * v).as_slice().unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn ce_uniform_logits_is_ln2() {
        let logits = array![[0.0, 0.0]];
        let loss = cross_entropy_loss(&logits, &[Some(0)], &[true]).unwrap();
        assert_abs_diff_eq!(loss, std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn ce_extreme_logits_no_overflow() {
        let logits = array![[1000.0, 0.0]];
        let loss = cross_entropy_loss(&logits, &[Some(0)], &[true]).unwrap();
        assert!(loss.is_finite() && loss < 1e-12, "loss {loss}");
    }

    #[test]
    fn ce_averages_over_mask() {
        let logits = array![[0.0, 0.0], [100.0, 0.0]];
        let loss = cross_entropy_loss(&logits, &[Some(0), Some(0)], &[true, true]).unwrap();
        assert_abs_diff_eq!(loss, std::f64::consts::LN_2 / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn ce_empty_mask_errors() {
        let logits = array![[0.0, 0.0]];
        assert!(cross_entropy_loss(&logits, &[Some(0)], &[false]).is_err());
    }

    #[test]
    fn kl_identity_is_zero() {
        let t = array![[0.3, -0.7, 1.1]];
        assert_abs_diff_eq!(
            kl_div_loss(&t, &t.clone(), &[true], 1.0).unwrap(),
            0.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn kl_known_value() {
        // Teacher distribution (0.75, 0.25) vs uniform student:
        // 0.75·ln1.5 + 0.25·ln0.5 ≈ 0.130812
        let teacher = array![[(3.0f64).ln(), 0.0]];
        let student = array![[0.0, 0.0]];
        let kl = kl_div_loss(&teacher, &student, &[true], 1.0).unwrap();
        assert_abs_diff_eq!(kl, 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(kl, 0.1308, epsilon = 1e-4);
    }

    #[test]
    fn kl_nonnegative_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let t = Array2::from_shape_fn((1, 4), |_| rng.gen_range(-3.0..3.0));
            let s = Array2::from_shape_fn((1, 4), |_| rng.gen_range(-3.0..3.0));
            assert!(kl_div_loss(&t, &s, &[true], 1.0).unwrap() >= 0.0);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let row = Array1::from_shape_fn(5, |_| rng.gen_range(-10.0..10.0));
            let s = softmax_row(row.view(), 1.0);
            assert_abs_diff_eq!(s.sum(), 1.0, epsilon = 1e-9);
        }
    }

    fn random_instance(
        seed: u64,
        n: usize,
    ) -> (
        Graph,
        NormalizedAdjacency,
        Array2<f64>,
        Vec<Option<usize>>,
        ModelParams,
        LossSpec,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = 5;
        let c = 3;
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.gen::<f64>() < 0.2 {
                    edges.push((u, v));
                }
            }
        }
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let train: Vec<bool> = (0..n).map(|v| v % 2 == 0).collect();
        let g = Graph::new(
            Array2::from_shape_fn((n, f), |_| rng.gen_range(-1.0..1.0)),
            labels,
            edges,
            train.clone(),
            vec![false; n],
            (0..n).map(|v| v % 2 == 1).collect(),
            c,
        )
        .unwrap();
        let adj = normalize_adjacency(&g, 0.5);
        let x = g.features.clone();
        let local = ModelParams::glorot(f, 6, c, &mut rng, 0.4);
        let hist = ModelParams::glorot(f, 6, c, &mut rng, 0.0);
        let teacher = gcn_forward(&hist, &adj, &x).logits;
        let unlabeled: Vec<bool> = train.iter().map(|&t| !t).collect();
        let spec = LossSpec {
            ce: Some(CeTerm {
                weight: 1.0,
                mask: train,
            }),
            kl_terms: vec![KlTerm {
                weight: 1.0,
                teacher_logits: teacher,
                mask: unlabeled,
                temperature: 1.0,
            }],
            prox: None,
            fusion: Some(hist),
        };
        let labels = g.training_labels();
        (g, adj, x, labels, local, spec)
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..3 {
            let (_g, adj, x, labels, local, spec) = random_instance(seed, 12);
            let err = finite_diff_check(&local, &adj, &x, &labels, &spec, 1e-5, 500, seed).unwrap();
            assert!(err < 1e-4, "seed {seed}: max relative error {err}");
        }
    }

    #[test]
    fn backward_linear_region_is_fd_exact() {
        // All-positive pre-activations bypass the ReLU kink; central
        // differences on the CE of a near-linear model are ~1e-7 accurate.
        let g = identity_graph(2, 2);
        let adj = normalize_adjacency(&g, 0.5);
        let x = array![[1.0, 2.0], [2.0, 1.0]];
        let local = ModelParams {
            w1: array![[1.0, 0.5], [0.5, 1.0]],
            w2: array![[0.3, -0.3], [0.1, 0.2]],
            alpha_logit: 0.0,
        };
        let labels = vec![Some(0), Some(0)];
        let spec = LossSpec::ce_only(vec![true, true]);
        let err = finite_diff_check(&local, &adj, &x, &labels, &spec, 1e-5, 500, 0).unwrap();
        assert!(err < 1e-7, "error {err}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let (_g, adj, x, labels, local, spec) = random_instance(17, 10);
        let cache = gcn_forward(&spec.effective_params(&local), &adj, &x);
        let mut grads = gcn_backward(&cache, &local, &adj, &x, &labels, &spec).unwrap();
        grads.d_w2[[0, 0]] += 0.1;
        let err =
            finite_diff_error(&grads, &local, &adj, &x, &labels, &spec, 1e-5, 500, 17).unwrap();
        assert!(err > 1e-2, "corruption went undetected: {err}");
    }

    #[test]
    fn zero_loss_configuration_has_tiny_gradient() {
        // Perfectly confident correct logits: saturated softmax, CE ≈ 0.
        let g = identity_graph(1, 2);
        let adj = normalize_adjacency(&g, 0.5);
        let x = array![[50.0, 0.0]];
        let local = ModelParams {
            w1: Array2::eye(2),
            w2: Array2::eye(2),
            alpha_logit: 0.0,
        };
        let labels = vec![Some(0)];
        let spec = LossSpec::ce_only(vec![true]);
        let cache = gcn_forward(&local, &adj, &x);
        let grads = gcn_backward(&cache, &local, &adj, &x, &labels, &spec).unwrap();
        let norm: f64 = grads
            .d_w1
            .iter()
            .chain(grads.d_w2.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        assert!(norm < 1e-6, "gradient norm {norm}");
    }

    #[test]
    fn loss_term_weights_scale_gradients_linearly() {
        let (_g, adj, x, labels, local, mut spec) = random_instance(5, 10);
        spec.fusion = None;
        let cache = gcn_forward(&local, &adj, &x);
        let g1 = gcn_backward(&cache, &local, &adj, &x, &labels, &spec).unwrap();
        spec.kl_terms[0].weight = 2.0;
        let g2 = gcn_backward(&cache, &local, &adj, &x, &labels, &spec).unwrap();
        let mut ce_only = spec.clone();
        ce_only.kl_terms.clear();
        let gc = gcn_backward(&cache, &local, &adj, &x, &labels, &ce_only).unwrap();
        // g2 − g1 equals the original KL contribution (g1 − gc).
        for i in 0..g1.flat_len() {
            assert_abs_diff_eq!(
                g2.flat_get(i) - g1.flat_get(i),
                g1.flat_get(i) - gc.flat_get(i),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn optimizer_arithmetic() {
        let params = ModelParams {
            w1: array![[1.0]],
            w2: array![[0.0]],
            alpha_logit: 0.0,
        };
        let grads = Gradients {
            d_w1: array![[2.0]],
            d_w2: array![[0.0]],
            d_alpha_logit: 0.0,
        };
        let next = optimizer_step(&params, &grads, 0.1).unwrap();
        assert_abs_diff_eq!(next.w1[[0, 0]], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn optimizer_zero_gradient_is_identity() {
        let params = ModelParams::glorot(2, 3, 2, &mut ChaCha8Rng::seed_from_u64(0), 0.1);
        let next = optimizer_step(&params, &Gradients::zeros_like(&params), 0.5).unwrap();
        assert_eq!(next, params);
    }

    #[test]
    fn two_steps_equal_one_summed_step() {
        let params = ModelParams {
            w1: array![[1.0, -1.0]],
            w2: array![[0.5], [0.25]],
            alpha_logit: 0.2,
        };
        let ga = Gradients {
            d_w1: array![[0.1, 0.2]],
            d_w2: array![[0.3], [-0.1]],
            d_alpha_logit: 0.05,
        };
        let gb = Gradients {
            d_w1: array![[-0.05, 0.4]],
            d_w2: array![[0.0], [0.2]],
            d_alpha_logit: -0.01,
        };
        let sequential =
            optimizer_step(&optimizer_step(&params, &ga, 0.1).unwrap(), &gb, 0.1).unwrap();
        let summed = Gradients {
            d_w1: &ga.d_w1 + &gb.d_w1,
            d_w2: &ga.d_w2 + &gb.d_w2,
            d_alpha_logit: ga.d_alpha_logit + gb.d_alpha_logit,
        };
        let combined = optimizer_step(&params, &summed, 0.1).unwrap();
        for i in 0..sequential.flat_len() {
            assert_abs_diff_eq!(
                sequential.flat_get(i),
                combined.flat_get(i),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn optimizer_rejects_nan_naming_tensor() {
        let params = ModelParams::zeros(1, 1, 1);
        let mut grads = Gradients::zeros_like(&params);
        grads.d_w2[[0, 0]] = f64::NAN;
        match optimizer_step(&params, &grads, 0.1).unwrap_err() {
            Error::NonFinite(name) => assert_eq!(name, "d_w2"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn backward_rejects_stale_cache() {
        let (_g, adj, x, labels, local, spec) = random_instance(2, 8);
        let cache = gcn_forward(&spec.effective_params(&local), &adj, &x);
        let bigger = ModelParams::zeros(5, 9, 3);
        assert!(gcn_backward(&cache, &bigger, &adj, &x, &labels, &spec).is_err());
    }
}
