//! Stochastic block model generator: one block per class, Gaussian
//! features around a class-specific center, per-class train/val/test
//! split. Deterministic given the seed.

use super::Graph;
use crate::error::{Error, Result};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Configuration for [`generate_sbm`].
#[derive(Debug, Clone, PartialEq)]
pub struct SbmConfig {
    /// Node count per class; class `c` occupies one block.
    pub block_sizes: Vec<usize>,
    /// Intra-class edge probability.
    pub p_in: f64,
    /// Inter-class edge probability.
    pub p_out: f64,
    pub feature_dim: usize,
    /// Distance of each class center from the origin along its axis.
    pub feature_center_scale: f64,
    /// Per-class fraction of nodes assigned to the train split.
    pub train_frac: f64,
    /// Per-class fraction assigned to validation; the rest is test.
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        SbmConfig {
            block_sizes: vec![100, 100],
            p_in: 0.1,
            p_out: 0.01,
            feature_dim: 16,
            feature_center_scale: 1.0,
            train_frac: 0.2,
            val_frac: 0.4,
            seed: 0,
        }
    }
}

impl SbmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_sizes.is_empty() || self.block_sizes.contains(&0) {
            return Err(Error::InvalidConfig("block sizes must all be >= 1".into()));
        }
        for (name, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be in [0,1], got {p}"
                )));
            }
        }
        if self.feature_dim == 0 {
            return Err(Error::InvalidConfig("feature_dim must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.train_frac)
            || !(0.0..=1.0).contains(&self.val_frac)
            || self.train_frac + self.val_frac > 1.0
        {
            return Err(Error::InvalidConfig(
                "split fractions must be in [0,1] and sum to <= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Sample a planted-partition graph. Nodes of class `c` get ids in one
/// contiguous range; features are `center(c) + N(0, 1)` per dimension with
/// the center at `feature_center_scale` along axis `c mod f`.
pub fn generate_sbm(cfg: &SbmConfig) -> Result<Graph> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let num_classes = cfg.block_sizes.len();
    let n: usize = cfg.block_sizes.iter().sum();

    let mut class_of = Vec::with_capacity(n);
    for (c, &size) in cfg.block_sizes.iter().enumerate() {
        class_of.extend(std::iter::repeat_n(c, size));
    }

    let mut features = Array2::zeros((n, cfg.feature_dim));
    for v in 0..n {
        let axis = class_of[v] % cfg.feature_dim;
        for j in 0..cfg.feature_dim {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let center = if j == axis {
                cfg.feature_center_scale
            } else {
                0.0
            };
            features[[v, j]] = center + noise;
        }
    }

    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if class_of[u] == class_of[v] {
                cfg.p_in
            } else {
                cfg.p_out
            };
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let mut train = vec![false; n];
    let mut val = vec![false; n];
    let mut test = vec![false; n];
    let mut start = 0usize;
    for &size in &cfg.block_sizes {
        let mut ids: Vec<usize> = (start..start + size).collect();
        ids.shuffle(&mut rng);
        let n_train = ((size as f64 * cfg.train_frac).round() as usize).clamp(1, size);
        let n_val = ((size as f64 * cfg.val_frac).round() as usize).min(size - n_train);
        for (i, &v) in ids.iter().enumerate() {
            if i < n_train {
                train[v] = true;
            } else if i < n_train + n_val {
                val[v] = true;
            } else {
                test[v] = true;
            }
        }
        start += size;
    }

    Graph::new(features, class_of, edges, train, val, test, num_classes)
}
