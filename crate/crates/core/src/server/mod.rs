//! Server round: cluster the received sparse deltas, aggregate within and
//! across clusters, pair each client with its most dissimilar peer, and
//! build the deviated packages for the next round.

mod kmeans;

use crate::client::{ClientUpdate, DeviatedPackage, ParamMask, SparseDelta};
use crate::error::{Error, Result};
use crate::gnn::ModelParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Cross-cluster step size for the aggregated update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaMode {
    /// `η = 1/K`: the unweighted mean of cluster-level updates.
    Auto,
    Fixed(f64),
}

/// Server-side aggregation configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub eta: EtaMode,
    /// Largest cluster count considered by the silhouette sweep.
    pub k_max: usize,
    pub kmeans_restarts: usize,
    pub seed: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            eta: EtaMode::Auto,
            k_max: 8,
            kmeans_restarts: 5,
            seed: 0,
        }
    }
}

impl ServerConfig {
    pub fn validate(&self) -> Result<()> {
        if let EtaMode::Fixed(e) = self.eta {
            if e <= 0.0 {
                return Err(Error::InvalidConfig(format!("eta must be > 0, got {e}")));
            }
        }
        if self.kmeans_restarts == 0 {
            return Err(Error::InvalidConfig("kmeans_restarts must be >= 1".into()));
        }
        Ok(())
    }
}

/// All client updates received in one round, ordered by client id.
#[derive(Debug, Clone)]
pub struct RoundUploads {
    pub round: usize,
    /// `(client_id, update)` pairs, sorted ascending by client id.
    pub updates: Vec<(usize, ClientUpdate)>,
    /// Flat parameter count of the shared model architecture.
    pub flat_len: usize,
}

impl RoundUploads {
    pub fn new(
        round: usize,
        mut updates: Vec<(usize, ClientUpdate)>,
        flat_len: usize,
    ) -> Result<Self> {
        if updates.is_empty() {
            return Err(Error::InvalidConfig(
                "round needs at least one upload".into(),
            ));
        }
        updates.sort_by_key(|&(id, _)| id);
        for (id, u) in &updates {
            if u.num_train_samples == 0 {
                return Err(Error::InvalidConfig(format!(
                    "client {id} reported zero training samples"
                )));
            }
            if let Some(&last) = u.delta.positions.last() {
                if last >= flat_len {
                    return Err(Error::InvalidConfig(format!(
                        "client {id} delta position {last} out of range for {flat_len} parameters"
                    )));
                }
            }
        }
        Ok(RoundUploads {
            round,
            updates,
            flat_len,
        })
    }

    pub fn num_clients(&self) -> usize {
        self.updates.len()
    }
}

/// Chosen cluster count and per-upload assignment (parallel to
/// `RoundUploads::updates`). `silhouette` is `None` for the single-cluster
/// fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult {
    pub k: usize,
    pub assignment: Vec<usize>,
    pub silhouette: Option<f64>,
}

/// Scatter a sparse delta into a dense flat vector.
pub fn densify(delta: &SparseDelta, flat_len: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; flat_len];
    for (&pos, &val) in delta.positions.iter().zip(&delta.values) {
        if pos >= flat_len {
            return Err(Error::ShapeMismatch(format!(
                "delta position {pos} out of range for {flat_len} parameters"
            )));
        }
        out[pos] = val;
    }
    Ok(out)
}

/// Mean silhouette over all points (Euclidean distance). Points in
/// singleton clusters score 0, as does any point with `max(a, b) = 0`.
pub fn silhouette_score(points: &[Vec<f64>], assignment: &[usize]) -> Result<f64> {
    assert_eq!(points.len(), assignment.len());
    let k = assignment.iter().max().map_or(0, |&m| m + 1);
    if k < 2 {
        return Err(Error::InvalidConfig(
            "silhouette needs at least 2 clusters".into(),
        ));
    }
    let mut sizes = vec![0usize; k];
    for &c in assignment {
        sizes[c] += 1;
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidConfig(
            "silhouette cluster ids must be contiguous".into(),
        ));
    }
    let n = points.len();
    let dist = |a: usize, b: usize| -> f64 {
        points[a]
            .iter()
            .zip(&points[b])
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut total = 0.0;
    for i in 0..n {
        let ci = assignment[i];
        if sizes[ci] == 1 {
            continue; // s(i) = 0
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if j != i {
                sums[assignment[j]] += dist(i, j);
            }
        }
        let a = sums[ci] / (sizes[ci] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != ci)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

/// Pick the cluster count by silhouette: seeded k-means for each
/// `k ∈ [2, min(k_max, N−1)]`, keeping the best mean silhouette
/// (ties → smaller k). Two or fewer clients, or a best silhouette ≤ 0
/// (degenerate geometry), fall back to a single cluster.
pub fn cluster_updates(uploads: &RoundUploads, cfg: &ServerConfig) -> Result<ClusteringResult> {
    cfg.validate()?;
    let n = uploads.num_clients();
    let single = ClusteringResult {
        k: 1,
        assignment: vec![0; n],
        silhouette: None,
    };
    if n <= 2 {
        return Ok(single);
    }
    let points: Vec<Vec<f64>> = uploads
        .updates
        .iter()
        .map(|(_, u)| densify(&u.delta, uploads.flat_len))
        .collect::<Result<_>>()?;
    let k_hi = cfg.k_max.min(n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    for k in 2..=k_hi {
        for _ in 0..cfg.kmeans_restarts {
            let Some(assignment) = kmeans::kmeans(&points, k, &mut rng) else {
                continue;
            };
            let score = silhouette_score(&points, &assignment)?;
            let better = match &best {
                None => true,
                Some((s, _, _)) => score > *s,
            };
            if better {
                best = Some((score, k, assignment));
            }
        }
    }
    match best {
        Some((score, k, assignment)) if score > 0.0 => Ok(ClusteringResult {
            k,
            assignment,
            silhouette: Some(score),
        }),
        _ => Ok(single),
    }
}

fn add_flat(base: &ModelParams, flat: &[f64]) -> ModelParams {
    let mut out = base.clone();
    for (i, &v) in flat.iter().enumerate() {
        out.flat_set(i, out.flat_get(i) + v);
    }
    out
}

/// Clustered aggregation: sample-weighted mean of deltas within each
/// cluster, uniform rate `η` across clusters, applied to the previous
/// global model. Summation runs in ascending cluster then client-id
/// order, so the result is independent of upload arrival order.
pub fn aggregate_round(
    uploads: &RoundUploads,
    clustering: &ClusteringResult,
    w_global: &ModelParams,
    cfg: &ServerConfig,
) -> Result<ModelParams> {
    if clustering.assignment.len() != uploads.num_clients() {
        return Err(Error::ShapeMismatch(
            "clustering does not cover the uploads".into(),
        ));
    }
    let p = uploads.flat_len;
    if w_global.flat_len() != p {
        return Err(Error::ShapeMismatch(
            "global model size differs from uploads".into(),
        ));
    }
    let eta = match cfg.eta {
        EtaMode::Auto => 1.0 / clustering.k as f64,
        EtaMode::Fixed(e) => e,
    };
    let mut aggregated = vec![0.0; p];
    for cluster in 0..clustering.k {
        let members: Vec<usize> = (0..uploads.num_clients())
            .filter(|&i| clustering.assignment[i] == cluster)
            .collect();
        let n_k: usize = members
            .iter()
            .map(|&i| uploads.updates[i].1.num_train_samples)
            .sum();
        if n_k == 0 {
            return Err(Error::InvalidConfig(format!(
                "cluster {cluster} has zero total samples"
            )));
        }
        let mut cluster_delta = vec![0.0; p];
        for &i in &members {
            let (_, update) = &uploads.updates[i];
            let weight = update.num_train_samples as f64 / n_k as f64;
            for (&pos, &val) in update.delta.positions.iter().zip(&update.delta.values) {
                cluster_delta[pos] += weight * val;
            }
        }
        for (agg, d) in aggregated.iter_mut().zip(&cluster_delta) {
            *agg += eta * d;
        }
    }
    Ok(add_flat(w_global, &aggregated))
}

/// Cosine similarity with the zero-norm convention: a zero vector scores
/// 0 against everything.
fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// For each client, the id of the least cosine-similar peer (ties →
/// smallest peer id). Empty when only one client uploaded.
pub fn pair_deviated(uploads: &RoundUploads) -> Result<BTreeMap<usize, usize>> {
    let n = uploads.num_clients();
    let mut pairs = BTreeMap::new();
    if n < 2 {
        return Ok(pairs);
    }
    let dense: Vec<Vec<f64>> = uploads
        .updates
        .iter()
        .map(|(_, u)| densify(&u.delta, uploads.flat_len))
        .collect::<Result<_>>()?;
    for i in 0..n {
        let mut best_j = usize::MAX;
        let mut best_cos = f64::INFINITY;
        for j in 0..n {
            if j == i {
                continue;
            }
            let c = cosine(&dense[i], &dense[j]);
            if c < best_cos {
                best_cos = c;
                best_j = j;
            }
        }
        pairs.insert(uploads.updates[i].0, uploads.updates[best_j].0);
    }
    Ok(pairs)
}

/// The deviated model for client `i` is the pre-aggregation global model
/// plus partner `j`'s sparse update; the mask is the partner's support.
pub fn build_deviated_packages(
    w_global: &ModelParams,
    uploads: &RoundUploads,
    pairs: &BTreeMap<usize, usize>,
) -> Result<BTreeMap<usize, DeviatedPackage>> {
    let by_id: BTreeMap<usize, &ClientUpdate> =
        uploads.updates.iter().map(|(id, u)| (*id, u)).collect();
    let mut packages = BTreeMap::new();
    for (&client, &partner) in pairs {
        let update = by_id.get(&partner).ok_or_else(|| {
            Error::InvalidConfig(format!("pairing references unknown client {partner}"))
        })?;
        let flat = densify(&update.delta, uploads.flat_len)?;
        packages.insert(
            client,
            DeviatedPackage {
                params: add_flat(w_global, &flat),
                mask: ParamMask::from_delta(&update.delta),
            },
        );
    }
    Ok(packages)
}
