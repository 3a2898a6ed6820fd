//! Client partitioners: a Fennel-style streaming min-cut splitter and a
//! Dirichlet label-skew splitter. Both are deterministic and guarantee
//! nonempty parts covering every node exactly once.

use super::Graph;
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution};

/// Assignment of every node to one client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionAssignment {
    pub part_of: Vec<usize>,
    pub num_parts: usize,
}

impl PartitionAssignment {
    pub fn new(part_of: Vec<usize>, num_parts: usize) -> Result<Self> {
        let mut sizes = vec![0usize; num_parts];
        for &p in &part_of {
            if p >= num_parts {
                return Err(Error::InvalidConfig(format!(
                    "part id {p} out of range for {num_parts} parts"
                )));
            }
            sizes[p] += 1;
        }
        if sizes.contains(&0) {
            return Err(Error::InvalidConfig("every part must be nonempty".into()));
        }
        Ok(PartitionAssignment { part_of, num_parts })
    }

    /// Node ids of each part, ascending within a part.
    pub fn part_members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.num_parts];
        for (v, &p) in self.part_of.iter().enumerate() {
            members[p].push(v);
        }
        members
    }

    /// Per-part class histogram: `histogram[p][c]` counts nodes of class
    /// `c` in part `p`.
    pub fn class_histogram(&self, g: &Graph) -> Vec<Vec<usize>> {
        let mut hist = vec![vec![0usize; g.num_classes]; self.num_parts];
        for v in 0..g.num_nodes {
            hist[self.part_of[v]][g.labels[v]] += 1;
        }
        hist
    }
}

/// Number of edges whose endpoints land in different parts.
pub fn edge_cut(g: &Graph, assignment: &PartitionAssignment) -> usize {
    g.edges
        .iter()
        .filter(|&&(u, v)| assignment.part_of[u] != assignment.part_of[v])
        .count()
}

fn check_part_count(n: usize, n_parts: usize) -> Result<()> {
    if n_parts < 2 {
        return Err(Error::InvalidConfig(format!(
            "partitioning needs at least 2 parts, got {n_parts}"
        )));
    }
    if n_parts > n {
        return Err(Error::InvalidConfig(format!(
            "cannot split {n} nodes into {n_parts} parts"
        )));
    }
    Ok(())
}

/// Streaming one-pass partitioner. Nodes are visited in a fixed
/// degree-descending order (ties by id), so high-degree nodes anchor
/// parts before the loosely connected tail streams in. Each node goes to
/// the part maximizing `|N(v) ∩ part| − balance_gamma · size·k/n`
/// (relative load penalty), subject to a hard capacity of `⌈n/k⌉` and a
/// feasibility guard that keep parts balanced and nonempty. Ties go to
/// the lowest part id.
///
/// The penalty stays below `balance_gamma` until a part hits capacity, so
/// a single already-placed neighbor outweighs it at the default gamma:
/// cohesive regions stream into one part and the capacity does the
/// balancing.
pub fn partition_fennel(
    g: &Graph,
    n_parts: usize,
    balance_gamma: f64,
) -> Result<PartitionAssignment> {
    check_part_count(g.num_nodes, n_parts)?;
    let n = g.num_nodes;
    let capacity = n.div_ceil(n_parts);
    let marginal_cost = |size: usize| balance_gamma * size as f64 * n_parts as f64 / n as f64;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&v| (std::cmp::Reverse(g.neighbors(v).len()), v));

    let mut part_of = vec![usize::MAX; n];
    let mut sizes = vec![0usize; n_parts];
    let mut empty_parts = n_parts;
    for (idx, &v) in order.iter().enumerate() {
        let remaining_after = n - idx - 1;
        // Placing v in a nonempty part keeps `empty_parts` parts to fill
        // with `remaining_after` nodes; forbid it when that cannot work.
        let must_seed_empty = remaining_after < empty_parts;
        let mut nbr_count = vec![0usize; n_parts];
        for &u in g.neighbors(v) {
            if part_of[u] != usize::MAX {
                nbr_count[part_of[u]] += 1;
            }
        }
        let mut best: Option<(usize, f64)> = None;
        for p in 0..n_parts {
            if sizes[p] >= capacity {
                continue;
            }
            if must_seed_empty && sizes[p] > 0 {
                continue;
            }
            let score = nbr_count[p] as f64 - marginal_cost(sizes[p]);
            let better = match best {
                None => true,
                Some((_, b)) => score > b,
            };
            if better {
                best = Some((p, score));
            }
        }
        let (p, _) = best.expect("capacity k*ceil(n/k) >= n leaves a feasible part");
        if sizes[p] == 0 {
            empty_parts -= 1;
        }
        sizes[p] += 1;
        part_of[v] = p;
    }
    PartitionAssignment::new(part_of, n_parts)
}

/// Dirichlet label-skew partitioner: per-class proportions drawn from
/// `Dirichlet(alpha, …, alpha)` set client quotas; smaller `alpha` means
/// stronger skew. Retries with a reseeded draw (bounded) if a part comes
/// out empty.
pub fn partition_label_skew(
    g: &Graph,
    n_parts: usize,
    alpha: f64,
    seed: u64,
) -> Result<PartitionAssignment> {
    check_part_count(g.num_nodes, n_parts)?;
    if alpha <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "dirichlet alpha must be > 0, got {alpha}"
        )));
    }
    const MAX_RETRIES: u64 = 20;
    for attempt in 0..MAX_RETRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
        let dirichlet = Dirichlet::new(&vec![alpha; n_parts])
            .map_err(|e| Error::InvalidConfig(format!("dirichlet: {e}")))?;
        let mut part_of = vec![0usize; g.num_nodes];
        for class in 0..g.num_classes {
            let mut members: Vec<usize> =
                (0..g.num_nodes).filter(|&v| g.labels[v] == class).collect();
            if members.is_empty() {
                continue;
            }
            members.shuffle(&mut rng);
            let props: Vec<f64> = dirichlet.sample(&mut rng);
            let quotas = largest_remainder_quotas(&props, members.len());
            let mut idx = 0usize;
            for (p, &q) in quotas.iter().enumerate() {
                for _ in 0..q {
                    part_of[members[idx]] = p;
                    idx += 1;
                }
            }
        }
        if let Ok(assignment) = PartitionAssignment::new(part_of, n_parts) {
            return Ok(assignment);
        }
    }
    Err(Error::InvalidConfig(format!(
        "label-skew partition left an empty part after {MAX_RETRIES} reseeds"
    )))
}

/// Round fractional quotas to integers summing exactly to `total`,
/// assigning leftovers to the largest remainders (ties: lower index).
fn largest_remainder_quotas(props: &[f64], total: usize) -> Vec<usize> {
    let mut quotas: Vec<usize> = props.iter().map(|p| (p * total as f64) as usize).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = props[a] * total as f64 - quotas[a] as f64;
        let rb = props[b] * total as f64 - quotas[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for i in 0..(total - assigned) {
        quotas[order[i % props.len()]] += 1;
    }
    quotas
}
