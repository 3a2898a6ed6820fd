//! Graph representation, normalization, homophily analysis, synthetic
//! generation, partitioning, and dataset I/O.

pub mod io;
pub mod partition;
pub mod sbm;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;
use ndarray::Array2;

/// Which labels a label-dependent statistic may read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelBasis {
    /// Only nodes in the train mask.
    TrainOnly,
    /// Every node (evaluation-time analysis).
    All,
}

/// An undirected attributed graph with a train/val/test node split.
///
/// Values are immutable after construction and safe to share across
/// concurrent client trainers.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub num_nodes: usize,
    /// `n×f` feature matrix.
    pub features: Array2<f64>,
    /// Per-node class id in `[0, num_classes)`.
    pub labels: Vec<usize>,
    /// Undirected edges stored as `(u, v)` with `u < v`, sorted, unique.
    pub edges: Vec<(usize, usize)>,
    pub train_mask: Vec<bool>,
    pub val_mask: Vec<bool>,
    pub test_mask: Vec<bool>,
    pub num_classes: usize,
    /// Adjacency lists derived from `edges`; neighbor ids sorted ascending.
    adj: Vec<Vec<usize>>,
}

impl Graph {
    /// Validate and construct. Edges may arrive in any orientation/order;
    /// they are canonicalized to `u < v` sorted order.
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        edges: Vec<(usize, usize)>,
        train_mask: Vec<bool>,
        val_mask: Vec<bool>,
        test_mask: Vec<bool>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n || train_mask.len() != n || val_mask.len() != n || test_mask.len() != n
        {
            return Err(Error::InvalidGraph(format!(
                "label/mask length must equal node count {n}"
            )));
        }
        if num_classes == 0 {
            return Err(Error::InvalidGraph("num_classes must be positive".into()));
        }
        for (v, &y) in labels.iter().enumerate() {
            if y >= num_classes {
                return Err(Error::InvalidGraph(format!(
                    "label {y} of node {v} out of range [0, {num_classes})"
                )));
            }
        }
        for v in 0..n {
            let picks = train_mask[v] as usize + val_mask[v] as usize + test_mask[v] as usize;
            if picks > 1 {
                return Err(Error::InvalidGraph(format!(
                    "node {v} belongs to more than one split"
                )));
            }
        }
        let mut canon: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(a, b) in &edges {
            if a >= n || b >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({a}, {b}) endpoint out of range for {n} nodes"
                )));
            }
            if a == b {
                return Err(Error::InvalidGraph(format!("self-loop on node {a}")));
            }
            canon.push((a.min(b), a.max(b)));
        }
        canon.sort_unstable();
        if canon.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidGraph("duplicate undirected edge".into()));
        }
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in &canon {
            adj[u].push(v);
            adj[v].push(u);
        }
        Ok(Graph {
            num_nodes: n,
            features,
            labels,
            edges: canon,
            train_mask,
            val_mask,
            test_mask,
            num_classes,
            adj,
        })
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn num_train(&self) -> usize {
        self.train_mask.iter().filter(|&&m| m).count()
    }

    /// Labels visible during training: `Some` only on train-mask nodes.
    /// Trainers work exclusively through this view so that validation and
    /// test labels stay unread.
    pub fn training_labels(&self) -> Vec<Option<usize>> {
        (0..self.num_nodes)
            .map(|v| {
                if self.train_mask[v] {
                    Some(self.labels[v])
                } else {
                    None
                }
            })
            .collect()
    }

    /// Per-class node counts over the chosen basis.
    pub fn class_counts(&self, basis: LabelBasis) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for v in 0..self.num_nodes {
            if basis == LabelBasis::All || self.train_mask[v] {
                counts[self.labels[v]] += 1;
            }
        }
        counts
    }
}

/// Degree-normalized adjacency with self-loops: `D̂^{r−1} Â D̂^{−r}`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    matrix: CsrMatrix,
    kernel_coefficient: f64,
}

impl NormalizedAdjacency {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn kernel_coefficient(&self) -> f64 {
        self.kernel_coefficient
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }
}

/// Build `D̂^{r−1} Â D̂^{−r}` where `Â` is the adjacency with self-loops
/// added and `D̂` its degree matrix. `r = 1/2` gives the symmetric
/// normalization; self-loops keep every degree positive.
pub fn normalize_adjacency(g: &Graph, r: f64) -> NormalizedAdjacency {
    assert!(
        (0.0..=1.0).contains(&r),
        "kernel coefficient r must be in [0,1]"
    );
    let n = g.num_nodes;
    let degrees: Vec<f64> = (0..n).map(|v| (g.neighbors(v).len() + 1) as f64).collect();
    let mut triplets = Vec::with_capacity(2 * g.num_edges() + n);
    let scale = |i: usize, j: usize| degrees[i].powf(r - 1.0) * degrees[j].powf(-r);
    for v in 0..n {
        triplets.push((v, v, scale(v, v)));
        for &u in g.neighbors(v) {
            triplets.push((v, u, scale(v, u)));
        }
    }
    NormalizedAdjacency {
        matrix: CsrMatrix::from_triplets(n, triplets),
        kernel_coefficient: r,
    }
}

/// Fraction of a node's admitted neighbors sharing its label.
///
/// With `use_labeled_only` the admitted set is restricted to train-mask
/// neighbors. An empty admitted set scores 0 (treated as heterophilous).
pub fn homophily_scores(g: &Graph, use_labeled_only: bool) -> Vec<f64> {
    (0..g.num_nodes)
        .map(|v| {
            let mut same = 0usize;
            let mut total = 0usize;
            for &u in g.neighbors(v) {
                if use_labeled_only && !g.train_mask[u] {
                    continue;
                }
                total += 1;
                if g.labels[u] == g.labels[v] {
                    same += 1;
                }
            }
            if total == 0 {
                0.0
            } else {
                same as f64 / total as f64
            }
        })
        .collect()
}

/// Induced subgraph over `nodes`, reindexed contiguously in ascending
/// order of original id. Masks restrict; only edges with both endpoints
/// inside survive.
pub fn induce_subgraph(g: &Graph, nodes: &[usize]) -> Result<Graph> {
    if nodes.is_empty() {
        return Err(Error::InvalidGraph(
            "cannot induce an empty subgraph".into(),
        ));
    }
    let mut sorted: Vec<usize> = nodes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if *sorted.last().unwrap() >= g.num_nodes {
        return Err(Error::InvalidGraph(format!(
            "subgraph node {} out of range",
            sorted.last().unwrap()
        )));
    }
    let mut new_id = vec![usize::MAX; g.num_nodes];
    for (i, &v) in sorted.iter().enumerate() {
        new_id[v] = i;
    }
    let mut features = Array2::zeros((sorted.len(), g.feature_dim()));
    for (i, &v) in sorted.iter().enumerate() {
        features.row_mut(i).assign(&g.features.row(v));
    }
    let edges: Vec<(usize, usize)> = g
        .edges
        .iter()
        .filter(|&&(u, v)| new_id[u] != usize::MAX && new_id[v] != usize::MAX)
        .map(|&(u, v)| (new_id[u], new_id[v]))
        .collect();
    Graph::new(
        features,
        sorted.iter().map(|&v| g.labels[v]).collect(),
        edges,
        sorted.iter().map(|&v| g.train_mask[v]).collect(),
        sorted.iter().map(|&v| g.val_mask[v]).collect(),
        sorted.iter().map(|&v| g.test_mask[v]).collect(),
        g.num_classes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    

    fn tiny(edges: Vec<(usize, usize)>, labels: Vec<usize>, classes: usize) -> Graph {
        let n = labels.len();
        Graph::new(
            Array2::zeros((n, 2)),
            labels,
            edges,
            vec![true; n],
            vec![false; n],
            vec![false; n],
            classes,
        )
        .unwrap()
    }

    #[test]
    fn rejects_out_of_range_edge() {
        let err = Graph::new(
            Array2::zeros((2, 1)),
            vec![0, 0],
            vec![(0, 5)],
            vec![true, true],
            vec![false, false],
            vec![false, false],
            1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidGraph(_)));
    }

    #[test]
    fn rejects_duplicate_edge_any_orientation() {
        let err = Graph::new(
            Array2::zeros((2, 1)),
            vec![0, 0],
            vec![(0, 1), (1, 0)],
            vec![true, true],
            vec![false, false],
            vec![false, false],
            1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidGraph(_)));
    }

    #[test]
    fn rejects_overlapping_masks() {
        let err = Graph::new(
            Array2::zeros((1, 1)),
            vec![0],
            vec![],
            vec![true],
            vec![true],
            vec![false],
            1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidGraph(_)));
    }

    #[test]
    fn normalize_single_edge_symmetric() {
        let g = tiny(vec![(0, 1)], vec![0, 0], 1);
        let a = normalize_adjacency(&g, 0.5).matrix().to_dense();
        for &v in a.iter() {
            assert_abs_diff_eq!(v, 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn normalize_isolated_node_is_identity() {
        let g = tiny(vec![], vec![0], 1);
        for r in [0.0, 0.3, 0.5, 1.0] {
            let a = normalize_adjacency(&g, r).matrix().to_dense();
            assert_abs_diff_eq!(a[[0, 0]], 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn normalize_regular_graph_r1_rows_sum_to_one() {
        // Both nodes have degree 2 after self-loops, so the column scaling
        // at r=1 also leaves unit row sums on this regular graph.
        let g = tiny(vec![(0, 1)], vec![0, 0], 1);
        let a = normalize_adjacency(&g, 1.0).matrix().to_dense();
        for r in 0..2 {
            assert_abs_diff_eq!(a.row(r).sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn normalize_stochasticity_by_kernel() {
        // Irregular graph: a path 0-1-2. D̂^{r−1} Â D̂^{−r} is
        // row-stochastic at r=0 and column-stochastic at r=1.
        let g = tiny(vec![(0, 1), (1, 2)], vec![0, 0, 0], 1);
        let a0 = normalize_adjacency(&g, 0.0).matrix().to_dense();
        for r in 0..3 {
            assert_abs_diff_eq!(a0.row(r).sum(), 1.0, epsilon = 1e-12);
        }
        let a1 = normalize_adjacency(&g, 1.0).matrix().to_dense();
        for c in 0..3 {
            assert_abs_diff_eq!(a1.column(c).sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn homophily_counts_neighbors() {
        // Node 0 labeled 1 with neighbors labeled [1, 1, 0].
        let g = tiny(vec![(0, 1), (0, 2), (0, 3)], vec![1, 1, 1, 0], 2);
        let h = homophily_scores(&g, false);
        assert_abs_diff_eq!(h[0], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn homophily_empty_neighborhood_is_zero() {
        let g = tiny(vec![], vec![0], 1);
        assert_eq!(homophily_scores(&g, false)[0], 0.0);
    }

    #[test]
    fn homophily_clique_is_one() {
        let g = tiny(vec![(0, 1), (0, 2), (1, 2)], vec![0, 0, 0], 1);
        assert!(homophily_scores(&g, false).iter().all(|&h| h == 1.0));
    }

    #[test]
    fn homophily_labeled_only_ignores_unlabeled() {
        let g = Graph::new(
            Array2::zeros((3, 1)),
            vec![0, 0, 1],
            vec![(0, 1), (0, 2)],
            vec![true, true, false],
            vec![false, false, true],
            vec![false, false, false],
            2,
        )
        .unwrap();
        let h = homophily_scores(&g, true);
        // Node 0: only labeled neighbor is node 1, same class.
        assert_abs_diff_eq!(h[0], 1.0, epsilon = 1e-15);
        let h_all = homophily_scores(&g, false);
        assert_abs_diff_eq!(h_all[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn homophily_permutation_equivariant() {
        let g = tiny(vec![(0, 1), (1, 2), (2, 3), (0, 3)], vec![0, 1, 0, 1], 2);
        let perm = [2usize, 0, 3, 1]; // new id of old node v
        let mut inv = [0usize; 4];
        for (old, &new) in perm.iter().enumerate() {
            inv[new] = old;
        }
        let pg = tiny(
            g.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect(),
            (0..4).map(|v| g.labels[inv[v]]).collect(),
            2,
        );
        let h = homophily_scores(&g, false);
        let ph = homophily_scores(&pg, false);
        for v in 0..4 {
            assert_abs_diff_eq!(h[v], ph[perm[v]], epsilon = 1e-15);
        }
    }

    #[test]
    fn induce_full_set_is_identity() {
        let g = tiny(vec![(0, 1), (1, 2)], vec![0, 1, 0], 2);
        let s = induce_subgraph(&g, &[0, 1, 2]).unwrap();
        assert_eq!(s, g);
    }

    #[test]
    fn induce_single_node() {
        let g = tiny(vec![(0, 1)], vec![0, 1], 2);
        let s = induce_subgraph(&g, &[1]).unwrap();
        assert_eq!(s.num_nodes, 1);
        assert_eq!(s.num_edges(), 0);
        assert_eq!(s.labels, vec![1]);
    }

    #[test]
    fn induce_pair_from_triangle_keeps_one_edge() {
        let g = tiny(vec![(0, 1), (0, 2), (1, 2)], vec![0, 0, 0], 1);
        let s = induce_subgraph(&g, &[0, 1]).unwrap();
        assert_eq!(s.num_nodes, 2);
        assert_eq!(s.edges, vec![(0, 1)]);
    }

    #[test]
    fn induce_empty_set_errors() {
        let g = tiny(vec![], vec![0], 1);
        assert!(induce_subgraph(&g, &[]).is_err());
    }

    #[test]
    fn training_labels_hide_non_train() {
        let g = Graph::new(
            Array2::zeros((3, 1)),
            vec![0, 1, 1],
            vec![],
            vec![true, false, false],
            vec![false, true, false],
            vec![false, false, true],
            2,
        )
        .unwrap();
        assert_eq!(g.training_labels(), vec![Some(0), None, None]);
    }
}
