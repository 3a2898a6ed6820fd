//! Deterministic federated graph-learning simulator.
//!
//! Implements fairness-aware client training over a shared two-layer GCN
//! (history fusion, distillation, majority alignment, gradient surgery),
//! sparse top-k communication, clustered server aggregation, FedAvg and
//! FedProx baselines, and a node-group fairness metrics suite.

pub mod error;
pub mod graph;
pub mod sparse;

pub mod gnn;

pub mod client;
pub mod server;

pub mod federation;
pub mod metrics;

pub use error::{Error, Result};
pub use graph::io::{load_graph, save_graph};
pub use graph::partition::{edge_cut, partition_fennel, partition_label_skew, PartitionAssignment};
pub use graph::sbm::{generate_sbm, SbmConfig};
pub use graph::{
    homophily_scores, induce_subgraph, normalize_adjacency, Graph, LabelBasis, NormalizedAdjacency,
};

pub use gnn::{
    cross_entropy_loss, finite_diff_check, gcn_backward, gcn_forward, kl_div_loss, optimizer_step,
    CeTerm, ForwardCache, Gradients, KlTerm, LossSpec, ModelParams, ProxTerm,
};

pub use client::{
    alignment_targets, build_history_model, compute_prototypes, deviated_gradient, fused_params,
    majority_alignment_loss, majority_classes, modify_gradient, select_topk_delta,
    train_local_round, ClientState, ClientUpdate, DeviatedPackage, FairnessLossConfig, ParamMask,
    SparseDelta, TrainOptions,
};

pub use server::{
    aggregate_round, build_deviated_packages, cluster_updates, densify, pair_deviated,
    silhouette_score, ClusteringResult, EtaMode, RoundUploads, ServerConfig,
};

pub use federation::{
    convergence_summary, run_federation, run_federation_with, select_best_round, RoundReport,
    RunConfig, RunReport, Strategy,
};

pub use metrics::report::{emit_report, parse_summary, stream_line, RunSummary};
pub use metrics::{
    accuracy, build_group_tags, group_f1, macro_f1, metrics_bundle, GroupKind, GroupTags,
    MetricsBundle,
};
