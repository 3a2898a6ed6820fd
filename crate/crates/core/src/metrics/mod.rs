//! Node-group construction and evaluation metrics: accuracy, macro-F1,
//! and the disadvantaged-group F1 variants (minority, heterophilous, and
//! their intersection).

pub mod report;

use crate::client::majority_classes;
use crate::error::{Error, Result};
use crate::graph::{homophily_scores, Graph, LabelBasis};
use std::collections::BTreeSet;

/// Per-test-node group flags for the pooled evaluation set.
///
/// Entries are ordered by `(client id, local node id)` ascending; every
/// prediction/label vector evaluated against these tags must use the same
/// ordering. Both flags are client-relative: minority means the node's
/// class is not a majority class *of its own client*, and the
/// heterophilous half is ranked within each client's test nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupTags {
    pub entries: Vec<(usize, usize)>,
    pub is_minority: Vec<bool>,
    pub is_heterophilous: Vec<bool>,
    /// Clients with fewer than two test nodes, whose nodes were all
    /// tagged non-heterophilous because a 50% rank split is undefined.
    pub skipped_rank_clients: Vec<usize>,
}

/// Which tagged subset a group metric restricts to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKind {
    Minority,
    Heterophilous,
    HeteMin,
}

/// Evaluation metrics over one pooled node set.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsBundle {
    pub accuracy: f64,
    pub overall_f1: f64,
    /// `None` when the group is empty (reported as N/A).
    pub min_f1: Option<f64>,
    pub hete_f1: Option<f64>,
    pub hete_min_f1: Option<f64>,
    pub per_class_f1: Vec<f64>,
}

/// Tag every test node across clients. Minority classes per client are
/// the complement of the majority classes over all local nodes;
/// heterophilous nodes are the bottom `⌈50%⌉` of each client's test nodes
/// ranked by all-neighbor homophily (ties rank the lower node id as more
/// homophilous).
pub fn build_group_tags(client_graphs: &[Graph]) -> GroupTags {
    let mut entries = Vec::new();
    let mut is_minority = Vec::new();
    let mut is_heterophilous = Vec::new();
    let mut skipped = Vec::new();
    for (client, g) in client_graphs.iter().enumerate() {
        let majority = majority_classes(g, LabelBasis::All);
        let scores = homophily_scores(g, false);
        let test_nodes: Vec<usize> = (0..g.num_nodes).filter(|&v| g.test_mask[v]).collect();
        let mut hete = vec![false; test_nodes.len()];
        if test_nodes.len() < 2 {
            skipped.push(client);
        } else {
            let mut ranked: Vec<usize> = (0..test_nodes.len()).collect();
            ranked.sort_by(|&a, &b| {
                scores[test_nodes[b]]
                    .partial_cmp(&scores[test_nodes[a]])
                    .unwrap()
                    .then(test_nodes[a].cmp(&test_nodes[b]))
            });
            let homo_count = test_nodes.len() / 2;
            for &idx in ranked.iter().skip(homo_count) {
                hete[idx] = true;
            }
        }
        for (idx, &v) in test_nodes.iter().enumerate() {
            entries.push((client, v));
            is_minority.push(!majority.contains(&g.labels[v]));
            is_heterophilous.push(hete[idx]);
        }
    }
    GroupTags {
        entries,
        is_minority,
        is_heterophilous,
        skipped_rank_clients: skipped,
    }
}

impl GroupTags {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn in_group(&self, idx: usize, kind: GroupKind) -> bool {
        match kind {
            GroupKind::Minority => self.is_minority[idx],
            GroupKind::Heterophilous => self.is_heterophilous[idx],
            GroupKind::HeteMin => self.is_minority[idx] && self.is_heterophilous[idx],
        }
    }
}

/// Unweighted mean of per-class F1 over `class_set`, with zero-division
/// conventions: precision, recall, and F1 all fall back to 0 when their
/// denominator is 0. Classes absent from both predictions and labels
/// still count as 0 when listed in `class_set`.
pub fn macro_f1(preds: &[usize], labels: &[usize], class_set: &BTreeSet<usize>) -> Result<f64> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::InvalidConfig(
            "macro_f1 needs aligned nonempty predictions and labels".into(),
        ));
    }
    if class_set.is_empty() {
        return Err(Error::InvalidConfig(
            "macro_f1 needs a nonempty class set".into(),
        ));
    }
    let mut total = 0.0;
    for &y in class_set {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fne = 0usize;
        for (&p, &l) in preds.iter().zip(labels) {
            match (p == y, l == y) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fne += 1,
                (false, false) => {}
            }
        }
        let precision = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fne == 0 {
            0.0
        } else {
            tp as f64 / (tp + fne) as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        total += f1;
    }
    Ok(total / class_set.len() as f64)
}

/// Per-class F1 over the full class range, for reporting.
pub fn per_class_f1(preds: &[usize], labels: &[usize], num_classes: usize) -> Vec<f64> {
    (0..num_classes)
        .map(|y| macro_f1(preds, labels, &BTreeSet::from([y])).unwrap_or(0.0))
        .collect()
}

/// Fraction of correct predictions.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::InvalidConfig(
            "accuracy needs aligned nonempty predictions and labels".into(),
        ));
    }
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / preds.len() as f64)
}

/// Macro-F1 restricted to nodes carrying the group tag, over the classes
/// present among those nodes' labels. `None` when the group is empty.
pub fn group_f1(
    preds: &[usize],
    labels: &[usize],
    tags: &GroupTags,
    kind: GroupKind,
) -> Option<f64> {
    assert_eq!(preds.len(), tags.len(), "predictions must align with tags");
    assert_eq!(labels.len(), tags.len(), "labels must align with tags");
    let selected: Vec<usize> = (0..tags.len())
        .filter(|&i| tags.in_group(i, kind))
        .collect();
    if selected.is_empty() {
        return None;
    }
    let sub_preds: Vec<usize> = selected.iter().map(|&i| preds[i]).collect();
    let sub_labels: Vec<usize> = selected.iter().map(|&i| labels[i]).collect();
    let classes: BTreeSet<usize> = sub_labels.iter().copied().collect();
    Some(macro_f1(&sub_preds, &sub_labels, &classes).expect("nonempty by construction"))
}

/// Bundle of every headline metric for one prediction vector, using the
/// full class range for the overall F1 and tag restrictions for the
/// group F1 variants.
pub fn metrics_bundle(
    preds: &[usize],
    labels: &[usize],
    num_classes: usize,
    tags: Option<&GroupTags>,
) -> Result<MetricsBundle> {
    let class_set: BTreeSet<usize> = (0..num_classes).collect();
    Ok(MetricsBundle {
        accuracy: accuracy(preds, labels)?,
        overall_f1: macro_f1(preds, labels, &class_set)?,
        min_f1: tags.and_then(|t| group_f1(preds, labels, t, GroupKind::Minority)),
        hete_f1: tags.and_then(|t| group_f1(preds, labels, t, GroupKind::Heterophilous)),
        hete_min_f1: tags.and_then(|t| group_f1(preds, labels, t, GroupKind::HeteMin)),
        per_class_f1: per_class_f1(preds, labels, num_classes),
    })
}
