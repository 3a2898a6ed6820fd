//! Canonical line-based graph format.
//!
//! ```text
//! n m f C
//! id label split f_0 … f_{f−1}     (n lines, ids ascending from 0)
//! u v                              (m lines, u < v)
//! ```
//!
//! `split` is one of `train`, `val`, `test`. Converters from external
//! dataset formats are an extension point and live outside this crate.

use super::Graph;
use crate::error::{Error, Result};
use ndarray::Array2;
use std::fmt::Write as _;
use std::path::Path;

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse::<T>()
        .map_err(|_| parse_err(line, format!("invalid {what}: {tok:?}")))
}

/// Parse a graph from canonical-format text.
pub fn parse_graph(text: &str) -> Result<Graph> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() != 4 {
        return Err(parse_err(hline, "header must be `n m f C`"));
    }
    let n: usize = parse_num(head[0], hline, "node count")?;
    let m: usize = parse_num(head[1], hline, "edge count")?;
    let f: usize = parse_num(head[2], hline, "feature dim")?;
    let c: usize = parse_num(head[3], hline, "class count")?;

    let mut features = Array2::zeros((n, f));
    let mut labels = vec![0usize; n];
    let mut train = vec![false; n];
    let mut val = vec![false; n];
    let mut test = vec![false; n];
    for want_id in 0..n {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| parse_err(want_id + 2, "missing node line"))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 + f {
            return Err(parse_err(
                ln,
                format!("node line needs {} fields, found {}", 3 + f, toks.len()),
            ));
        }
        let id: usize = parse_num(toks[0], ln, "node id")?;
        if id != want_id {
            return Err(parse_err(
                ln,
                format!("expected node id {want_id}, found {id}"),
            ));
        }
        let label: usize = parse_num(toks[1], ln, "label")?;
        if label >= c {
            return Err(parse_err(
                ln,
                format!("label {label} out of range [0, {c})"),
            ));
        }
        labels[id] = label;
        match toks[2] {
            "train" => train[id] = true,
            "val" => val[id] = true,
            "test" => test[id] = true,
            other => return Err(parse_err(ln, format!("unknown split {other:?}"))),
        }
        for (j, tok) in toks[3..].iter().enumerate() {
            features[[id, j]] = parse_num(tok, ln, "feature value")?;
        }
    }

    let mut edges = Vec::with_capacity(m);
    let mut seen = std::collections::HashSet::with_capacity(m);
    for k in 0..m {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| parse_err(n + k + 2, "missing edge line"))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(parse_err(ln, "edge line needs `u v`"));
        }
        let u: usize = parse_num(toks[0], ln, "edge endpoint")?;
        let v: usize = parse_num(toks[1], ln, "edge endpoint")?;
        if u >= n || v >= n {
            return Err(parse_err(
                ln,
                format!("edge ({u}, {v}) endpoint out of range for {n} nodes"),
            ));
        }
        if u >= v {
            return Err(parse_err(ln, format!("edge ({u}, {v}) must satisfy u < v")));
        }
        if !seen.insert((u, v)) {
            return Err(parse_err(ln, format!("duplicate edge ({u}, {v})")));
        }
        edges.push((u, v));
    }
    if let Some((ln, line)) = lines.next() {
        if !line.trim().is_empty() {
            return Err(parse_err(ln, "trailing content after edge section"));
        }
    }
    Graph::new(features, labels, edges, train, val, test, c)
}

/// Load a graph from a canonical-format file.
pub fn load_graph(path: impl AsRef<Path>) -> Result<Graph> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_graph(&text)
}

/// Serialize a graph to canonical-format text. Floats use the shortest
/// round-trip representation, so write→read is lossless and repeated
/// writes are byte-identical.
pub fn graph_to_string(g: &Graph) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} {} {} {}",
        g.num_nodes,
        g.num_edges(),
        g.feature_dim(),
        g.num_classes
    );
    for v in 0..g.num_nodes {
        let split = if g.train_mask[v] {
            "train"
        } else if g.val_mask[v] {
            "val"
        } else {
            "test"
        };
        let _ = write!(out, "{} {} {}", v, g.labels[v], split);
        for j in 0..g.feature_dim() {
            let _ = write!(out, " {}", g.features[[v, j]]);
        }
        out.push('\n');
    }
    for &(u, v) in &g.edges {
        let _ = writeln!(out, "{u} {v}");
    }
    out
}

/// Write a graph to disk in canonical format.
pub fn save_graph(g: &Graph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, graph_to_string(g)).map_err(|e| Error::io(path.display().to_string(), e))
}
