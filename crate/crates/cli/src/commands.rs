//! Subcommand implementations. Every command validates its configuration
//! before touching the filesystem, so validation failures leave no
//! partial outputs.

use crate::config::ExperimentConfig;
use anyhow::{anyhow, bail, Context, Result};
use fairfgl_core::metrics::report as report_files;
use fairfgl_core::{
    emit_report, generate_sbm, induce_subgraph, load_graph, parse_summary, partition_fennel,
    partition_label_skew, run_federation_with, save_graph, stream_line, Graph, LabelBasis,
    PartitionAssignment, RunSummary, Strategy,
};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

/// Write the per-node assignment file: a `n num_parts` header, then one
/// client id per line.
pub fn save_assignment(a: &PartitionAssignment, path: &Path) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", a.part_of.len(), a.num_parts);
    for &p in &a.part_of {
        let _ = writeln!(out, "{p}");
    }
    std::fs::write(path, out).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

pub fn load_assignment(path: &Path, num_nodes: usize) -> Result<PartitionAssignment> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read assignment {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| anyhow!("empty assignment file"))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() != 2 {
        bail!("assignment header must be `n num_parts`");
    }
    let n: usize = head[0]
        .parse()
        .context("bad node count in assignment header")?;
    let parts: usize = head[1]
        .parse()
        .context("bad part count in assignment header")?;
    if n != num_nodes {
        bail!("assignment covers {n} nodes but the graph has {num_nodes}");
    }
    let part_of: Vec<usize> = lines
        .map(|l| l.trim().parse::<usize>().context("bad part id"))
        .collect::<Result<_>>()?;
    if part_of.len() != n {
        bail!("assignment has {} rows, expected {n}", part_of.len());
    }
    Ok(PartitionAssignment::new(part_of, parts)?)
}

fn class_counts_string(counts: &[usize]) -> String {
    let inner: Vec<String> = counts.iter().map(|c| c.to_string()).collect();
    format!("[{}]", inner.join(", "))
}

/// Resolve the dataset for one federation seed: load from disk or draw
/// the configured synthetic graph.
fn resolve_graph(cfg: &ExperimentConfig, seed: u64) -> Result<Graph> {
    match (&cfg.dataset.path, &cfg.dataset.sbm) {
        (Some(path), None) => Ok(load_graph(path)?),
        (None, Some(sbm)) => Ok(generate_sbm(&sbm.to_config(seed))?),
        _ => bail!("[dataset] must set exactly one of `path` / `sbm`"),
    }
}

fn resolve_partition(
    cfg: &ExperimentConfig,
    g: &Graph,
    seed: u64,
) -> Result<Option<PartitionAssignment>> {
    let Some(p) = &cfg.partition else {
        return Ok(None);
    };
    if let Some(path) = &p.path {
        return Ok(Some(load_assignment(path, g.num_nodes)?));
    }
    let assignment = match p.method.as_str() {
        "fennel" => partition_fennel(g, p.num_clients, p.balance_gamma)?,
        "label-skew" => partition_label_skew(g, p.num_clients, p.alpha, p.seed.unwrap_or(seed))?,
        other => bail!("unknown partition method {other:?}"),
    };
    Ok(Some(assignment))
}

/// Client subgraphs for one federation seed.
pub fn prepare_clients(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Graph>> {
    let g = resolve_graph(cfg, seed)?;
    match resolve_partition(cfg, &g, seed)? {
        Some(assignment) => assignment
            .part_members()
            .iter()
            .map(|nodes| induce_subgraph(&g, nodes).map_err(Into::into))
            .collect(),
        None => Ok(vec![g]),
    }
}

/// `gen`: write the configured synthetic dataset and print its stats.
pub fn cmd_gen(cfg: &ExperimentConfig, out: &Path, seed_override: Option<u64>) -> Result<()> {
    let Some(sbm) = &cfg.dataset.sbm else {
        bail!("gen needs an [dataset.sbm] table");
    };
    let seed = seed_override
        .or(sbm.seed)
        .unwrap_or_else(|| cfg.output.seeds.first().copied().unwrap_or(0));
    let g = generate_sbm(&sbm.to_config(seed))?;
    save_graph(&g, out)?;
    println!(
        "n={} m={} f={} C={} class_counts={}",
        g.num_nodes,
        g.num_edges(),
        g.feature_dim(),
        g.num_classes,
        class_counts_string(&g.class_counts(LabelBasis::All)),
    );
    Ok(())
}

/// `partition`: split the dataset and print the per-client class
/// histogram.
pub fn cmd_partition(cfg: &ExperimentConfig, out: &Path, seed_override: Option<u64>) -> Result<()> {
    let Some(p) = &cfg.partition else {
        bail!("partition needs a [partition] section");
    };
    let seed = seed_override
        .or(p.seed)
        .unwrap_or_else(|| cfg.output.seeds.first().copied().unwrap_or(0));
    let g = resolve_graph(cfg, seed)?;
    let assignment = match p.method.as_str() {
        "fennel" => partition_fennel(&g, p.num_clients, p.balance_gamma)?,
        "label-skew" => partition_label_skew(&g, p.num_clients, p.alpha, seed)?,
        other => bail!("unknown partition method {other:?}"),
    };
    save_assignment(&assignment, out)?;
    println!(
        "cut={} parts={}",
        fairfgl_core::edge_cut(&g, &assignment),
        assignment.num_parts
    );
    for (client, row) in assignment.class_histogram(&g).iter().enumerate() {
        let total: usize = row.iter().sum();
        println!(
            "client {client}: total={total} classes={}",
            class_counts_string(row)
        );
    }
    Ok(())
}

/// `train`: run every configured strategy for every seed, streaming the
/// per-round record file (append + flush each round) and writing the full
/// report set at the end.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    let strategies = cfg.strategies()?;
    for &strategy in &strategies {
        for &seed in &cfg.output.seeds {
            let clients = prepare_clients(cfg, seed)?;
            let run_cfg = cfg.run_config(strategy, seed)?;
            let dir = cfg.run_dir(strategy, seed);
            std::fs::create_dir_all(&dir)
                .with_context(|| format!("cannot create {}", dir.display()))?;
            let stream_path = dir.join(report_files::STREAM_FILE);
            let mut stream = std::fs::File::create(&stream_path)
                .with_context(|| format!("cannot create {}", stream_path.display()))?;
            writeln!(stream, "{}", report_files::SCHEMA_LINE)?;
            stream.flush()?;
            let report = run_federation_with(clients, &run_cfg, &mut |round| {
                let line = stream_line(round, strategy, seed);
                writeln!(stream, "{line}").map_err(|e| fairfgl_core::Error::Io {
                    path: stream_path.display().to_string(),
                    source: e,
                })?;
                stream.flush().map_err(|e| fairfgl_core::Error::Io {
                    path: stream_path.display().to_string(),
                    source: e,
                })?;
                Ok(())
            })?;
            drop(stream);
            emit_report(&report, strategy, seed, &dir)?;
            let best = &report.rounds[report.best_round];
            println!(
                "{} seed={} best_round={} val_f1={:.4} test_f1={:.4} hete_min_f1={}",
                strategy.name(),
                seed,
                report.best_round,
                best.val.overall_f1,
                best.test.overall_f1,
                best.test
                    .hete_min_f1
                    .map_or("NA".to_string(), |v| format!("{v:.4}")),
            );
        }
    }
    Ok(())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation.
fn pop_sigma(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Table II style cell: `mean(sigma)` with two decimals.
pub fn mean_sigma_cell(values: &[f64]) -> String {
    format!("{:.2}({:.2})", mean(values), pop_sigma(values))
}

fn optional_cell(values: &[Option<f64>]) -> String {
    let known: Vec<f64> = values.iter().filter_map(|v| *v).collect();
    if known.len() == values.len() {
        mean_sigma_cell(&known)
    } else {
        "NA".to_string()
    }
}

/// Mean per-round validation/test F1 across seeds for one strategy,
/// serialized in the same layout as the per-run trace files.
fn aggregate_convergence(cfg: &ExperimentConfig, strategy: Strategy) -> Result<String> {
    let mut traces: Vec<Vec<(f64, f64)>> = Vec::new();
    for &seed in &cfg.output.seeds {
        let path = cfg
            .run_dir(strategy, seed)
            .join(report_files::CONVERGENCE_FILE);
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate().skip(2) {
            let toks: Vec<&str> = line.split('\t').collect();
            if toks.len() != 3 {
                bail!("{}: malformed row at line {}", path.display(), i + 1);
            }
            rows.push((
                toks[1].parse::<f64>().context("bad val f1")?,
                toks[2].parse::<f64>().context("bad test f1")?,
            ));
        }
        if let Some(prev) = traces.first() {
            if prev.len() != rows.len() {
                bail!("convergence traces disagree on round count for {}", strategy.name());
            }
        }
        traces.push(rows);
    }
    let rounds = traces.first().map_or(0, |t| t.len());
    let mut out = String::new();
    let _ = writeln!(out, "{}", report_files::SCHEMA_LINE);
    let _ = writeln!(out, "round\tval_overall_f1\ttest_overall_f1");
    for round in 0..rounds {
        let val: Vec<f64> = traces.iter().map(|t| t[round].0).collect();
        let test: Vec<f64> = traces.iter().map(|t| t[round].1).collect();
        let _ = writeln!(out, "{}\t{}\t{}", round, mean(&val), mean(&test));
    }
    Ok(out)
}

/// `report`: aggregate the per-run summaries across seeds into one row
/// per strategy (mean with population standard deviation in brackets)
/// plus a mean convergence trace per strategy.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<()> {
    let strategies = cfg.strategies()?;
    let mut missing = Vec::new();
    let mut rows: Vec<(Strategy, Vec<RunSummary>)> = Vec::new();
    for &strategy in &strategies {
        let mut summaries = Vec::new();
        for &seed in &cfg.output.seeds {
            let path = cfg.run_dir(strategy, seed).join(report_files::SUMMARY_FILE);
            match std::fs::read_to_string(&path) {
                Ok(text) => summaries.push(parse_summary(&text)?),
                Err(_) => missing.push(path),
            }
        }
        rows.push((strategy, summaries));
    }
    if !missing.is_empty() {
        let listing: Vec<String> = missing.iter().map(|p| p.display().to_string()).collect();
        bail!("missing run outputs:\n  {}", listing.join("\n  "));
    }

    let mut table = String::new();
    let _ = writeln!(table, "{}", report_files::SCHEMA_LINE);
    let _ = writeln!(
        table,
        "strategy\tseeds\toverall_f1\taccuracy\tmin_f1\thete_f1\thete_min_f1\trounds_to_90pct"
    );
    for (strategy, summaries) in &rows {
        let f1: Vec<f64> = summaries.iter().map(|s| s.test_overall_f1).collect();
        let acc: Vec<f64> = summaries.iter().map(|s| s.test_accuracy).collect();
        let min_f1: Vec<Option<f64>> = summaries.iter().map(|s| s.test_min_f1).collect();
        let hete_f1: Vec<Option<f64>> = summaries.iter().map(|s| s.test_hete_f1).collect();
        let hm_f1: Vec<Option<f64>> = summaries.iter().map(|s| s.test_hete_min_f1).collect();
        let conv: Vec<f64> = summaries.iter().map(|s| s.rounds_to_90pct as f64).collect();
        let _ = writeln!(
            table,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.1}",
            strategy.name(),
            summaries.len(),
            mean_sigma_cell(&f1),
            mean_sigma_cell(&acc),
            optional_cell(&min_f1),
            optional_cell(&hete_f1),
            optional_cell(&hm_f1),
            mean(&conv),
        );
    }
    std::fs::create_dir_all(&cfg.output.dir)
        .with_context(|| format!("cannot create {}", cfg.output.dir.display()))?;
    for &strategy in &strategies {
        let trace = aggregate_convergence(cfg, strategy)?;
        let path = cfg
            .output
            .dir
            .join(format!("convergence-{}.tsv", strategy.name()));
        std::fs::write(&path, trace)
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    let out_path = cfg.output.dir.join("report.tsv");
    std::fs::write(&out_path, &table)
        .with_context(|| format!("cannot write {}", out_path.display()))?;
    print!("{table}");
    Ok(())
}
