//! Report files for one federation run: a per-round record stream, a
//! best-round summary, a convergence trace, and per-client breakdowns.
//! Every file starts with a `schema=1` line and uses stable field
//! ordering, so re-emitting the same run is byte-identical.

use crate::error::{Error, Result};
use crate::federation::{convergence_summary, RoundReport, RunReport, Strategy};
use crate::metrics::GroupKind;
use std::fmt::Write as _;
use std::path::Path;

pub const SCHEMA_LINE: &str = "schema=1";
pub const STREAM_FILE: &str = "rounds.txt";
pub const SUMMARY_FILE: &str = "summary.tsv";
pub const CONVERGENCE_FILE: &str = "convergence.tsv";
pub const PER_CLIENT_FILE: &str = "per_client.tsv";

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "NA".to_string(),
    }
}

/// One line of the per-round stream (test-set metrics).
pub fn stream_line(report: &RoundReport, strategy: Strategy, seed: u64) -> String {
    format!(
        "round={} strategy={} seed={} accuracy={} overall_f1={} min_f1={} hete_f1={} hete_min_f1={} train_loss={}",
        report.round,
        strategy.name(),
        seed,
        report.test.accuracy,
        report.test.overall_f1,
        fmt_opt(report.test.min_f1),
        fmt_opt(report.test.hete_f1),
        fmt_opt(report.test.hete_min_f1),
        report.mean_train_loss,
    )
}

/// Summary row of one run, parsed back by the report aggregator.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub strategy: String,
    pub seed: u64,
    pub rounds: usize,
    pub best_round: usize,
    pub val_overall_f1: f64,
    pub test_accuracy: f64,
    pub test_overall_f1: f64,
    pub test_min_f1: Option<f64>,
    pub test_hete_f1: Option<f64>,
    pub test_hete_min_f1: Option<f64>,
    pub rounds_to_90pct: usize,
    pub transmitted_per_client: usize,
    pub test_nodes: usize,
    pub minority_nodes: usize,
    pub hete_nodes: usize,
    pub hete_min_nodes: usize,
}

impl RunSummary {
    pub fn from_run(run: &RunReport, strategy: Strategy, seed: u64) -> Self {
        let best = &run.rounds[run.best_round];
        let count = |kind: GroupKind| {
            (0..run.tags.len())
                .filter(|&i| run.tags.in_group(i, kind))
                .count()
        };
        RunSummary {
            strategy: strategy.name().to_string(),
            seed,
            rounds: run.rounds.len(),
            best_round: run.best_round,
            val_overall_f1: best.val.overall_f1,
            test_accuracy: best.test.accuracy,
            test_overall_f1: best.test.overall_f1,
            test_min_f1: best.test.min_f1,
            test_hete_f1: best.test.hete_f1,
            test_hete_min_f1: best.test.hete_min_f1,
            rounds_to_90pct: convergence_summary(&run.rounds, 0.9),
            transmitted_per_client: best.transmitted_coords.first().copied().unwrap_or(0),
            test_nodes: run.tags.len(),
            minority_nodes: count(GroupKind::Minority),
            hete_nodes: count(GroupKind::Heterophilous),
            hete_min_nodes: count(GroupKind::HeteMin),
        }
    }
}

const SUMMARY_HEADER: &str = "strategy\tseed\trounds\tbest_round\tval_overall_f1\ttest_accuracy\ttest_overall_f1\ttest_min_f1\ttest_hete_f1\ttest_hete_min_f1\trounds_to_90pct\ttransmitted_per_client\ttest_nodes\tminority_nodes\thete_nodes\thete_min_nodes";

fn summary_to_string(s: &RunSummary) -> String {
    format!(
        "{}\n{}\n{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
        SCHEMA_LINE,
        SUMMARY_HEADER,
        s.strategy,
        s.seed,
        s.rounds,
        s.best_round,
        s.val_overall_f1,
        s.test_accuracy,
        s.test_overall_f1,
        fmt_opt(s.test_min_f1),
        fmt_opt(s.test_hete_f1),
        fmt_opt(s.test_hete_min_f1),
        s.rounds_to_90pct,
        s.transmitted_per_client,
        s.test_nodes,
        s.minority_nodes,
        s.hete_nodes,
        s.hete_min_nodes,
    )
}

fn parse_opt(tok: &str) -> Result<Option<f64>> {
    if tok == "NA" {
        return Ok(None);
    }
    tok.parse::<f64>().map(Some).map_err(|_| Error::Parse {
        line: 3,
        message: format!("bad float {tok:?}"),
    })
}

/// Parse a summary file written by [`emit_report`].
pub fn parse_summary(text: &str) -> Result<RunSummary> {
    let mut lines = text.lines();
    let schema = lines.next().unwrap_or_default();
    if schema != SCHEMA_LINE {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected {SCHEMA_LINE:?}"),
        });
    }
    let header = lines.next().unwrap_or_default();
    if header != SUMMARY_HEADER {
        return Err(Error::Parse {
            line: 2,
            message: "unexpected summary header".into(),
        });
    }
    let row = lines.next().ok_or(Error::Parse {
        line: 3,
        message: "missing summary row".into(),
    })?;
    let toks: Vec<&str> = row.split('\t').collect();
    if toks.len() != 16 {
        return Err(Error::Parse {
            line: 3,
            message: format!("expected 16 fields, found {}", toks.len()),
        });
    }
    let p_usize = |tok: &str| -> Result<usize> {
        tok.parse().map_err(|_| Error::Parse {
            line: 3,
            message: format!("bad count {tok:?}"),
        })
    };
    let p_f64 = |tok: &str| -> Result<f64> {
        tok.parse().map_err(|_| Error::Parse {
            line: 3,
            message: format!("bad float {tok:?}"),
        })
    };
    Ok(RunSummary {
        strategy: toks[0].to_string(),
        seed: toks[1].parse().map_err(|_| Error::Parse {
            line: 3,
            message: "bad seed".into(),
        })?,
        rounds: p_usize(toks[2])?,
        best_round: p_usize(toks[3])?,
        val_overall_f1: p_f64(toks[4])?,
        test_accuracy: p_f64(toks[5])?,
        test_overall_f1: p_f64(toks[6])?,
        test_min_f1: parse_opt(toks[7])?,
        test_hete_f1: parse_opt(toks[8])?,
        test_hete_min_f1: parse_opt(toks[9])?,
        rounds_to_90pct: p_usize(toks[10])?,
        transmitted_per_client: p_usize(toks[11])?,
        test_nodes: p_usize(toks[12])?,
        minority_nodes: p_usize(toks[13])?,
        hete_nodes: p_usize(toks[14])?,
        hete_min_nodes: p_usize(toks[15])?,
    })
}

fn stream_to_string(run: &RunReport, strategy: Strategy, seed: u64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{SCHEMA_LINE}");
    for report in &run.rounds {
        let _ = writeln!(out, "{}", stream_line(report, strategy, seed));
    }
    out
}

fn convergence_to_string(run: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{SCHEMA_LINE}");
    let _ = writeln!(out, "round\tval_overall_f1\ttest_overall_f1");
    for report in &run.rounds {
        let _ = writeln!(
            out,
            "{}\t{}\t{}",
            report.round, report.val.overall_f1, report.test.overall_f1
        );
    }
    out
}

fn per_client_to_string(run: &RunReport) -> String {
    let best = &run.rounds[run.best_round];
    let mut out = String::new();
    let _ = writeln!(out, "{SCHEMA_LINE}");
    let _ = writeln!(
        out,
        "client\ttest_nodes\taccuracy\toverall_f1\tmin_f1\thete_f1\thete_min_f1"
    );
    for (client, bundle) in best.per_client_test.iter().enumerate() {
        let test_nodes = run
            .tags
            .entries
            .iter()
            .filter(|&&(c, _)| c == client)
            .count();
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            client,
            test_nodes,
            bundle.accuracy,
            bundle.overall_f1,
            fmt_opt(bundle.min_f1),
            fmt_opt(bundle.hete_f1),
            fmt_opt(bundle.hete_min_f1),
        );
    }
    out
}

fn write_file(dir: &Path, name: &str, content: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, content).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Write the full report set for one run into `dir` (created if absent):
/// the per-round stream, the best-round summary, the convergence trace,
/// and per-client breakdowns.
pub fn emit_report(run: &RunReport, strategy: Strategy, seed: u64, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    write_file(dir, STREAM_FILE, &stream_to_string(run, strategy, seed))?;
    write_file(
        dir,
        SUMMARY_FILE,
        &summary_to_string(&RunSummary::from_run(run, strategy, seed)),
    )?;
    write_file(dir, CONVERGENCE_FILE, &convergence_to_string(run))?;
    write_file(dir, PER_CLIENT_FILE, &per_client_to_string(run))?;
    Ok(())
}
