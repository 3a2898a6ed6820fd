//! End-to-end flows through the `fairfgl` binary: generate, partition,
//! train, report, exit codes, and help-text defaults.

use std::path::Path;
use std::process::{Command, Output};

fn fairfgl(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairfgl"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn fairfgl")
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("exp.toml");
    std::fs::write(&path, body).unwrap();
    path
}

const GEN_CONFIG: &str = r#"
[dataset.sbm]
block_sizes = [200, 50, 50]
p_in = 0.1
p_out = 0.02
feature_dim = 4

[output]
seeds = [7]
"#;

#[test]
fn gen_writes_graph_and_prints_stats() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), GEN_CONFIG);
    let out = fairfgl(
        &[
            "gen",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            "g.txt",
            "--seed",
            "7",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("n=300"), "{stdout}");
    assert!(stdout.contains("class_counts=[200, 50, 50]"), "{stdout}");
    let g = fairfgl_core::load_graph(dir.path().join("g.txt")).unwrap();
    assert_eq!(g.num_nodes, 300);
    assert_eq!(g.num_classes, 3);

    // Idempotence: identical config and seed give identical bytes.
    let first = std::fs::read(dir.path().join("g.txt")).unwrap();
    let out = fairfgl(
        &[
            "gen",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            "g.txt",
            "--seed",
            "7",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    assert_eq!(first, std::fs::read(dir.path().join("g.txt")).unwrap());
}

#[test]
fn gen_rejects_invalid_probability_with_usage_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &GEN_CONFIG.replace("p_in = 0.1", "p_in = -0.2"));
    let out = fairfgl(
        &["gen", "--config", cfg.to_str().unwrap(), "--out", "bad.txt"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(
        !dir.path().join("bad.txt").exists(),
        "validation failure wrote output"
    );
}

const PART_CONFIG: &str = r#"
[dataset.sbm]
block_sizes = [40, 40, 40, 40]
p_in = 0.25
p_out = 0.02
feature_dim = 4

[partition]
method = "fennel"
num_clients = 4

[output]
seeds = [1]
"#;

#[test]
fn partition_produces_nonempty_parts_and_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), PART_CONFIG);
    let out = fairfgl(
        &[
            "partition",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            "parts.txt",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = stdout
        .lines()
        .filter(|l| l.starts_with("client "))
        .collect();
    assert_eq!(rows.len(), 4, "{stdout}");

    // Histogram rows add up to the part sizes in the written assignment.
    let text = std::fs::read_to_string(dir.path().join("parts.txt")).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert_eq!(header, "160 4");
    let mut sizes = [0usize; 4];
    for line in lines {
        sizes[line.trim().parse::<usize>().unwrap()] += 1;
    }
    assert!(sizes.iter().all(|&s| s > 0));
    for (row, &size) in rows.iter().zip(&sizes) {
        let total: usize = row
            .split("total=")
            .nth(1)
            .unwrap()
            .split_whitespace()
            .next()
            .unwrap()
            .parse()
            .unwrap();
        assert_eq!(total, size);
    }
}

#[test]
fn partition_rejects_single_client() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &PART_CONFIG.replace("num_clients = 4", "num_clients = 1"),
    );
    let out = fairfgl(
        &[
            "partition",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            "parts.txt",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

const TRAIN_CONFIG: &str = r#"
[dataset.sbm]
block_sizes = [30, 20, 10]
p_in = 0.2
p_out = 0.05
feature_dim = 6

[partition]
method = "fennel"
num_clients = 2

[run]
strategies = ["fedavg", "fairfgl"]
rounds = 3
local_epochs = 2
hidden_dim = 6

[output]
dir = "runs"
seeds = [0, 1, 2]
"#;

#[test]
fn train_emits_one_directory_per_strategy_seed_and_report_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TRAIN_CONFIG);
    let out = fairfgl(&["train", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let mut dirs = 0;
    for strategy in ["fedavg", "fairfgl"] {
        for seed in 0..3 {
            let run_dir = dir
                .path()
                .join("runs")
                .join(format!("{strategy}-seed{seed}"));
            for file in [
                "rounds.txt",
                "summary.tsv",
                "convergence.tsv",
                "per_client.tsv",
            ] {
                assert!(run_dir.join(file).exists(), "missing {file} in {run_dir:?}");
            }
            let stream = std::fs::read_to_string(run_dir.join("rounds.txt")).unwrap();
            assert_eq!(
                stream.lines().count(),
                1 + 3,
                "schema line plus one per round"
            );
            dirs += 1;
        }
    }
    assert_eq!(dirs, 6);

    let out = fairfgl(&["report", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let table = std::fs::read_to_string(dir.path().join("runs").join("report.tsv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(2).collect();
    assert_eq!(rows.len(), 2, "one row per strategy:\n{table}");
    assert!(rows[0].starts_with("fedavg\t3\t"));
    assert!(rows[1].starts_with("fairfgl\t3\t"));

    // Every mean(sigma) cell is well-formed.
    for row in rows {
        let cells: Vec<&str> = row.split('\t').collect();
        for cell in &cells[2..7] {
            assert!(
                cell.contains('(') && cell.ends_with(')') || *cell == "NA",
                "bad cell {cell}"
            );
        }
    }
}

#[test]
fn report_lists_missing_run_directories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TRAIN_CONFIG);
    let out = fairfgl(&["report", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("missing run outputs"), "{stderr}");
    assert!(stderr.contains("fedavg-seed0"), "{stderr}");
    assert!(stderr.contains("fairfgl-seed2"), "{stderr}");
}

#[test]
fn train_rejects_missing_dataset_file_with_runtime_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
[dataset]
path = "does-not-exist.txt"

[output]
seeds = [0]
"#,
    );
    let out = fairfgl(&["train", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_lists_ledger_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = fairfgl(&["train", "--help"], dir.path());
    assert!(out.status.success());
    let help = String::from_utf8(out.stdout).unwrap();
    for needle in [
        "[default: 0.4]",  // top-k ratio
        "[default: 0.1]",  // margin
        "[default: 0.5]",  // homophily threshold
        "[default: 1.0]",  // lambda weights
        "[default: 0.05]", // learning rate
        "[default: 64]",   // hidden dim
        "[default: 150]",  // rounds
        "[default: 3]",    // local epochs
    ] {
        assert!(help.contains(needle), "help missing {needle}:\n{help}");
    }
}

#[test]
fn output_root_env_overrides_config_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &TRAIN_CONFIG
            .replace("seeds = [0, 1, 2]", "seeds = [0]")
            .replace(
                "strategies = [\"fedavg\", \"fairfgl\"]",
                "strategies = [\"fedavg\"]",
            ),
    );
    let root = dir.path().join("elsewhere");
    let out = Command::new(env!("CARGO_BIN_EXE_fairfgl"))
        .args(["train", "--config"])
        .arg(&cfg)
        .env("FAIRFGL_OUT_ROOT", &root)
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(root.join("fedavg-seed0").join("rounds.txt").exists());
    assert!(!dir.path().join("runs").exists());
}
