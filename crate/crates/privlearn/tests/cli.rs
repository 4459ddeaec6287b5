//! End-to-end tests of the `privlearn` binary: exit codes, artifact layout,
//! and rerun determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn privlearn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_privlearn"))
        .args(args)
        .output()
        .expect("binary runs")
}

const MINIMAL: &str = r#"
nodes = 1
dimension = 16
rounds = 10
topology = "ring"
epsilon = 0.5
lambda_base = 0.1
seeds = [7]
round_log = true

[data]
kind = "synthetic"
true_support = 3
nnz_per_example = 4
noise_rate = 0.1
"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn run_minimal_config_writes_curve() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), MINIMAL);
    let out_dir = dir.path().join("out");
    let output = privlearn(&["run", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");

    let curves: Vec<_> = fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("regret_curve_"))
        .collect();
    assert_eq!(curves.len(), 1);
    let curve = fs::read_to_string(out_dir.join(&curves[0])).unwrap();
    let lines: Vec<&str> = curve.lines().collect();
    assert_eq!(lines[0], "t,regret,bound,nnz_fraction");
    assert_eq!(lines.len(), 11); // header + 10 rounds

    let log = fs::read_to_string(out_dir.join(curves[0].replace("regret_curve", "round_log")))
        .unwrap();
    assert_eq!(
        log.lines().next().unwrap(),
        "t,mean_loss,regret_to_date,nnz_fraction,consensus_gap"
    );

    let summary = fs::read_to_string(out_dir.join("sweep_summary.csv")).unwrap();
    assert_eq!(
        summary.lines().next().unwrap(),
        "config_id,epsilon,topology,lambda,m,final_regret,accuracy"
    );
    assert_eq!(summary.lines().count(), 2);
}

#[test]
fn negative_epsilon_exits_2_naming_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &MINIMAL.replace("epsilon = 0.5", "epsilon = -1.0"));
    let output = privlearn(&["run", config.to_str().unwrap(), "--out", "unused"]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("epsilon"), "stderr: {stderr}");
}

#[test]
fn validate_reports_ok_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), MINIMAL);
    let output = privlearn(&["validate", config.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&output.stdout).trim(), "ok");

    let bad = write_config(dir.path(), &format!("{MINIMAL}\nmystery = 1\n"));
    let output = privlearn(&["validate", bad.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("mystery"));

    let output = privlearn(&["validate", dir.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn unknown_preset_exits_2() {
    let output = privlearn(&["preset", "fig9_dreams", "--out", "unused"]);
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("fig9_dreams"));
}

#[test]
fn preset_config_only_emits_parseable_toml() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["fig2_privacy", "fig3_topology", "fig4_sparsity", "fig5_nodes"] {
        let output = privlearn(&[
            "preset",
            name,
            "--out",
            dir.path().to_str().unwrap(),
            "--config-only",
        ]);
        assert_eq!(output.status.code(), Some(0), "{name}: {output:?}");
        let text = fs::read_to_string(dir.path().join(format!("{name}.toml"))).unwrap();
        privlearn::config::ExperimentConfig::from_toml(&text).unwrap();
    }
}

// The privacy-study preset, scaled down via the --rounds override: the
// summary carries one row per (epsilon, seed) cell and mean final regret
// grows as epsilon shrinks.
#[test]
fn fig2_preset_summary_is_monotone_in_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    let output = privlearn(&[
        "preset",
        "fig2_privacy",
        "--out",
        dir.path().to_str().unwrap(),
        "--config-only",
    ]);
    assert_eq!(output.status.code(), Some(0));
    let config = dir.path().join("fig2_privacy.toml");
    let out_dir = dir.path().join("out");
    let output = privlearn(&[
        "run",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--rounds",
        "150",
    ]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");

    let summary = fs::read_to_string(out_dir.join("sweep_summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 40); // 4 epsilons x 10 seeds

    let mut totals: std::collections::HashMap<String, (f64, usize)> = Default::default();
    for row in rows {
        let fields: Vec<&str> = row.split(',').collect();
        let entry = totals.entry(fields[1].to_string()).or_default();
        entry.0 += fields[5].parse::<f64>().unwrap();
        entry.1 += 1;
    }
    let mean = |k: &str| totals[k].0 / totals[k].1 as f64;
    assert!(mean("inf") <= mean("1"));
    assert!(mean("1") <= mean("0.5"));
    assert!(mean("0.5") <= mean("0.1"));
}

#[test]
fn reruns_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        &MINIMAL.replace("seeds = [7]", "seeds = [7, 8]"),
    );
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let output = privlearn(&["run", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(output.status.code(), Some(0));
    }
    let mut names: Vec<String> = fs::read_dir(&out_a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(names.len() >= 5); // 2 curves + 2 logs + summary
    for name in names {
        assert_eq!(
            fs::read(out_a.join(&name)).unwrap(),
            fs::read(out_b.join(&name)).unwrap(),
            "{name} differs between reruns"
        );
    }
}
