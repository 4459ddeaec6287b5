//! Cross-module integration: ground-truth recoverability on noiseless
//! synthetic data, and the libsvm file path through the sweep runner.

use std::io::Write as _;

use privlearn::config::ExperimentConfig;
use privlearn::data::{generate_stream, write_libsvm, SyntheticModel};
use privlearn::evaluation::accuracy_metrics;
use privlearn::learning::Schedule;
use privlearn::privacy::PrivacyParams;
use privlearn::simulator::{run_experiment, RunSpec};
use privlearn::sweep::{derive_seed, run_sweep};
use privlearn::topology::{build_graph, metropolis_weights, TopologyKind};

fn holdout_accuracy(lambda: f64, seed: u64) -> f64 {
    let n = 100;
    let m = 4;
    let rounds = 250;
    let model = SyntheticModel::new(n, 5, 8, 0.0, derive_seed(seed, 2)).unwrap();
    let train_count = m * rounds;
    let mut stream = generate_stream(&model, train_count + 500, derive_seed(seed, 1));
    privlearn::data::normalize(&mut stream);
    let holdout = stream.split_off(train_count);
    let spec = RunSpec {
        matrix: metropolis_weights(&build_graph(TopologyKind::Ring, m).unwrap()),
        schedule: Schedule::auto(2.0, 1.0, lambda, m, rounds).unwrap(),
        privacy: PrivacyParams::disabled(),
        dimension: n,
        rounds,
        master_seed: derive_seed(seed, 0),
        retain_trace: false,
        clip_primal: false,
    };
    let out = run_experiment(&spec, &stream).unwrap();
    accuracy_metrics(&out.records, &holdout).unwrap().accuracy
}

// On noiseless sparse ground truth, some L1 strength beats the
// unregularized run on holdout accuracy.
#[test]
fn l1_regularization_recovers_sparse_ground_truth_better() {
    let seeds = [1u64, 2, 3];
    let lambdas = [0.25, 0.5, 1.0, 2.0, 4.0];
    let baseline: f64 =
        seeds.iter().map(|&s| holdout_accuracy(0.0, s)).sum::<f64>() / seeds.len() as f64;
    let best = lambdas
        .iter()
        .map(|&l| {
            seeds.iter().map(|&s| holdout_accuracy(l, s)).sum::<f64>() / seeds.len() as f64
        })
        .fold(f64::MIN, f64::max);
    assert!(
        best > baseline,
        "regularized best {best:.4} should beat baseline {baseline:.4}"
    );
}

// Against the hindsight comparator, regret can dip below zero only within
// the comparator's own optimization tolerance.
#[test]
fn regret_stays_above_comparator_tolerance_floor() {
    use privlearn::evaluation::{compute_regret, offline_comparator, ComparatorOptions};

    let n = 60;
    let m = 4;
    let rounds = 300;
    let model = SyntheticModel::new(n, 6, 6, 0.1, 91).unwrap();
    let mut stream = generate_stream(&model, m * rounds, 92);
    privlearn::data::normalize(&mut stream);
    let spec = RunSpec {
        matrix: metropolis_weights(&build_graph(TopologyKind::Ring, m).unwrap()),
        schedule: Schedule::auto(8.0, 1.0, 0.5, m, rounds).unwrap(),
        privacy: PrivacyParams::disabled(),
        dimension: n,
        rounds,
        master_seed: 93,
        retain_trace: false,
        clip_primal: false,
    };
    let out = run_experiment(&spec, &stream).unwrap();
    let comparator = offline_comparator(&stream, &ComparatorOptions::new(n, 4.0)).unwrap();
    let ledger = compute_regret(&out.records, &stream, &comparator.weights).unwrap();
    assert!(
        ledger.regret >= -0.02 * ledger.comparator_loss,
        "regret {} below comparator floor {}",
        ledger.regret,
        -0.02 * ledger.comparator_loss
    );
}

#[test]
fn sweep_ingests_gzipped_libsvm_files() {
    let dir = tempfile::tempdir().unwrap();
    let model = SyntheticModel::new(30, 4, 5, 0.1, 77).unwrap();
    let stream = generate_stream(&model, 300, 78);

    let mut plain = Vec::new();
    write_libsvm(&stream, &mut plain).unwrap();
    let gz_path = dir.path().join("data.svm.gz");
    let mut encoder =
        flate2::write::GzEncoder::new(std::fs::File::create(&gz_path).unwrap(), Default::default());
    encoder.write_all(&plain).unwrap();
    encoder.finish().unwrap();

    let config = ExperimentConfig::from_toml(&format!(
        r#"
nodes = 2
dimension = 30
rounds = 50
topology = "complete"
epsilon = 1.0
lambda_base = 0.2
seeds = [5]
holdout_fraction = 0.2

[data]
kind = "libsvm"
path = "{}"
"#,
        gz_path.display()
    ))
    .unwrap();
    let out_dir = dir.path().join("out");
    let report = run_sweep(&config, &out_dir).unwrap();
    assert_eq!(report.outcomes.len(), 1);
    assert!(report.outcomes[0].final_regret.is_finite());
    assert!(report.outcomes[0].accuracy.is_finite());

    // the same config without enough examples must fail cleanly
    let mut short = config;
    short.rounds = 1000;
    let err = run_sweep(&short, &dir.path().join("out2")).unwrap_err();
    assert!(err.to_string().contains("examples"), "{err}");
}
