//! Sweep orchestration: grid expansion, parallel cell execution, and CSV
//! emission, plus the four study presets at desk scale.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{
    BudgetMode, ConfigError, DataKind, DataSpec, EpsilonSpec, ExperimentConfig, GridSpec,
    TopologySpec,
};
use crate::data::{self, DataError, LabeledExample};
use crate::evaluation::{
    self, accuracy_metrics, compute_regret, offline_comparator, theoretical_bound, BoundInputs,
    ComparatorOptions, EvaluationError,
};
use crate::learning::{LearningError, Schedule};
use crate::privacy::{PrivacyError, PrivacyParams};
use crate::simulator::{self, RunSpec, SimulatorError};
use crate::topology::{build_graph, metropolis_weights, validate_mixing_matrix, TopologyError};

/// Worker-count override for the sweep thread pool.
pub const WORKERS_ENV: &str = "PRIVLEARN_WORKERS";

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
    #[error(transparent)]
    Simulator(#[from] SimulatorError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error("mixing matrix failed validation: {0}")]
    BadMatrix(String),
    #[error("stream provides {available} examples but the sweep needs {needed}")]
    NotEnoughData { needed: usize, available: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SweepError {
    /// Exit code contract: 2 for configuration problems, 1 for runtime failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            SweepError::Config(_) => 2,
            _ => 1,
        }
    }
}

/// One grid cell: a full parameter assignment plus a master seed.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub id: String,
    pub epsilon: Option<f64>,
    pub epsilon_label: String,
    pub topology: TopologySpec,
    pub lambda_base: f64,
    pub nodes: usize,
    pub rounds: usize,
    pub seed: u64,
}

/// Deterministic cross product in epsilon-major order, seeds innermost.
pub fn expand_cells(config: &ExperimentConfig) -> Result<Vec<SweepCell>, ConfigError> {
    let mut cells = Vec::new();
    for eps_spec in config.effective_epsilons() {
        let epsilon = eps_spec.resolve()?;
        let epsilon_label = match epsilon {
            None => "inf".to_string(),
            Some(v) => format!("{v}"),
        };
        for topology in config.effective_topologies() {
            for lambda_base in config.effective_lambdas() {
                for nodes in config.effective_node_counts() {
                    for &seed in &config.seeds {
                        let rounds = config.rounds_for(nodes);
                        let id = format!(
                            "eps{epsilon_label}_{}_lam{lambda_base}_m{nodes}_s{seed}",
                            topology.label()
                        );
                        cells.push(SweepCell {
                            id,
                            epsilon,
                            epsilon_label: epsilon_label.clone(),
                            topology: topology.clone(),
                            lambda_base,
                            nodes,
                            rounds,
                            seed,
                        });
                    }
                }
            }
        }
    }
    Ok(cells)
}

/// Splitmix-style seed derivation so data, model, and node substreams never
/// overlap across purposes.
pub fn derive_seed(master: u64, salt: u64) -> u64 {
    let mut z = master ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub struct CellData {
    pub train: Vec<LabeledExample>,
    pub holdout: Vec<LabeledExample>,
    pub grad_bound: f64,
}

/// Materializes the training stream and holdout for a cell, applying the
/// normalization pretreatment and certifying the subgradient bound.
pub fn load_cell_data(config: &ExperimentConfig, cell: &SweepCell) -> Result<CellData, SweepError> {
    let train_count = cell.nodes * cell.rounds;
    let holdout_count = (config.holdout_fraction * train_count as f64).ceil() as usize;
    let total = train_count + holdout_count;
    let mut examples = match config.data.kind {
        DataKind::Synthetic => {
            let model = data::SyntheticModel::new(
                config.dimension,
                config.data.true_support.expect("validated"),
                config.data.nnz_per_example.expect("validated"),
                config.data.noise_rate.expect("validated"),
                derive_seed(cell.seed, 2),
            )?;
            data::generate_stream(&model, total, derive_seed(cell.seed, 1))
        }
        DataKind::Libsvm => {
            let path = config.data.path.as_ref().expect("validated");
            let examples = data::read_libsvm_file(path, config.dimension)?;
            if examples.len() < total {
                return Err(SweepError::NotEnoughData {
                    needed: total,
                    available: examples.len(),
                });
            }
            examples
        }
    };
    if config.normalize {
        data::normalize(&mut examples);
    }
    let grad_bound = match config.grad_bound.resolve()? {
        Some(value) => value,
        // Auto-certify from the stream: with unit-normalized features the
        // hinge subgradient norm is bounded by 1.
        None => {
            if config.normalize {
                1.0
            } else {
                let max = data::max_feature_norm(&examples);
                if max <= 0.0 {
                    1.0
                } else {
                    max
                }
            }
        }
    };
    let holdout = examples.split_off(train_count.min(examples.len()));
    let holdout = holdout.into_iter().take(holdout_count).collect();
    Ok(CellData {
        train: examples,
        holdout,
        grad_bound,
    })
}

/// Builds the runtime spec for one cell.
pub fn build_run_spec(
    config: &ExperimentConfig,
    cell: &SweepCell,
    grad_bound: f64,
) -> Result<RunSpec, SweepError> {
    let graph = build_graph(cell.topology.resolve(derive_seed(cell.seed, 3))?, cell.nodes)?;
    let matrix = metropolis_weights(&graph);
    validate_mixing_matrix(&matrix).map_err(|v| SweepError::BadMatrix(v.to_string()))?;
    let schedule = match config.step_size {
        Some(alpha) => Schedule::fixed(
            alpha,
            config.diameter,
            grad_bound,
            cell.lambda_base,
            cell.nodes,
            cell.rounds.max(1),
        )?,
        None => Schedule::auto(
            config.diameter,
            grad_bound,
            cell.lambda_base,
            cell.nodes,
            cell.rounds.max(1),
        )?,
    };
    let privacy = match cell.epsilon {
        None => PrivacyParams::disabled(),
        Some(eps) => {
            PrivacyParams::enabled(eps, grad_bound, config.dimension, schedule.step_size)?
        }
    };
    Ok(RunSpec {
        matrix,
        schedule,
        privacy,
        dimension: config.dimension,
        rounds: cell.rounds,
        master_seed: derive_seed(cell.seed, 0),
        retain_trace: config.diagnostic_trace,
        clip_primal: config.clip_primal,
    })
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub id: String,
    pub epsilon_label: String,
    pub topology_label: String,
    pub lambda_base: f64,
    pub nodes: usize,
    pub final_regret: f64,
    pub accuracy: f64,
    pub nnz_fraction: f64,
}

#[derive(Debug)]
pub struct SweepReport {
    pub outcomes: Vec<CellOutcome>,
    pub summary_path: PathBuf,
}

fn comparator_cache_key(cell: &SweepCell) -> (usize, usize, u64) {
    (cell.nodes, cell.rounds, cell.seed)
}

fn run_cell(
    config: &ExperimentConfig,
    cell: &SweepCell,
    comparators: &HashMap<(usize, usize, u64), Vec<f64>>,
    out_dir: &Path,
) -> Result<CellOutcome, SweepError> {
    let cell_data = load_cell_data(config, cell)?;
    let spec = build_run_spec(config, cell, cell_data.grad_bound)?;
    let output = simulator::run_experiment(&spec, &cell_data.train)?;
    if config.diagnostic_trace {
        simulator::average_dynamics_check(output.trace.as_ref())?;
    }

    let comparator = comparators
        .get(&comparator_cache_key(cell))
        .expect("comparator precomputed for every cell");
    let ledger = compute_regret(&output.records, &cell_data.train, comparator)?;

    let accuracy = if cell_data.holdout.is_empty() || output.records.is_empty() {
        f64::NAN
    } else {
        accuracy_metrics(&output.records, &cell_data.holdout)?.accuracy
    };
    let nnz_fraction = output.records.last().map_or(0.0, |r| r.nnz_fraction);

    // regret_curve_<id>.csv: t, regret, bound, nnz_fraction
    let mut curve = String::from("t,regret,bound,nnz_fraction\n");
    for (t, record) in output.records.iter().enumerate() {
        let bound = theoretical_bound(&BoundInputs {
            diameter: config.diameter,
            grad_bound: cell_data.grad_bound,
            lambda_base: cell.lambda_base,
            nodes: cell.nodes,
            horizon: t + 1,
            dimension: config.dimension,
            epsilon: cell.epsilon,
        })?;
        let _ = writeln!(
            curve,
            "{},{},{},{}",
            t + 1,
            ledger.per_round_regret[t],
            bound,
            record.nnz_fraction
        );
    }
    fs::write(out_dir.join(format!("regret_curve_{}.csv", cell.id)), curve)?;

    if config.round_log {
        let mut log = String::from("t,mean_loss,regret_to_date,nnz_fraction,consensus_gap\n");
        for (t, record) in output.records.iter().enumerate() {
            let mean_loss = record.per_node_loss.iter().sum::<f64>()
                / record.per_node_loss.len().max(1) as f64;
            let _ = writeln!(
                log,
                "{},{},{},{},{}",
                t + 1,
                mean_loss,
                ledger.per_round_regret[t],
                record.nnz_fraction,
                record.consensus_gap
            );
        }
        fs::write(out_dir.join(format!("round_log_{}.csv", cell.id)), log)?;
    }

    Ok(CellOutcome {
        id: cell.id.clone(),
        epsilon_label: cell.epsilon_label.clone(),
        topology_label: cell.topology.label(),
        lambda_base: cell.lambda_base,
        nodes: cell.nodes,
        final_regret: ledger.regret,
        accuracy,
        nnz_fraction,
    })
}

fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(std::num::NonZeroUsize::get)
                .unwrap_or(1)
        })
}

/// Executes every grid cell x seed, writing one regret curve per cell and a
/// single `sweep_summary.csv`. Cells are independent and run concurrently;
/// outputs are byte-stable across reruns and worker counts.
pub fn run_sweep(config: &ExperimentConfig, out_dir: &Path) -> Result<SweepReport, SweepError> {
    config.validate()?;
    fs::create_dir_all(out_dir)?;
    let cells = expand_cells(config)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .expect("thread pool");

    // The comparator depends only on the dataset, which is shared by every
    // cell with the same (nodes, rounds, seed): compute each one once.
    let mut unique: Vec<(usize, usize, u64)> = Vec::new();
    let mut key_cell: HashMap<(usize, usize, u64), &SweepCell> = HashMap::new();
    for cell in &cells {
        let key = comparator_cache_key(cell);
        if key_cell.insert(key, cell).is_none() {
            unique.push(key);
        }
    }
    let comparators: HashMap<(usize, usize, u64), Vec<f64>> = pool.install(|| {
        unique
            .par_iter()
            .map(|key| {
                let cell = key_cell[key];
                let cell_data = load_cell_data(config, cell)?;
                let mut opts =
                    ComparatorOptions::new(config.dimension, config.diameter / 2.0);
                opts.seed = derive_seed(cell.seed, 4);
                let result = if cell_data.train.is_empty() {
                    evaluation::ComparatorResult {
                        weights: vec![0.0; config.dimension],
                        loss: 0.0,
                        restart_losses: vec![0.0],
                    }
                } else {
                    offline_comparator(&cell_data.train, &opts)?
                };
                Ok((*key, result.weights))
            })
            .collect::<Result<_, SweepError>>()
    })?;

    let outcomes: Vec<CellOutcome> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| run_cell(config, cell, &comparators, out_dir))
            .collect::<Result<_, SweepError>>()
    })?;

    let mut summary = String::from("config_id,epsilon,topology,lambda,m,final_regret,accuracy\n");
    for o in &outcomes {
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{},{}",
            o.id, o.epsilon_label, o.topology_label, o.lambda_base, o.nodes, o.final_regret,
            o.accuracy
        );
    }
    let summary_path = out_dir.join("sweep_summary.csv");
    fs::write(&summary_path, summary)?;

    Ok(SweepReport {
        outcomes,
        summary_path,
    })
}

fn base_preset() -> ExperimentConfig {
    ExperimentConfig {
        nodes: 16,
        dimension: 200,
        rounds: 1000,
        topology: TopologySpec::Name("ring".into()),
        epsilon: EpsilonSpec::disabled(),
        lambda_base: 0.0,
        diameter: 2.0,
        step_size: None,
        grad_bound: Default::default(),
        seeds: (1..=10).collect(),
        data: DataSpec {
            kind: DataKind::Synthetic,
            true_support: Some(10),
            nnz_per_example: Some(10),
            noise_rate: Some(0.05),
            path: None,
        },
        holdout_fraction: 0.1,
        output_dir: None,
        diagnostic_trace: false,
        round_log: false,
        clip_primal: false,
        normalize: true,
        budget_mode: BudgetMode::FixedRounds,
        grid: GridSpec::default(),
    }
}

/// The four study presets, mirrored at desk scale (m = 16 instead of the
/// studied 64; pass a custom config for larger runs).
pub fn preset(name: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut config = base_preset();
    match name {
        // privacy/regret trade-off: epsilon sweep at fixed topology;
        // lambda chosen so the non-private cells sit near 50% sparsity
        "fig2_privacy" => {
            config.lambda_base = 0.5;
            config.grid.epsilons = Some(vec![
                EpsilonSpec::Text("inf".into()),
                EpsilonSpec::Number(1.0),
                EpsilonSpec::Number(0.5),
                EpsilonSpec::Number(0.1),
            ]);
        }
        // topology insensitivity at strong privacy
        "fig3_topology" => {
            config.epsilon = EpsilonSpec::Number(0.1);
            config.lambda_base = 0.5;
            config.grid.topologies = Some(vec![
                TopologySpec::Name("ring".into()),
                TopologySpec::Name("grid".into()),
                TopologySpec::Name("complete".into()),
                TopologySpec::Detailed {
                    kind: "random".into(),
                    p: Some(0.3),
                    seed: None,
                },
            ]);
        }
        // sparsity/accuracy trade-off: lambda sweep walking dense through
        // support recovery into over-shrinkage; short horizon makes the
        // interior optimum pronounced
        "fig4_sparsity" => {
            config.rounds = 250;
            config.grid.lambdas = Some(vec![0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0]);
        }
        // node-count/accuracy trade-off at a fixed total example budget and
        // a fixed explicit step size: each node's horizon shrinks with m, so
        // fewer coordinates clear the fixed L1 threshold
        "fig5_nodes" => {
            config.step_size = Some(0.008);
            config.lambda_base = 44.0;
            config.budget_mode = BudgetMode::FixedExamples;
            config.grid.node_counts = Some(vec![4, 8, 12, 16]);
        }
        other => {
            return Err(ConfigError::Field {
                field: "preset",
                message: format!(
                    "unknown preset `{other}` (expected fig2_privacy|fig3_topology|fig4_sparsity|fig5_nodes)"
                ),
            })
        }
    }
    config.validate()?;
    Ok(config)
}
