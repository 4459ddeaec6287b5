//! Regret accounting against a best-in-hindsight comparator, the printed
//! regret-bound evaluator, and holdout accuracy / sparsity metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::LabeledExample;
use crate::learning::{clip_to_ball, hinge_loss, hinge_subgradient, LearningError};
use crate::simulator::RoundRecord;

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("comparator needs a nonempty dataset")]
    EmptyDataset,
    #[error("records cover {records} examples but dataset has {dataset}")]
    Misaligned { records: usize, dataset: usize },
    #[error("holdout is empty")]
    EmptyHoldout,
    #[error("no records to evaluate")]
    NoRecords,
    #[error("bound input `{name}` must be positive, got {value}")]
    InvalidBoundInput { name: &'static str, value: f64 },
    #[error(transparent)]
    Learning(#[from] LearningError),
}

/// Cumulative losses of the averaged trajectory, the comparator's loss, and
/// their difference, plus per-round series for curve export.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretLedger {
    /// sum_t sum_i f_t^i(average w_t).
    pub cumulative_online_loss: f64,
    /// sum_t sum_i f_t^i(w*).
    pub comparator_loss: f64,
    pub regret: f64,
    /// Cumulative regret after each round.
    pub per_round_regret: Vec<f64>,
    /// Secondary series: cumulative sum_i f_t^i(w_t^i) minus the comparator,
    /// i.e. the losses nodes actually incurred with their own parameters.
    pub per_node_regret: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ComparatorOptions {
    pub dimension: usize,
    /// Radius of the comparator class W (half the diameter bound).
    pub radius: f64,
    pub iterations: usize,
    /// Relative-improvement stopping threshold between checkpoints.
    pub tolerance: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl ComparatorOptions {
    pub fn new(dimension: usize, radius: f64) -> Self {
        Self {
            dimension,
            radius,
            iterations: 1500,
            tolerance: 1e-5,
            restarts: 3,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ComparatorResult {
    pub weights: Vec<f64>,
    /// Total hinge loss of `weights` over the dataset.
    pub loss: f64,
    /// Final loss of each restart, for agreement diagnostics.
    pub restart_losses: Vec<f64>,
}

fn total_hinge_loss(weights: &[f64], dataset: &[LabeledExample]) -> Result<f64, EvaluationError> {
    let mut total = 0.0;
    for ex in dataset {
        total += hinge_loss(weights, &ex.features, ex.label)?;
    }
    Ok(total)
}

/// Best fixed parameter in hindsight: projected batch subgradient descent
/// with iterate averaging on the total hinge loss over the ball of
/// `opts.radius`, restarted from random points.
pub fn offline_comparator(
    dataset: &[LabeledExample],
    opts: &ComparatorOptions,
) -> Result<ComparatorResult, EvaluationError> {
    if dataset.is_empty() {
        return Err(EvaluationError::EmptyDataset);
    }
    let n = opts.dimension;
    let count = dataset.len() as f64;
    let check_every = 50;

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut restart_losses = Vec::with_capacity(opts.restarts);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    for restart in 0..opts.restarts.max(1) {
        let mut w = vec![0.0; n];
        if restart > 0 {
            for v in &mut w {
                *v = rng.random_range(-1.0..1.0);
            }
            clip_to_ball(&mut w, opts.radius);
        }
        let mut average = w.clone();
        let mut restart_best: Option<(Vec<f64>, f64)> = None;
        let mut previous = f64::INFINITY;

        for k in 1..=opts.iterations.max(1) {
            let mut grad = vec![0.0; n];
            for ex in dataset {
                for (i, v) in hinge_subgradient(&w, &ex.features, ex.label)?.iter() {
                    grad[i] += v;
                }
            }
            let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if grad_norm == 0.0 {
                // every margin is at least 1: w is a global minimizer
                restart_best = Some((w.clone(), 0.0));
                average = w.clone();
                break;
            }
            let step = opts.radius / (k as f64).sqrt();
            for (wj, gj) in w.iter_mut().zip(&grad) {
                *wj -= step * gj / count;
            }
            clip_to_ball(&mut w, opts.radius);
            let k_f = k as f64;
            for (aj, wj) in average.iter_mut().zip(&w) {
                *aj += (wj - *aj) / (k_f + 1.0);
            }

            if k % check_every == 0 || k == opts.iterations {
                let loss = total_hinge_loss(&average, dataset)?;
                if restart_best.as_ref().is_none_or(|(_, l)| loss < *l) {
                    restart_best = Some((average.clone(), loss));
                }
                if previous.is_finite()
                    && previous - loss < opts.tolerance * previous.max(1e-12)
                {
                    break;
                }
                previous = loss;
            }
        }

        let (w_final, loss_final) = match restart_best {
            Some(pair) => pair,
            None => {
                let loss = total_hinge_loss(&average, dataset)?;
                (average, loss)
            }
        };
        restart_losses.push(loss_final);
        if best.as_ref().is_none_or(|(_, l)| loss_final < *l) {
            best = Some((w_final, loss_final));
        }
    }

    let (weights, loss) = best.expect("at least one restart");
    Ok(ComparatorResult {
        weights,
        loss,
        restart_losses,
    })
}

/// Evaluates both regret sums over the aligned (round, node) stream: the
/// averaged parameter from each record against the fixed comparator.
pub fn compute_regret(
    records: &[RoundRecord],
    dataset: &[LabeledExample],
    comparator: &[f64],
) -> Result<RegretLedger, EvaluationError> {
    if records.is_empty() {
        if !dataset.is_empty() {
            return Err(EvaluationError::Misaligned {
                records: 0,
                dataset: dataset.len(),
            });
        }
        return Ok(RegretLedger {
            cumulative_online_loss: 0.0,
            comparator_loss: 0.0,
            regret: 0.0,
            per_round_regret: Vec::new(),
            per_node_regret: Vec::new(),
        });
    }
    let m = records[0].per_node_loss.len();
    if dataset.len() != records.len() * m {
        return Err(EvaluationError::Misaligned {
            records: records.len() * m,
            dataset: dataset.len(),
        });
    }
    let mut online = 0.0;
    let mut per_node_online = 0.0;
    let mut comparator_total = 0.0;
    let mut per_round_regret = Vec::with_capacity(records.len());
    let mut per_node_regret = Vec::with_capacity(records.len());
    for (t, record) in records.iter().enumerate() {
        for i in 0..m {
            let ex = &dataset[t * m + i];
            online += hinge_loss(&record.average_primal, &ex.features, ex.label)?;
            comparator_total += hinge_loss(comparator, &ex.features, ex.label)?;
            per_node_online += record.per_node_loss[i];
        }
        per_round_regret.push(online - comparator_total);
        per_node_regret.push(per_node_online - comparator_total);
    }
    Ok(RegretLedger {
        cumulative_online_loss: online,
        comparator_loss: comparator_total,
        regret: online - comparator_total,
        per_round_regret,
        per_node_regret,
    })
}

/// Inputs to the printed regret bound; epsilon `None` means non-private,
/// zeroing the noise term.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    pub diameter: f64,
    pub grad_bound: f64,
    pub lambda_base: f64,
    pub nodes: usize,
    pub horizon: usize,
    pub dimension: usize,
    pub epsilon: Option<f64>,
}

/// R_w sqrt((L + lambda) m T L) + (2 sqrt(2) m^2 n T L / eps) (sqrt(T) - 1/2),
/// with the trailing factor clamped at zero so the bound stays nonnegative
/// for T < 1.
pub fn theoretical_bound(inputs: &BoundInputs) -> Result<f64, EvaluationError> {
    for (name, value) in [
        ("diameter", inputs.diameter),
        ("grad_bound", inputs.grad_bound),
        ("nodes", inputs.nodes as f64),
        ("dimension", inputs.dimension as f64),
    ] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(EvaluationError::InvalidBoundInput { name, value });
        }
    }
    if inputs.lambda_base < 0.0 {
        return Err(EvaluationError::InvalidBoundInput {
            name: "lambda_base",
            value: inputs.lambda_base,
        });
    }
    if let Some(eps) = inputs.epsilon {
        if !(eps > 0.0) {
            return Err(EvaluationError::InvalidBoundInput {
                name: "epsilon",
                value: eps,
            });
        }
    }
    let m = inputs.nodes as f64;
    let t = inputs.horizon as f64;
    let l = inputs.grad_bound;
    let first = inputs.diameter * ((l + inputs.lambda_base) * m * t * l).sqrt();
    let second = match inputs.epsilon {
        None => 0.0,
        Some(eps) if eps.is_infinite() => 0.0,
        Some(eps) => {
            (2.0 * 2.0_f64.sqrt() * m * m * inputs.dimension as f64 * t * l / eps)
                * (t.sqrt() - 0.5).max(0.0)
        }
    };
    Ok(first + second)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub accuracy: f64,
    pub nnz_fraction: f64,
}

/// Classification accuracy of sign(<w_T, x>) on the holdout (ties predict
/// +1) plus the sparsity of the final averaged parameter.
pub fn accuracy_metrics(
    records: &[RoundRecord],
    holdout: &[LabeledExample],
) -> Result<AccuracyReport, EvaluationError> {
    let last = records.last().ok_or(EvaluationError::NoRecords)?;
    accuracy_of(&last.average_primal, holdout).map(|accuracy| AccuracyReport {
        accuracy,
        nnz_fraction: last.nnz_fraction,
    })
}

/// Holdout accuracy of a fixed parameter vector.
pub fn accuracy_of(weights: &[f64], holdout: &[LabeledExample]) -> Result<f64, EvaluationError> {
    if holdout.is_empty() {
        return Err(EvaluationError::EmptyHoldout);
    }
    let mut correct = 0usize;
    for ex in holdout {
        let score = ex.features.dot_dense(weights);
        let predicted: i8 = if score >= 0.0 { 1 } else { -1 };
        if predicted == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / holdout.len() as f64)
}
