//! Laplace output perturbation for the gossiped dual parameter: sensitivity
//! bound, seeded noise sampling, per-round privacy bookkeeping, and an
//! empirical distribution-ratio smoke test.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::Rng;
use thiserror::Error;

use crate::data::LabeledExample;

#[derive(Debug, Error)]
pub enum PrivacyError {
    #[error("epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("noise scale must be positive, got {0}")]
    InvalidScale(f64),
    #[error("sensitivity input `{name}` must be positive, got {value}")]
    InvalidSensitivityInput { name: &'static str, value: f64 },
    #[error("vector length {got} does not match configured dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("datasets differ in {0} positions; adjacency requires at most one")]
    NotAdjacent(usize),
    #[error("{trials} trials is too few for {bins} bins; need at least {needed}")]
    InsufficientTrials {
        trials: usize,
        bins: usize,
        needed: usize,
    },
    #[error("example id {0} was already consumed; round data must be disjoint")]
    DuplicateExample(u64),
}

/// L1 sensitivity bound for one round of the dual update: 2 alpha sqrt(n) L.
/// A data-independent bound is used for calibration on purpose; calibrating
/// to measured values would itself leak data.
pub fn sensitivity(step_size: f64, dimension: usize, grad_bound: f64) -> Result<f64, PrivacyError> {
    for (name, value) in [
        ("step_size", step_size),
        ("dimension", dimension as f64),
        ("grad_bound", grad_bound),
    ] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(PrivacyError::InvalidSensitivityInput { name, value });
        }
    }
    Ok(2.0 * step_size * (dimension as f64).sqrt() * grad_bound)
}

/// Per-node noise configuration. When disabled the perturbation is the
/// identity (non-private baseline).
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyParams {
    pub enabled: bool,
    pub epsilon: f64,
    pub grad_bound: f64,
    pub dimension: usize,
    pub step_size: f64,
}

impl PrivacyParams {
    pub fn enabled(
        epsilon: f64,
        grad_bound: f64,
        dimension: usize,
        step_size: f64,
    ) -> Result<Self, PrivacyError> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(PrivacyError::InvalidEpsilon(epsilon));
        }
        sensitivity(step_size, dimension, grad_bound)?;
        Ok(Self {
            enabled: true,
            epsilon,
            grad_bound,
            dimension,
            step_size,
        })
    }

    pub fn disabled() -> Self {
        Self {
            enabled: false,
            epsilon: f64::INFINITY,
            grad_bound: 1.0,
            dimension: 0,
            step_size: 0.0,
        }
    }

    /// Laplace scale mu = S(t) / epsilon.
    pub fn noise_scale(&self) -> f64 {
        if !self.enabled {
            return 0.0;
        }
        sensitivity(self.step_size, self.dimension, self.grad_bound)
            .expect("validated at construction")
            / self.epsilon
    }
}

/// One draw with density (1 / 2 mu) exp(-|x| / mu), via inverse CDF.
pub fn sample_laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    let u = loop {
        let v = rng.random::<f64>() - 0.5;
        if 1.0 - 2.0 * v.abs() > 0.0 {
            break v;
        }
    };
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// n i.i.d. Laplace draws; deterministic given the stream state.
pub fn sample_laplace_vector<R: Rng + ?Sized>(
    scale: f64,
    len: usize,
    rng: &mut R,
) -> Result<Vec<f64>, PrivacyError> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(PrivacyError::InvalidScale(scale));
    }
    Ok((0..len).map(|_| sample_laplace(scale, rng)).collect())
}

pub fn laplace_density(x: f64, scale: f64) -> f64 {
    (-x.abs() / scale).exp() / (2.0 * scale)
}

pub fn laplace_cdf(x: f64, scale: f64) -> f64 {
    if x < 0.0 {
        0.5 * (x / scale).exp()
    } else {
        1.0 - 0.5 * (-x / scale).exp()
    }
}

/// The broadcast perturbation: theta + Laplace(S(t)/epsilon)^n when enabled,
/// theta unchanged when disabled.
pub fn perturb<R: Rng + ?Sized>(
    dual: &[f64],
    params: &PrivacyParams,
    rng: &mut R,
) -> Result<Vec<f64>, PrivacyError> {
    if !params.enabled {
        return Ok(dual.to_vec());
    }
    if dual.len() != params.dimension {
        return Err(PrivacyError::DimensionMismatch {
            expected: params.dimension,
            got: dual.len(),
        });
    }
    let noise = sample_laplace_vector(params.noise_scale(), dual.len(), rng)?;
    Ok(dual.iter().zip(&noise).map(|(t, d)| t + d).collect())
}

/// Per-run privacy bookkeeping. Rounds consume disjoint data, so the
/// guarantee composes in parallel: the run-level epsilon equals the
/// per-round epsilon and is never summed across rounds.
#[derive(Debug, Clone)]
pub struct PrivacyLedger {
    epsilon: Option<f64>,
    rounds: usize,
    seen: HashSet<u64>,
}

impl PrivacyLedger {
    pub fn new(epsilon: Option<f64>) -> Self {
        Self {
            epsilon,
            rounds: 0,
            seen: HashSet::new(),
        }
    }

    /// Records a completed round, asserting its example ids are fresh.
    pub fn record_round(
        &mut self,
        example_ids: impl IntoIterator<Item = u64>,
    ) -> Result<(), PrivacyError> {
        for id in example_ids {
            if !self.seen.insert(id) {
                return Err(PrivacyError::DuplicateExample(id));
            }
        }
        self.rounds += 1;
        Ok(())
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn per_round_epsilon(&self) -> Option<f64> {
        self.epsilon
    }

    pub fn composed_epsilon(&self) -> Option<f64> {
        self.epsilon
    }

    pub fn examples_consumed(&self) -> usize {
        self.seen.len()
    }
}

/// One histogram cell of the empirical check.
#[derive(Debug, Clone)]
pub struct DpCheckBin {
    pub lower: f64,
    pub upper: f64,
    pub count_x: u64,
    pub count_x_prime: u64,
    pub ratio: f64,
}

#[derive(Debug, Clone)]
pub struct DpCheckReport {
    pub epsilon: f64,
    pub trials: usize,
    pub max_ratio: f64,
    pub passed: bool,
    pub bins: Vec<DpCheckBin>,
}

impl DpCheckReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,count_x,count_x_prime,ratio\n");
        for (i, b) in self.bins.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{}", i, b.count_x, b.count_x_prime, b.ratio);
        }
        out
    }
}

const MIN_TRIALS_PER_BIN: usize = 50;
// ~3-sigma binomial confidence on each bin's count ratio.
const RATIO_CONFIDENCE_Z: f64 = 3.0;

/// Runs a randomized one-round pipeline `trials` times on each of two
/// adjacent datasets, histograms a scalar projection of the output, and
/// compares per-bin probability ratios against exp(epsilon).
///
/// Bins are equal-mass over the pooled samples, so every cell carries enough
/// counts for the ratio estimate to be meaningful. The per-bin pass slack
/// comes from the binomial confidence at the observed counts. When the
/// pipeline is deterministic (noise off) and the outputs differ, some bin
/// holds one dataset's mass only and the reported ratio is infinite.
pub fn empirical_dp_check<F>(
    mut pipeline: F,
    dataset: &[LabeledExample],
    dataset_prime: &[LabeledExample],
    epsilon: f64,
    trials: usize,
    bins: usize,
) -> Result<DpCheckReport, PrivacyError>
where
    F: FnMut(&[LabeledExample], u64) -> f64,
{
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(PrivacyError::InvalidEpsilon(epsilon));
    }
    let needed = bins.max(1) * MIN_TRIALS_PER_BIN;
    if bins == 0 || trials < needed {
        return Err(PrivacyError::InsufficientTrials {
            trials,
            bins,
            needed,
        });
    }
    if dataset.len() != dataset_prime.len() {
        return Err(PrivacyError::NotAdjacent(usize::MAX));
    }
    let differing = dataset
        .iter()
        .zip(dataset_prime)
        .filter(|(a, b)| !a.same_content(b))
        .count();
    if differing > 1 {
        return Err(PrivacyError::NotAdjacent(differing));
    }

    let samples_x: Vec<f64> = (0..trials).map(|t| pipeline(dataset, t as u64)).collect();
    let samples_x_prime: Vec<f64> = (0..trials)
        .map(|t| pipeline(dataset_prime, t as u64))
        .collect();

    let mut pooled: Vec<f64> = samples_x
        .iter()
        .chain(&samples_x_prime)
        .copied()
        .collect();
    pooled.sort_by(f64::total_cmp);
    let mut distinct = pooled.clone();
    distinct.dedup();

    // Equal-mass bin edges from pooled quantiles keep every cell's counts
    // high enough for a meaningful ratio. A (nearly) discrete output gets
    // one cell per distinct value instead, so point masses at different
    // locations never share a cell.
    let (edges, discrete) = if distinct.len() <= bins {
        (distinct, true)
    } else {
        let mut edges: Vec<f64> = (0..=bins)
            .map(|b| {
                let pos =
                    ((pooled.len() - 1) as f64 * b as f64 / bins as f64).round() as usize;
                pooled[pos]
            })
            .collect();
        edges.dedup();
        (edges, false)
    };
    let n_bins = if discrete {
        edges.len()
    } else {
        edges.len() - 1
    }
    .max(1);

    let bin_index = |x: f64| -> usize {
        if discrete {
            edges.partition_point(|e| *e < x).min(n_bins - 1)
        } else {
            let k = edges.partition_point(|e| *e <= x);
            k.saturating_sub(1).min(n_bins - 1)
        }
    };
    let mut count_x = vec![0u64; n_bins];
    let mut count_x_prime = vec![0u64; n_bins];
    for &s in &samples_x {
        count_x[bin_index(s)] += 1;
    }
    for &s in &samples_x_prime {
        count_x_prime[bin_index(s)] += 1;
    }

    let bound = epsilon.exp();
    let mut max_ratio: f64 = 0.0;
    let mut passed = true;
    let mut cells = Vec::with_capacity(n_bins);
    for b in 0..n_bins {
        let (cx, cxp) = (count_x[b], count_x_prime[b]);
        let ratio = if cx == 0 {
            0.0
        } else if cxp == 0 {
            f64::INFINITY
        } else {
            cx as f64 / cxp as f64
        };
        if cx > 0 {
            max_ratio = max_ratio.max(ratio);
            let slack = RATIO_CONFIDENCE_Z
                * (1.0 / cx.max(1) as f64 + 1.0 / cxp.max(1) as f64).sqrt();
            if ratio > bound * (1.0 + slack) {
                passed = false;
            }
        }
        let (lower, upper) = if discrete {
            (edges[b], edges[b])
        } else {
            (edges[b], edges[b + 1])
        };
        cells.push(DpCheckBin {
            lower,
            upper,
            count_x: cx,
            count_x_prime: cxp,
            ratio,
        });
    }

    Ok(DpCheckReport {
        epsilon,
        trials,
        max_ratio,
        passed,
        bins: cells,
    })
}
