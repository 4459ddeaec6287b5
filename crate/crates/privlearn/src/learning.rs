//! Per-node numerical kernel: the Euclidean mirror map, the L1 proximal
//! step, hinge loss and subgradient, and the step-size schedule.

use thiserror::Error;

use crate::data::SparseVector;

#[derive(Debug, Error, PartialEq)]
pub enum LearningError {
    #[error("non-finite input at component {0}")]
    NonFinite(usize),
    #[error("negative threshold {0}")]
    NegativeThreshold(f64),
    #[error("feature index {index} out of range for weight dimension {dimension}")]
    DimensionMismatch { dimension: usize, index: usize },
    #[error("label {0} outside {{-1, +1}}")]
    InvalidLabel(i8),
    #[error("schedule input `{name}` must be positive, got {value}")]
    NonPositiveInput { name: &'static str, value: f64 },
    #[error("lambda_base must be nonnegative, got {0}")]
    NegativeLambda(f64),
}

/// Gradient of the conjugate of phi(w) = 1/2 ||w||^2: the identity map.
pub fn mirror_map(dual: &[f64]) -> Result<Vec<f64>, LearningError> {
    if let Some(i) = dual.iter().position(|v| !v.is_finite()) {
        return Err(LearningError::NonFinite(i));
    }
    Ok(dual.to_vec())
}

/// Componentwise minimizer of 1/2 (p_j - w)^2 + lambda |w|:
/// w_j = sign(p_j) * max(|p_j| - lambda, 0).
pub fn soft_threshold(pre_image: &[f64], lambda: f64) -> Result<Vec<f64>, LearningError> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(LearningError::NegativeThreshold(lambda));
    }
    Ok(pre_image
        .iter()
        .map(|&p| {
            let shrunk = p.abs() - lambda;
            if shrunk > 0.0 {
                p.signum() * shrunk
            } else {
                0.0
            }
        })
        .collect())
}

fn check_example(
    weights: &[f64],
    features: &SparseVector,
    label: i8,
) -> Result<(), LearningError> {
    if label != 1 && label != -1 {
        return Err(LearningError::InvalidLabel(label));
    }
    if let Some(max) = features.max_index() {
        if max >= weights.len() {
            return Err(LearningError::DimensionMismatch {
                dimension: weights.len(),
                index: max,
            });
        }
    }
    Ok(())
}

/// max(0, 1 - y <w, x>).
pub fn hinge_loss(
    weights: &[f64],
    features: &SparseVector,
    label: i8,
) -> Result<f64, LearningError> {
    check_example(weights, features, label)?;
    Ok((1.0 - f64::from(label) * features.dot_dense(weights)).max(0.0))
}

/// Subgradient of the hinge loss: -y * x inside the margin, zero elsewhere
/// (including at the kink, where zero is a valid and sparsity-preserving choice).
pub fn hinge_subgradient(
    weights: &[f64],
    features: &SparseVector,
    label: i8,
) -> Result<SparseVector, LearningError> {
    check_example(weights, features, label)?;
    let margin = f64::from(label) * features.dot_dense(weights);
    if margin < 1.0 {
        Ok(features.scaled(-f64::from(label)))
    } else {
        Ok(SparseVector::empty())
    }
}

/// Projects onto the L2 ball of the given radius, in place. No-op inside.
pub fn clip_to_ball(weights: &mut [f64], radius: f64) {
    let norm = weights.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > radius {
        let factor = radius / norm;
        for w in weights.iter_mut() {
            *w *= factor;
        }
    }
}

/// Step size and L1 threshold settings for a run: a single constant step
/// alpha over the horizon, with lambda_t = alpha * lambda_base.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub step_size: f64,
    pub lambda_base: f64,
    pub lambda_t: f64,
    pub grad_bound: f64,
    pub diameter: f64,
    pub nodes: usize,
    pub horizon: usize,
}

impl Schedule {
    /// alpha = diameter / (2 sqrt((L + lambda) * m * T * L)).
    pub fn auto(
        diameter: f64,
        grad_bound: f64,
        lambda_base: f64,
        nodes: usize,
        horizon: usize,
    ) -> Result<Self, LearningError> {
        for (name, value) in [
            ("diameter", diameter),
            ("grad_bound", grad_bound),
            ("nodes", nodes as f64),
            ("horizon", horizon as f64),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(LearningError::NonPositiveInput { name, value });
            }
        }
        if lambda_base < 0.0 || !lambda_base.is_finite() {
            return Err(LearningError::NegativeLambda(lambda_base));
        }
        let step_size = diameter
            / (2.0
                * ((grad_bound + lambda_base) * nodes as f64 * horizon as f64 * grad_bound)
                    .sqrt());
        Ok(Self {
            step_size,
            lambda_base,
            lambda_t: step_size * lambda_base,
            grad_bound,
            diameter,
            nodes,
            horizon,
        })
    }

    /// Explicitly configured constant step size; lambda_t = alpha * lambda.
    pub fn fixed(
        step_size: f64,
        diameter: f64,
        grad_bound: f64,
        lambda_base: f64,
        nodes: usize,
        horizon: usize,
    ) -> Result<Self, LearningError> {
        if !(step_size > 0.0 && step_size.is_finite()) {
            return Err(LearningError::NonPositiveInput {
                name: "step_size",
                value: step_size,
            });
        }
        let auto = Self::auto(diameter, grad_bound, lambda_base, nodes, horizon)?;
        Ok(Self {
            step_size,
            lambda_t: step_size * lambda_base,
            ..auto
        })
    }
}
