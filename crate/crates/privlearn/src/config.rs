//! Experiment configuration: strict TOML parsing, validation with
//! field-naming errors, and the sweep grid description.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::TopologyKind;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid `{field}`: {message}")]
    Field { field: &'static str, message: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn field_err(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field,
        message: message.into(),
    }
}

/// Privacy level: a positive number, or any of `inf` / `"inf"` /
/// `"disabled"` for the non-private baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonSpec {
    Number(f64),
    Text(String),
}

impl EpsilonSpec {
    pub fn disabled() -> Self {
        EpsilonSpec::Text("inf".into())
    }

    /// `None` means privacy disabled.
    pub fn resolve(&self) -> Result<Option<f64>, ConfigError> {
        match self {
            EpsilonSpec::Number(v) if v.is_infinite() && *v > 0.0 => Ok(None),
            EpsilonSpec::Number(v) if *v > 0.0 && v.is_finite() => Ok(Some(*v)),
            EpsilonSpec::Number(v) => Err(field_err(
                "epsilon",
                format!("must be positive or `inf`, got {v}"),
            )),
            EpsilonSpec::Text(s) => match s.to_ascii_lowercase().as_str() {
                "inf" | "infinity" | "disabled" | "none" => Ok(None),
                other => Err(field_err(
                    "epsilon",
                    format!("unrecognized value `{other}`"),
                )),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TopologySpec {
    Name(String),
    Detailed {
        kind: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

impl TopologySpec {
    pub fn kind_name(&self) -> &str {
        match self {
            TopologySpec::Name(s) => s,
            TopologySpec::Detailed { kind, .. } => kind,
        }
    }

    /// Filename-safe label used in cell ids and the sweep summary.
    pub fn label(&self) -> String {
        match self {
            TopologySpec::Name(s) => s.clone(),
            TopologySpec::Detailed { kind, p, .. } => match p {
                Some(p) if kind == "random" => format!("random{p}"),
                _ => kind.clone(),
            },
        }
    }

    pub fn resolve(&self, fallback_seed: u64) -> Result<TopologyKind, ConfigError> {
        let (kind, p, seed) = match self {
            TopologySpec::Name(s) => (s.as_str(), None, None),
            TopologySpec::Detailed { kind, p, seed } => (kind.as_str(), *p, *seed),
        };
        match kind {
            "ring" => Ok(TopologyKind::Ring),
            "grid" => Ok(TopologyKind::Grid),
            "complete" => Ok(TopologyKind::Complete),
            "random" => {
                let p = p.ok_or_else(|| field_err("topology", "random topology needs `p`"))?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(field_err("topology", format!("p = {p} outside [0, 1]")));
                }
                Ok(TopologyKind::Random {
                    p,
                    seed: seed.unwrap_or(fallback_seed),
                })
            }
            other => Err(field_err(
                "topology",
                format!("unknown kind `{other}` (expected ring|grid|complete|random)"),
            )),
        }
    }
}

/// Subgradient bound L: an explicit number, or `"auto"` to certify it from
/// the (normalized) stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GradBoundSpec {
    Number(f64),
    Text(String),
}

impl Default for GradBoundSpec {
    fn default() -> Self {
        GradBoundSpec::Text("auto".into())
    }
}

impl GradBoundSpec {
    pub fn resolve(&self) -> Result<Option<f64>, ConfigError> {
        match self {
            GradBoundSpec::Number(v) if *v > 0.0 && v.is_finite() => Ok(Some(*v)),
            GradBoundSpec::Number(v) => Err(field_err(
                "grad_bound",
                format!("must be positive, got {v}"),
            )),
            GradBoundSpec::Text(s) if s.eq_ignore_ascii_case("auto") => Ok(None),
            GradBoundSpec::Text(s) => Err(field_err(
                "grad_bound",
                format!("unrecognized value `{s}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Synthetic,
    Libsvm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub kind: DataKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_support: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nnz_per_example: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

/// Optional sweep lists; absent lists fall back to the base value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilons: Option<Vec<EpsilonSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topologies: Option<Vec<TopologySpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_counts: Option<Vec<usize>>,
}

/// How grid cells with differing node counts size their horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// Every cell runs `rounds` rounds.
    #[default]
    FixedRounds,
    /// Every cell consumes `rounds * nodes` examples in total, so cells with
    /// more nodes run proportionally fewer rounds.
    FixedExamples,
}

fn default_diameter() -> f64 {
    2.0
}

fn default_holdout() -> f64 {
    0.1
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub nodes: usize,
    pub dimension: usize,
    pub rounds: usize,
    pub topology: TopologySpec,
    #[serde(default = "EpsilonSpec::disabled")]
    pub epsilon: EpsilonSpec,
    #[serde(default)]
    pub lambda_base: f64,
    #[serde(default = "default_diameter")]
    pub diameter: f64,
    /// Explicit constant step size; omitted means the auto schedule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
    #[serde(default)]
    pub grad_bound: GradBoundSpec,
    pub seeds: Vec<u64>,
    pub data: DataSpec,
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub diagnostic_trace: bool,
    #[serde(default)]
    pub round_log: bool,
    #[serde(default)]
    pub clip_primal: bool,
    #[serde(default = "default_true")]
    pub normalize: bool,
    #[serde(default)]
    pub budget_mode: BudgetMode,
    #[serde(default, skip_serializing_if = "GridSpec::is_empty")]
    pub grid: GridSpec,
}

impl GridSpec {
    pub fn is_empty(&self) -> bool {
        self.epsilons.is_none()
            && self.topologies.is_none()
            && self.lambdas.is_none()
            && self.node_counts.is_none()
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.nodes == 0 {
            return Err(field_err("nodes", "must be at least 1"));
        }
        if self.dimension == 0 {
            return Err(field_err("dimension", "must be at least 1"));
        }
        self.epsilon.resolve()?;
        if let Some(list) = &self.grid.epsilons {
            if list.is_empty() {
                return Err(field_err("grid.epsilons", "list must not be empty"));
            }
            for eps in list {
                eps.resolve()?;
            }
        }
        if !(self.lambda_base >= 0.0 && self.lambda_base.is_finite()) {
            return Err(field_err(
                "lambda_base",
                format!("must be nonnegative, got {}", self.lambda_base),
            ));
        }
        if let Some(list) = &self.grid.lambdas {
            if list.is_empty() {
                return Err(field_err("grid.lambdas", "list must not be empty"));
            }
            if let Some(bad) = list.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                return Err(field_err(
                    "grid.lambdas",
                    format!("must be nonnegative, got {bad}"),
                ));
            }
        }
        if !(self.diameter > 0.0 && self.diameter.is_finite()) {
            return Err(field_err(
                "diameter",
                format!("must be positive, got {}", self.diameter),
            ));
        }
        if let Some(alpha) = self.step_size {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(field_err(
                    "step_size",
                    format!("must be positive, got {alpha}"),
                ));
            }
        }
        self.grad_bound.resolve()?;
        if self.seeds.is_empty() {
            return Err(field_err("seeds", "need at least one seed"));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(field_err(
                "holdout_fraction",
                format!("must lie in [0, 1), got {}", self.holdout_fraction),
            ));
        }
        match self.data.kind {
            DataKind::Synthetic => {
                let support = self
                    .data
                    .true_support
                    .ok_or_else(|| field_err("data.true_support", "required for synthetic data"))?;
                let nnz = self.data.nnz_per_example.ok_or_else(|| {
                    field_err("data.nnz_per_example", "required for synthetic data")
                })?;
                let noise = self
                    .data
                    .noise_rate
                    .ok_or_else(|| field_err("data.noise_rate", "required for synthetic data"))?;
                if support == 0 || support > self.dimension {
                    return Err(field_err(
                        "data.true_support",
                        format!("must lie in 1..={}, got {support}", self.dimension),
                    ));
                }
                if nnz == 0 || nnz > self.dimension {
                    return Err(field_err(
                        "data.nnz_per_example",
                        format!("must lie in 1..={}, got {nnz}", self.dimension),
                    ));
                }
                if !(0.0..0.5).contains(&noise) {
                    return Err(field_err(
                        "data.noise_rate",
                        format!("must lie in [0, 0.5), got {noise}"),
                    ));
                }
            }
            DataKind::Libsvm => {
                if self.data.path.is_none() {
                    return Err(field_err("data.path", "required for libsvm data"));
                }
            }
        }
        if let Some(list) = &self.grid.node_counts {
            if list.is_empty() {
                return Err(field_err("grid.node_counts", "list must not be empty"));
            }
            if list.contains(&0) {
                return Err(field_err("grid.node_counts", "node counts must be >= 1"));
            }
        }
        if let Some(list) = &self.grid.topologies {
            if list.is_empty() {
                return Err(field_err("grid.topologies", "list must not be empty"));
            }
        }
        // every (topology, node count) combination must be constructible
        let node_counts = self.effective_node_counts();
        for topology in self.effective_topologies() {
            topology.resolve(0)?;
            if topology.kind_name() == "grid" {
                for &m in &node_counts {
                    let side = (m as f64).sqrt().round() as usize;
                    if side * side != m {
                        return Err(field_err(
                            "topology",
                            format!("grid topology needs a perfect-square node count, got {m}"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn effective_epsilons(&self) -> Vec<EpsilonSpec> {
        self.grid
            .epsilons
            .clone()
            .unwrap_or_else(|| vec![self.epsilon.clone()])
    }

    pub fn effective_topologies(&self) -> Vec<TopologySpec> {
        self.grid
            .topologies
            .clone()
            .unwrap_or_else(|| vec![self.topology.clone()])
    }

    pub fn effective_lambdas(&self) -> Vec<f64> {
        self.grid
            .lambdas
            .clone()
            .unwrap_or_else(|| vec![self.lambda_base])
    }

    pub fn effective_node_counts(&self) -> Vec<usize> {
        self.grid
            .node_counts
            .clone()
            .unwrap_or_else(|| vec![self.nodes])
    }

    /// Horizon for a cell with `nodes` nodes under the budget mode.
    pub fn rounds_for(&self, nodes: usize) -> usize {
        match self.budget_mode {
            BudgetMode::FixedRounds => self.rounds,
            BudgetMode::FixedExamples => (self.rounds * self.nodes) / nodes.max(1),
        }
    }
}
