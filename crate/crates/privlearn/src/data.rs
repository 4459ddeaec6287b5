//! Data streams: sparse labeled examples, synthetic stream generation, and
//! libsvm-format ingestion with the L2 normalization pretreatment.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: feature index {index} out of range for dimension {dimension}")]
    IndexOutOfRange {
        line: usize,
        index: usize,
        dimension: usize,
    },
    #[error("line {line}: feature indices must be strictly increasing")]
    UnsortedIndices { line: usize },
    #[error("invalid sparse vector: {0}")]
    InvalidVector(String),
    #[error("{nnz} nonzeros per example exceeds dimension {dimension}")]
    TooManyNonzeros { nnz: usize, dimension: usize },
    #[error("true support {support} exceeds dimension {dimension}")]
    SupportExceedsDimension { support: usize, dimension: usize },
    #[error("noise rate {0} outside [0, 0.5)")]
    InvalidNoiseRate(f64),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Sparse feature vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseVector {
    pub fn try_new(indices: Vec<usize>, values: Vec<f64>) -> Result<Self, DataError> {
        if indices.len() != values.len() {
            return Err(DataError::InvalidVector(format!(
                "{} indices but {} values",
                indices.len(),
                values.len()
            )));
        }
        if !indices.windows(2).all(|w| w[0] < w[1]) {
            return Err(DataError::InvalidVector(
                "indices not strictly increasing".into(),
            ));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(DataError::InvalidVector(format!("non-finite value {v}")));
        }
        Ok(Self { indices, values })
    }

    pub fn new(indices: Vec<usize>, values: Vec<f64>) -> Self {
        Self::try_new(indices, values).expect("valid sparse vector")
    }

    pub fn empty() -> Self {
        Self {
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from unordered (index, value) pairs; indices must be distinct.
    pub fn from_pairs(mut pairs: Vec<(usize, f64)>) -> Result<Self, DataError> {
        pairs.sort_by_key(|(i, _)| *i);
        let (indices, values) = pairs.into_iter().unzip();
        Self::try_new(indices, values)
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn max_index(&self) -> Option<usize> {
        self.indices.last().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(i, v)| dense[i] * v).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }

    /// Returns a copy scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.scale(factor);
        out
    }

    pub fn to_dense(&self, dimension: usize) -> Vec<f64> {
        let mut out = vec![0.0; dimension];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }
}

/// One streamed observation: sparse features plus a {-1, +1} label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub id: u64,
    pub features: SparseVector,
    pub label: i8,
}

impl LabeledExample {
    /// Content equality, ignoring the stream id. Used by the adjacency check
    /// of the empirical differential-privacy test.
    pub fn same_content(&self, other: &Self) -> bool {
        self.label == other.label && self.features == other.features
    }
}

/// Sparse ground-truth generator standing in for a real high-dimensional
/// social stream: `true_support` nonzero weights out of `dimension`.
#[derive(Debug, Clone)]
pub struct SyntheticModel {
    pub dimension: usize,
    pub true_support: usize,
    pub nnz_per_example: usize,
    pub noise_rate: f64,
    true_weights: Vec<f64>,
}

impl SyntheticModel {
    pub fn new(
        dimension: usize,
        true_support: usize,
        nnz_per_example: usize,
        noise_rate: f64,
        seed: u64,
    ) -> Result<Self, DataError> {
        if true_support > dimension || true_support == 0 {
            return Err(DataError::SupportExceedsDimension {
                support: true_support,
                dimension,
            });
        }
        if nnz_per_example > dimension || nnz_per_example == 0 {
            return Err(DataError::TooManyNonzeros {
                nnz: nnz_per_example,
                dimension,
            });
        }
        if !(0.0..0.5).contains(&noise_rate) {
            return Err(DataError::InvalidNoiseRate(noise_rate));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut support = rand::seq::index::sample(&mut rng, dimension, true_support).into_vec();
        support.sort_unstable();
        let mut true_weights = vec![0.0; dimension];
        for &i in &support {
            // Resample values too close to zero so every support coordinate carries signal.
            let mut v: f64 = rng.sample(StandardNormal);
            while v.abs() < 1e-3 {
                v = rng.sample(StandardNormal);
            }
            true_weights[i] = v;
        }
        Ok(Self {
            dimension,
            true_support,
            nnz_per_example,
            noise_rate,
            true_weights,
        })
    }

    pub fn true_weights(&self) -> &[f64] {
        &self.true_weights
    }
}

/// Emits `count` unit-norm sparse examples labeled by the model's ground
/// truth, with labels flipped at `noise_rate`. Deterministic per seed; ids
/// run 0..count.
pub fn generate_stream(model: &SyntheticModel, count: usize, seed: u64) -> Vec<LabeledExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for id in 0..count {
        let (features, margin) = loop {
            let mut idx =
                rand::seq::index::sample(&mut rng, model.dimension, model.nnz_per_example)
                    .into_vec();
            idx.sort_unstable();
            let values: Vec<f64> = (0..idx.len()).map(|_| rng.sample(StandardNormal)).collect();
            let mut x = SparseVector {
                indices: idx,
                values,
            };
            let norm = x.l2_norm();
            if norm == 0.0 {
                continue;
            }
            x.scale(1.0 / norm);
            let margin = x.dot_dense(&model.true_weights);
            // Zero-margin draws have no well-defined label; redraw.
            if margin != 0.0 {
                break (x, margin);
            }
        };
        let mut label: i8 = if margin > 0.0 { 1 } else { -1 };
        if model.noise_rate > 0.0 && rng.random::<f64>() < model.noise_rate {
            label = -label;
        }
        out.push(LabeledExample {
            id: id as u64,
            features,
            label,
        });
    }
    out
}

/// Parses libsvm-format lines: `label idx:val idx:val ...` with 1-based
/// indices. Labels map {<= 0 -> -1, > 0 -> +1}; indices become 0-based.
pub fn parse_libsvm<R: BufRead>(reader: R, dimension: usize) -> Result<Vec<LabeledExample>, DataError> {
    let mut out = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = line_no + 1;
        let mut tokens = line.split_whitespace();
        let Some(label_tok) = tokens.next() else {
            continue; // blank line
        };
        let raw: f64 = label_tok.parse().map_err(|_| DataError::Malformed {
            line: line_no,
            message: format!("unparseable label `{label_tok}`"),
        })?;
        let label: i8 = if raw > 0.0 { 1 } else { -1 };
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for tok in tokens {
            let (idx_s, val_s) = tok.split_once(':').ok_or_else(|| DataError::Malformed {
                line: line_no,
                message: format!("expected idx:val, got `{tok}`"),
            })?;
            let idx: usize = idx_s.parse().map_err(|_| DataError::Malformed {
                line: line_no,
                message: format!("unparseable index `{idx_s}`"),
            })?;
            let val: f64 = val_s.parse().map_err(|_| DataError::Malformed {
                line: line_no,
                message: format!("unparseable value `{val_s}`"),
            })?;
            if !val.is_finite() {
                return Err(DataError::Malformed {
                    line: line_no,
                    message: format!("non-finite value `{val_s}`"),
                });
            }
            if idx == 0 || idx > dimension {
                return Err(DataError::IndexOutOfRange {
                    line: line_no,
                    index: idx,
                    dimension,
                });
            }
            let idx = idx - 1;
            if indices.last().is_some_and(|&last| idx <= last) {
                return Err(DataError::UnsortedIndices { line: line_no });
            }
            indices.push(idx);
            values.push(val);
        }
        out.push(LabeledExample {
            id: out.len() as u64,
            features: SparseVector { indices, values },
            label,
        });
    }
    Ok(out)
}

/// Reads a libsvm file, transparently decompressing `.gz` paths.
pub fn read_libsvm_file<P: AsRef<Path>>(
    path: P,
    dimension: usize,
) -> Result<Vec<LabeledExample>, DataError> {
    let path = path.as_ref();
    let file = File::open(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        parse_libsvm(BufReader::new(flate2::read::GzDecoder::new(file)), dimension)
    } else {
        parse_libsvm(BufReader::new(file), dimension)
    }
}

pub fn write_libsvm<W: Write>(examples: &[LabeledExample], mut writer: W) -> io::Result<()> {
    for ex in examples {
        write!(writer, "{}", if ex.label > 0 { "+1" } else { "-1" })?;
        for (i, v) in ex.features.iter() {
            write!(writer, " {}:{}", i + 1, v)?;
        }
        writeln!(writer)?;
    }
    Ok(())
}

/// Scales every feature vector to unit L2 norm (zero vectors stay zero).
/// This certifies the hinge subgradient bound L = 1 for the stream.
pub fn normalize(examples: &mut [LabeledExample]) {
    for ex in examples {
        let norm = ex.features.l2_norm();
        if norm > 0.0 {
            for v in &mut ex.features.values {
                *v /= norm;
            }
        }
    }
}

pub fn max_feature_norm(examples: &[LabeledExample]) -> f64 {
    examples
        .iter()
        .map(|e| e.features.l2_norm())
        .fold(0.0, f64::max)
}
