//! Communication graphs and doubly stochastic mixing matrices.
//!
//! Graphs carry implicit self-loops: every node always averages its own
//! parameter, which also makes the gossip chain aperiodic.

use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Row/column sums of a mixing matrix must match 1 within this tolerance
/// (double-precision accumulation over at most ~1024 entries).
pub const STOCHASTIC_TOL: f64 = 1e-12;

const RANDOM_GRAPH_ATTEMPTS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("node count must be at least 1")]
    EmptyGraph,
    #[error("grid topology requires a perfect-square node count, got {0}")]
    NonSquareGrid(usize),
    #[error("edge probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("random graph stayed disconnected after {attempts} attempts (m = {m}, p = {p})")]
    DisconnectedRandom { m: usize, p: f64, attempts: usize },
    #[error("edge ({0}, {1}) is out of range or a self-loop")]
    InvalidEdge(usize, usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("matrix entries length {got} does not match m^2 = {expected}")]
    BadShape { got: usize, expected: usize },
    #[error("matrix has no positive entry")]
    NoPositiveEntry,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TopologyKind {
    Ring,
    Grid,
    Complete,
    Random { p: f64, seed: u64 },
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologyKind::Ring => write!(f, "ring"),
            TopologyKind::Grid => write!(f, "grid"),
            TopologyKind::Complete => write!(f, "complete"),
            TopologyKind::Random { p, .. } => write!(f, "random{p}"),
        }
    }
}

/// Undirected communication graph on nodes 0..m.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    m: usize,
    edges: BTreeSet<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds from undirected edges (normalized to i < j). Connectivity is
    /// not required here; `build_graph` guarantees it for generated families.
    pub fn from_edges(
        m: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, TopologyError> {
        if m == 0 {
            return Err(TopologyError::EmptyGraph);
        }
        let mut normalized = BTreeSet::new();
        let mut adjacency = vec![Vec::new(); m];
        for (a, b) in edges {
            if a == b || a >= m || b >= m {
                return Err(TopologyError::InvalidEdge(a, b));
            }
            let (i, j) = (a.min(b), a.max(b));
            if !normalized.insert((i, j)) {
                return Err(TopologyError::DuplicateEdge(i, j));
            }
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        for neighbors in &mut adjacency {
            neighbors.sort_unstable();
        }
        Ok(Self {
            m,
            edges: normalized,
            adjacency,
        })
    }

    pub fn node_count(&self) -> usize {
        self.m
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    /// Neighbors excluding the node itself (the self-loop is implicit).
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.m];
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.m
    }

    /// Longest shortest path; `None` if disconnected.
    pub fn diameter(&self) -> Option<usize> {
        let mut best = 0;
        for start in 0..self.m {
            let mut dist = vec![usize::MAX; self.m];
            dist[start] = 0;
            let mut queue = std::collections::VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &v in &self.adjacency[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            let far = *dist.iter().max().unwrap();
            if far == usize::MAX {
                return None;
            }
            best = best.max(far);
        }
        Some(best)
    }
}

/// Builds a connected graph of the requested family.
pub fn build_graph(kind: TopologyKind, m: usize) -> Result<Graph, TopologyError> {
    if m == 0 {
        return Err(TopologyError::EmptyGraph);
    }
    match kind {
        TopologyKind::Ring => {
            let edges: BTreeSet<(usize, usize)> = (0..m)
                .map(|i| {
                    let j = (i + 1) % m;
                    (i.min(j), i.max(j))
                })
                .filter(|(i, j)| i != j)
                .collect();
            Graph::from_edges(m, edges)
        }
        TopologyKind::Grid => {
            let side = (m as f64).sqrt().round() as usize;
            if side * side != m {
                return Err(TopologyError::NonSquareGrid(m));
            }
            let mut edges = Vec::new();
            for r in 0..side {
                for c in 0..side {
                    let node = r * side + c;
                    if c + 1 < side {
                        edges.push((node, node + 1));
                    }
                    if r + 1 < side {
                        edges.push((node, node + side));
                    }
                }
            }
            Graph::from_edges(m, edges)
        }
        TopologyKind::Complete => {
            let edges = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j)));
            Graph::from_edges(m, edges)
        }
        TopologyKind::Random { p, seed } => {
            if !(0.0..=1.0).contains(&p) {
                return Err(TopologyError::InvalidProbability(p));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..RANDOM_GRAPH_ATTEMPTS {
                let edges = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j)));
                let sampled: Vec<(usize, usize)> =
                    edges.filter(|_| rng.random::<f64>() < p).collect();
                let graph = Graph::from_edges(m, sampled)?;
                if graph.is_connected() {
                    return Ok(graph);
                }
            }
            Err(TopologyError::DisconnectedRandom {
                m,
                p,
                attempts: RANDOM_GRAPH_ATTEMPTS,
            })
        }
    }
}

/// First Assumption-1 condition violated by a matrix, with indices.
#[derive(Debug, Clone, PartialEq)]
pub enum MixingViolation {
    NegativeEntry { row: usize, column: usize, value: f64 },
    RowSum { row: usize, sum: f64 },
    ColumnSum { column: usize, sum: f64 },
    EntryBelowEta { row: usize, column: usize, value: f64, eta: f64 },
}

impl fmt::Display for MixingViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MixingViolation::NegativeEntry { row, column, value } => {
                write!(f, "negative entry {value} at ({row}, {column})")
            }
            MixingViolation::RowSum { row, sum } => {
                write!(f, "row {row} sums to {sum}, expected 1")
            }
            MixingViolation::ColumnSum { column, sum } => {
                write!(f, "column {column} sums to {sum}, expected 1")
            }
            MixingViolation::EntryBelowEta { row, column, value, eta } => {
                write!(f, "entry {value} at ({row}, {column}) below eta = {eta}")
            }
        }
    }
}

/// Doubly stochastic gossip weight matrix with minimum positive weight eta.
///
/// Immutable after construction; safe to share read-only across node updates.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    m: usize,
    entries: Vec<f64>, // row-major
    eta: f64,
}

impl MixingMatrix {
    /// Wraps row-major entries, deriving eta as the smallest positive entry.
    pub fn from_entries(m: usize, entries: Vec<f64>) -> Result<Self, TopologyError> {
        if entries.len() != m * m {
            return Err(TopologyError::BadShape {
                got: entries.len(),
                expected: m * m,
            });
        }
        let eta = entries
            .iter()
            .copied()
            .filter(|&v| v > 0.0)
            .fold(f64::INFINITY, f64::min);
        if !eta.is_finite() {
            return Err(TopologyError::NoPositiveEntry);
        }
        Ok(Self { m, entries, eta })
    }

    pub fn node_count(&self) -> usize {
        self.m
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.m..(i + 1) * self.m]
    }

    /// Column indices j with a_ij > 0 (the gossip in-neighbors of i,
    /// including i itself whenever the diagonal is positive).
    pub fn in_neighbors(&self, i: usize) -> Vec<usize> {
        self.row(i)
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(j, _)| j)
            .collect()
    }

    /// One gossip application: out[i] = sum_j a_ij v[j], componentwise.
    pub fn apply(&self, vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
        assert_eq!(vectors.len(), self.m);
        let dim = vectors.first().map_or(0, Vec::len);
        (0..self.m)
            .map(|i| {
                let mut out = vec![0.0; dim];
                for (j, v) in vectors.iter().enumerate() {
                    let w = self.get(i, j);
                    if w != 0.0 {
                        for (o, x) in out.iter_mut().zip(v) {
                            *o += w * x;
                        }
                    }
                }
                out
            })
            .collect()
    }

    /// Row-major CSV with an `m` header line, for debugging exports.
    pub fn to_csv(&self) -> String {
        let mut out = format!("m,{}\n", self.m);
        for i in 0..self.m {
            let row: Vec<String> = self.row(i).iter().map(f64::to_string).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, TopologyError> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let m: usize = header
            .strip_prefix("m,")
            .and_then(|v| v.parse().ok())
            .ok_or(TopologyError::BadShape { got: 0, expected: 0 })?;
        let mut entries = Vec::with_capacity(m * m);
        for line in lines {
            for tok in line.split(',') {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| TopologyError::BadShape { got: entries.len(), expected: m * m })?;
                entries.push(v);
            }
        }
        Self::from_entries(m, entries)
    }
}

/// Metropolis-Hastings weights: a_ij = 1 / (1 + max(deg i, deg j)) on edges,
/// the remainder on the diagonal. Doubly stochastic and symmetric on any
/// graph; positive diagonal keeps the chain aperiodic.
pub fn metropolis_weights(graph: &Graph) -> MixingMatrix {
    let m = graph.node_count();
    let mut entries = vec![0.0; m * m];
    for i in 0..m {
        let mut off_diagonal = 0.0;
        for &j in graph.neighbors(i) {
            let w = 1.0 / (1.0 + graph.degree(i).max(graph.degree(j)) as f64);
            entries[i * m + j] = w;
            off_diagonal += w;
        }
        entries[i * m + i] = 1.0 - off_diagonal;
    }
    MixingMatrix::from_entries(m, entries).expect("metropolis weights are well-formed")
}

/// Checks the Assumption-1 conditions within `STOCHASTIC_TOL`, reporting the
/// first violation. Violations are values, not faults.
pub fn validate_mixing_matrix(matrix: &MixingMatrix) -> Result<(), MixingViolation> {
    let m = matrix.node_count();
    for i in 0..m {
        for j in 0..m {
            let v = matrix.get(i, j);
            if v < 0.0 {
                return Err(MixingViolation::NegativeEntry { row: i, column: j, value: v });
            }
        }
    }
    for i in 0..m {
        let sum: f64 = matrix.row(i).iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(MixingViolation::RowSum { row: i, sum });
        }
    }
    for j in 0..m {
        let sum: f64 = (0..m).map(|i| matrix.get(i, j)).sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(MixingViolation::ColumnSum { column: j, sum });
        }
    }
    let eta = matrix.eta();
    for i in 0..m {
        for j in 0..m {
            let v = matrix.get(i, j);
            if v > 0.0 && v < eta {
                return Err(MixingViolation::EntryBelowEta { row: i, column: j, value: v, eta });
            }
        }
    }
    Ok(())
}
