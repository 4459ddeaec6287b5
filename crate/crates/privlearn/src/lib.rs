//! Differentially private distributed sparse online learning over simulated
//! data-center networks.
//!
//! A set of m nodes runs online mirror descent with an L1 proximal step on
//! streamed hinge losses. Each round every node broadcasts its dual
//! parameter with i.i.d. Laplace noise calibrated to the update's L1
//! sensitivity, then averages the received parameters through a doubly
//! stochastic mixing matrix. The harness measures regret against a
//! best-in-hindsight comparator, empirical privacy, and sparsity/accuracy
//! trade-offs across topology, privacy-level, and node-count sweeps.

pub mod config;
pub mod data;
pub mod evaluation;
pub mod learning;
pub mod privacy;
pub mod simulator;
pub mod sweep;
pub mod topology;

pub use config::ExperimentConfig;
pub use data::{LabeledExample, SparseVector, SyntheticModel};
pub use learning::Schedule;
pub use privacy::{PrivacyLedger, PrivacyParams};
pub use simulator::{RoundRecord, RunSpec, Simulation};
pub use topology::{Graph, MixingMatrix, TopologyKind};
