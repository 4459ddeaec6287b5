//! Round-synchronous engine: m nodes receive one example each, predict with
//! the thresholded primal, gossip Laplace-perturbed dual parameters over the
//! mixing matrix, and take a subgradient step.
//!
//! Rounds are a strict barrier. Within a round every node update depends
//! only on its own state, its own example, and the previous round's
//! broadcasts, so update order is immaterial and per-node work may run
//! concurrently. The inbox swap at the barrier is the only exchange point.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::LabeledExample;
use crate::learning::{self, LearningError, Schedule};
use crate::privacy::{self, PrivacyError, PrivacyLedger, PrivacyParams};
use crate::topology::MixingMatrix;

/// Tolerance for the averaged-recursion diagnostic.
pub const AVERAGE_DYNAMICS_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum SimulatorError {
    #[error("batch has {got} examples, expected one per node ({expected})")]
    BatchSize { expected: usize, got: usize },
    #[error("stream provides {available} examples, run needs {needed}")]
    StreamExhausted { needed: usize, available: usize },
    #[error("privacy params inconsistent with run: {0}")]
    InconsistentPrivacy(&'static str),
    #[error("diagnostic trace was not retained")]
    TraceMissing,
    #[error("average dynamics deviation {error:.3e} at round {round}")]
    AverageDynamics { round: usize, error: f64 },
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
}

/// Per-node state: dual parameter, last primal, noise substream, and the
/// inbox of perturbed duals received from in-neighbors (previous round).
#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: usize,
    pub dual: Vec<f64>,
    pub primal: Vec<f64>,
    rng: ChaCha8Rng,
    pub inbox: Vec<(usize, Vec<f64>)>,
}

/// Everything observable about one completed round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// 1-based round index t.
    pub round: usize,
    pub per_node_loss: Vec<f64>,
    pub per_node_prediction: Vec<f64>,
    /// (1/m) sum_i w_t^i, exactly as computed.
    pub average_primal: Vec<f64>,
    pub nnz_fraction: f64,
    /// max_i ||w_t^i - average|| in L2.
    pub consensus_gap: f64,
}

/// Full per-node retention for one round, in diagnostic mode.
#[derive(Debug, Clone)]
pub struct TraceRound {
    pub dual_before: Vec<Vec<f64>>,
    /// Noise inside the broadcasts consumed this round.
    pub noise: Vec<Vec<f64>>,
    pub gradients: Vec<Vec<f64>>,
    pub dual_after: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub step_size: f64,
    pub rounds: Vec<TraceRound>,
}

pub struct Simulation {
    matrix: MixingMatrix,
    schedule: Schedule,
    privacy: PrivacyParams,
    dimension: usize,
    clip_primal: bool,
    states: Vec<NodeState>,
    /// Noise inside the currently delivered broadcasts, per node.
    pending_noise: Vec<Vec<f64>>,
    round: usize,
    ledger: PrivacyLedger,
    trace: Option<Trace>,
}

struct NodeUpdate {
    primal: Vec<f64>,
    prediction: f64,
    loss: f64,
    gradient: crate::data::SparseVector,
    next_dual: Vec<f64>,
}

impl Simulation {
    /// Initializes theta = 0 on every node and performs the first broadcast,
    /// perturbed before any exchange so every message on the wire is private.
    /// Node i's noise substream is stream i+1 of the master seed.
    pub fn new(
        matrix: MixingMatrix,
        schedule: Schedule,
        privacy: PrivacyParams,
        dimension: usize,
        master_seed: u64,
        retain_trace: bool,
        clip_primal: bool,
    ) -> Result<Self, SimulatorError> {
        if privacy.enabled {
            if privacy.dimension != dimension {
                return Err(SimulatorError::InconsistentPrivacy(
                    "dimension differs from the run dimension",
                ));
            }
            if privacy.step_size != schedule.step_size {
                return Err(SimulatorError::InconsistentPrivacy(
                    "step size differs from the schedule",
                ));
            }
        }
        let m = matrix.node_count();
        let epsilon = privacy.enabled.then_some(privacy.epsilon);
        let mut states: Vec<NodeState> = (0..m)
            .map(|id| {
                let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
                rng.set_stream(id as u64 + 1);
                NodeState {
                    id,
                    dual: vec![0.0; dimension],
                    primal: vec![0.0; dimension],
                    rng,
                    inbox: Vec::new(),
                }
            })
            .collect();
        let trace = retain_trace.then(|| Trace {
            step_size: schedule.step_size,
            rounds: Vec::new(),
        });
        let mut sim = Self {
            matrix,
            schedule,
            privacy,
            dimension,
            clip_primal,
            states: Vec::new(),
            pending_noise: Vec::new(),
            round: 0,
            ledger: PrivacyLedger::new(epsilon),
            trace,
        };
        let (broadcasts, noise) = sim.make_broadcasts(&mut states)?;
        sim.states = states;
        sim.pending_noise = noise;
        sim.deliver(&broadcasts);
        Ok(sim)
    }

    fn make_broadcasts(
        &self,
        states: &mut [NodeState],
    ) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), SimulatorError> {
        let mut broadcasts = Vec::with_capacity(states.len());
        let mut noises = Vec::with_capacity(states.len());
        for state in states.iter_mut() {
            let noise = if self.privacy.enabled {
                privacy::sample_laplace_vector(
                    self.privacy.noise_scale(),
                    self.dimension,
                    &mut state.rng,
                )?
            } else {
                vec![0.0; self.dimension]
            };
            let broadcast: Vec<f64> = state.dual.iter().zip(&noise).map(|(t, d)| t + d).collect();
            broadcasts.push(broadcast);
            noises.push(noise);
        }
        Ok((broadcasts, noises))
    }

    /// The barrier-owned inbox exchange: node i receives exactly one vector
    /// from every j with a_ij > 0, itself included.
    fn deliver(&mut self, broadcasts: &[Vec<f64>]) {
        for state in &mut self.states {
            state.inbox = self
                .matrix
                .in_neighbors(state.id)
                .into_iter()
                .map(|j| (j, broadcasts[j].clone()))
                .collect();
        }
    }

    fn update_node(&self, id: usize, example: &LabeledExample) -> Result<NodeUpdate, SimulatorError> {
        let state = &self.states[id];
        let pre_image = learning::mirror_map(&state.dual)?;
        let mut primal = learning::soft_threshold(&pre_image, self.schedule.lambda_t)?;
        if self.clip_primal {
            learning::clip_to_ball(&mut primal, self.schedule.diameter / 2.0);
        }
        let prediction = example.features.dot_dense(&primal);
        let loss = learning::hinge_loss(&primal, &example.features, example.label)?;
        let gradient = learning::hinge_subgradient(&primal, &example.features, example.label)?;

        let mut next_dual = vec![0.0; self.dimension];
        for (j, incoming) in &state.inbox {
            let weight = self.matrix.get(id, *j);
            for (acc, v) in next_dual.iter_mut().zip(incoming) {
                *acc += weight * v;
            }
        }
        for (idx, value) in gradient.iter() {
            next_dual[idx] -= self.schedule.step_size * value;
        }
        Ok(NodeUpdate {
            primal,
            prediction,
            loss,
            gradient,
            next_dual,
        })
    }

    /// One synchronous round over all m nodes, consuming one example per node.
    pub fn run_round(&mut self, batch: &[LabeledExample]) -> Result<RoundRecord, SimulatorError> {
        let order: Vec<usize> = (0..self.states.len()).collect();
        self.run_round_ordered(batch, &order)
    }

    /// Same round with an explicit node-update order; results are identical
    /// for every permutation because updates share no mutable state.
    pub(crate) fn run_round_ordered(
        &mut self,
        batch: &[LabeledExample],
        order: &[usize],
    ) -> Result<RoundRecord, SimulatorError> {
        let m = self.states.len();
        if batch.len() != m {
            return Err(SimulatorError::BatchSize {
                expected: m,
                got: batch.len(),
            });
        }
        let mut updates: Vec<Option<NodeUpdate>> = (0..m).map(|_| None).collect();
        for &i in order {
            updates[i] = Some(self.update_node(i, &batch[i])?);
        }
        let updates: Vec<NodeUpdate> = updates.into_iter().map(Option::unwrap).collect();

        self.round += 1;
        self.ledger.record_round(batch.iter().map(|e| e.id))?;

        if self.trace.is_some() {
            let trace_round = TraceRound {
                dual_before: self.states.iter().map(|s| s.dual.clone()).collect(),
                noise: self.pending_noise.clone(),
                gradients: updates
                    .iter()
                    .map(|u| u.gradient.to_dense(self.dimension))
                    .collect(),
                dual_after: updates.iter().map(|u| u.next_dual.clone()).collect(),
            };
            self.trace.as_mut().unwrap().rounds.push(trace_round);
        }

        let mut per_node_loss = Vec::with_capacity(m);
        let mut per_node_prediction = Vec::with_capacity(m);
        for (state, update) in self.states.iter_mut().zip(updates) {
            state.dual = update.next_dual;
            state.primal = update.primal;
            per_node_loss.push(update.loss);
            per_node_prediction.push(update.prediction);
        }

        // Broadcast theta_{t+1} + delta for the next round's inboxes.
        let mut states = std::mem::take(&mut self.states);
        let (broadcasts, noise) = self.make_broadcasts(&mut states)?;
        self.states = states;
        self.pending_noise = noise;
        self.deliver(&broadcasts);

        let mut average_primal = vec![0.0; self.dimension];
        for state in &self.states {
            for (acc, v) in average_primal.iter_mut().zip(&state.primal) {
                *acc += v;
            }
        }
        for v in &mut average_primal {
            *v /= m as f64;
        }
        let nnz = average_primal.iter().filter(|v| **v != 0.0).count();
        let consensus_gap = self
            .states
            .iter()
            .map(|s| {
                s.primal
                    .iter()
                    .zip(&average_primal)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);

        Ok(RoundRecord {
            round: self.round,
            per_node_loss,
            per_node_prediction,
            average_primal,
            nnz_fraction: nnz as f64 / self.dimension.max(1) as f64,
            consensus_gap,
        })
    }

    pub fn states(&self) -> &[NodeState] {
        &self.states
    }

    pub fn ledger(&self) -> &PrivacyLedger {
        &self.ledger
    }

    pub fn into_parts(self) -> (PrivacyLedger, Option<Trace>) {
        (self.ledger, self.trace)
    }
}

/// Static description of one run; the schedule's horizon is used for the
/// step size while `rounds` controls how many rounds actually execute.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub matrix: MixingMatrix,
    pub schedule: Schedule,
    pub privacy: PrivacyParams,
    pub dimension: usize,
    pub rounds: usize,
    pub master_seed: u64,
    pub retain_trace: bool,
    pub clip_primal: bool,
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub records: Vec<RoundRecord>,
    pub ledger: PrivacyLedger,
    pub trace: Option<Trace>,
}

/// Runs T rounds, feeding example t*m + i to node i at round t. Each
/// example is consumed at most once; deterministic given the master seed.
pub fn run_experiment(
    spec: &RunSpec,
    stream: &[LabeledExample],
) -> Result<ExperimentOutput, SimulatorError> {
    let m = spec.matrix.node_count();
    let needed = m * spec.rounds;
    if stream.len() < needed {
        return Err(SimulatorError::StreamExhausted {
            needed,
            available: stream.len(),
        });
    }
    let mut sim = Simulation::new(
        spec.matrix.clone(),
        spec.schedule.clone(),
        spec.privacy.clone(),
        spec.dimension,
        spec.master_seed,
        spec.retain_trace,
        spec.clip_primal,
    )?;
    let mut records = Vec::with_capacity(spec.rounds);
    for t in 0..spec.rounds {
        let batch = &stream[t * m..(t + 1) * m];
        records.push(sim.run_round(batch)?);
    }
    let (ledger, trace) = sim.into_parts();
    Ok(ExperimentOutput {
        records,
        ledger,
        trace,
    })
}

/// Verifies the averaged recursion mean(theta_{t+1}) = mean(theta_t) +
/// mean(delta_t) - alpha * mean(g_t) at every retained round. This is the
/// double-stochasticity consequence the regret analysis rests on.
pub fn average_dynamics_check(trace: Option<&Trace>) -> Result<(), SimulatorError> {
    let trace = trace.ok_or(SimulatorError::TraceMissing)?;
    for (t, round) in trace.rounds.iter().enumerate() {
        let m = round.dual_before.len() as f64;
        let dim = round.dual_before.first().map_or(0, Vec::len);
        let mut worst: f64 = 0.0;
        for d in 0..dim {
            let mean = |vs: &[Vec<f64>]| vs.iter().map(|v| v[d]).sum::<f64>() / m;
            let predicted = mean(&round.dual_before) + mean(&round.noise)
                - trace.step_size * mean(&round.gradients);
            worst = worst.max((mean(&round.dual_after) - predicted).abs());
        }
        if worst > AVERAGE_DYNAMICS_TOL {
            return Err(SimulatorError::AverageDynamics {
                round: t + 1,
                error: worst,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_stream, LabeledExample, SparseVector, SyntheticModel};
    use crate::topology::{build_graph, metropolis_weights, MixingMatrix, TopologyKind};

    fn schedule(step_size: f64, lambda_base: f64, nodes: usize) -> Schedule {
        Schedule {
            step_size,
            lambda_base,
            lambda_t: step_size * lambda_base,
            grad_bound: 1.0,
            diameter: 2.0,
            nodes,
            horizon: 100,
        }
    }

    fn single_node_matrix() -> MixingMatrix {
        metropolis_weights(&build_graph(TopologyKind::Complete, 1).unwrap())
    }

    fn example(id: u64, pairs: &[(usize, f64)], label: i8) -> LabeledExample {
        LabeledExample {
            id,
            features: SparseVector::from_pairs(pairs.to_vec()).unwrap(),
            label,
        }
    }

    #[test]
    fn single_node_reduces_to_centralized_update() {
        let n = 6;
        let model = SyntheticModel::new(n, 3, 3, 0.0, 4).unwrap();
        let stream = generate_stream(&model, 100, 21);
        let sched = schedule(0.05, 0.0, 1);
        let mut sim = Simulation::new(
            single_node_matrix(),
            sched.clone(),
            PrivacyParams::disabled(),
            n,
            9,
            false,
            false,
        )
        .unwrap();

        // independent reference: textbook online subgradient descent
        let mut reference = vec![0.0; n];
        for ex in &stream {
            sim.run_round(std::slice::from_ref(ex)).unwrap();
            let margin = f64::from(ex.label) * ex.features.dot_dense(&reference);
            if margin < 1.0 {
                for (i, v) in ex.features.iter() {
                    let g = v * -f64::from(ex.label);
                    reference[i] -= sched.step_size * g;
                }
            }
            assert_eq!(sim.states()[0].dual, reference);
        }
    }

    #[test]
    fn two_node_trajectories_match_hand_trace() {
        // Complete graph on 2 nodes: all weights 1/2. alpha = 0.1,
        // lambda_t = 0.05. Hand-executed trace of steps 6-11.
        let graph = build_graph(TopologyKind::Complete, 2).unwrap();
        let matrix = metropolis_weights(&graph);
        let mut sim = Simulation::new(
            matrix,
            schedule(0.1, 0.5, 2),
            PrivacyParams::disabled(),
            2,
            0,
            false,
            false,
        )
        .unwrap();

        let rounds = [
            [example(0, &[(0, 1.0)], 1), example(1, &[(1, 1.0)], -1)],
            [
                example(2, &[(0, 0.6), (1, 0.8)], -1),
                example(3, &[(0, 1.0)], 1),
            ],
            [
                example(4, &[(1, 1.0)], 1),
                example(5, &[(0, 0.8), (1, -0.6)], -1),
            ],
        ];
        let mut expected = [vec![0.0, 0.0], vec![0.0, 0.0]];
        for batch in &rounds {
            // hand-executed: w = shrink(theta, 0.05); g = -y x if margin < 1;
            // theta' = (theta0 + theta1)/2 - 0.1 g
            let shrink = |v: f64| v.signum() * (v.abs() - 0.05).max(0.0);
            let mut gs = Vec::new();
            for (node, ex) in batch.iter().enumerate() {
                let w: Vec<f64> = expected[node].iter().map(|&v| shrink(v)).collect();
                let x = ex.features.to_dense(2);
                let margin = f64::from(ex.label) * (w[0] * x[0] + w[1] * x[1]);
                let g = if margin < 1.0 {
                    [-f64::from(ex.label) * x[0], -f64::from(ex.label) * x[1]]
                } else {
                    [0.0, 0.0]
                };
                gs.push(g);
            }
            let avg = [
                0.5 * expected[0][0] + 0.5 * expected[1][0],
                0.5 * expected[0][1] + 0.5 * expected[1][1],
            ];
            for node in 0..2 {
                expected[node] = vec![
                    avg[0] - 0.1 * gs[node][0],
                    avg[1] - 0.1 * gs[node][1],
                ];
            }

            sim.run_round(batch).unwrap();
            for node in 0..2 {
                for d in 0..2 {
                    assert!(
                        (sim.states()[node].dual[d] - expected[node][d]).abs() <= 1e-12,
                        "node {node} dim {d}: {} vs {}",
                        sim.states()[node].dual[d],
                        expected[node][d]
                    );
                }
            }
        }
        // Spot-check the final duals against the numbers worked out on paper.
        assert!((sim.states()[0].dual[0] - 0.07).abs() <= 1e-12);
        assert!((sim.states()[0].dual[1] - 0.01).abs() <= 1e-12);
        assert!((sim.states()[1].dual[0] - -0.01).abs() <= 1e-12);
        assert!((sim.states()[1].dual[1] - -0.03).abs() <= 1e-12);
    }

    #[test]
    fn zero_gradients_make_pure_gossip() {
        let graph = build_graph(TopologyKind::Ring, 4).unwrap();
        let matrix = metropolis_weights(&graph);
        let mut sim = Simulation::new(
            matrix,
            schedule(0.1, 0.0, 4),
            PrivacyParams::disabled(),
            3,
            5,
            false,
            false,
        )
        .unwrap();
        // three rounds of real data to spread the duals apart
        let model = SyntheticModel::new(3, 2, 2, 0.0, 8).unwrap();
        let stream = generate_stream(&model, 12, 3);
        for t in 0..3 {
            sim.run_round(&stream[t * 4..(t + 1) * 4]).unwrap();
        }
        let gap = |sim: &Simulation| -> f64 {
            let mean: Vec<f64> = (0..3)
                .map(|d| sim.states().iter().map(|s| s.dual[d]).sum::<f64>() / 4.0)
                .collect();
            sim.states()
                .iter()
                .map(|s| {
                    s.dual
                        .iter()
                        .zip(&mean)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(0.0, f64::max)
        };
        let initial = gap(&sim);
        assert!(initial > 1e-9, "duals should disagree before gossip");
        // empty feature vectors give hinge subgradient zero: pure gossip
        let mut id = 100;
        let mut last = initial;
        for _ in 0..40 {
            let batch: Vec<LabeledExample> = (0..4)
                .map(|_| {
                    id += 1;
                    example(id, &[], 1)
                })
                .collect();
            sim.run_round(&batch).unwrap();
            let now = gap(&sim);
            assert!(now <= last + 1e-15, "gap must contract: {now} > {last}");
            last = now;
        }
        assert!(last < initial * 1e-6, "geometric decay expected, got {last}");
    }

    #[test]
    fn update_order_is_immaterial() {
        let graph = build_graph(TopologyKind::Random { p: 0.6, seed: 2 }, 5).unwrap();
        let matrix = metropolis_weights(&graph);
        let model = SyntheticModel::new(8, 3, 4, 0.1, 6).unwrap();
        let stream = generate_stream(&model, 40, 10);
        let make = || {
            Simulation::new(
                matrix.clone(),
                schedule(0.07, 0.3, 5),
                PrivacyParams::enabled(0.5, 1.0, 8, 0.07).unwrap(),
                8,
                77,
                false,
                false,
            )
            .unwrap()
        };
        let mut forward = make();
        let mut shuffled = make();
        let orders = [
            vec![4, 2, 0, 3, 1],
            vec![1, 3, 0, 2, 4],
            vec![2, 4, 1, 0, 3],
            vec![0, 1, 2, 3, 4],
        ];
        for t in 0..4 {
            let batch = &stream[t * 5..(t + 1) * 5];
            let a = forward.run_round(batch).unwrap();
            let b = shuffled.run_round_ordered(batch, &orders[t]).unwrap();
            assert_eq!(a, b);
        }
        for (x, y) in forward.states().iter().zip(shuffled.states()) {
            assert_eq!(x.dual, y.dual);
        }
    }

    #[test]
    fn run_is_deterministic() {
        let graph = build_graph(TopologyKind::Ring, 4).unwrap();
        let spec = RunSpec {
            matrix: metropolis_weights(&graph),
            schedule: schedule(0.05, 0.2, 4),
            privacy: PrivacyParams::enabled(1.0, 1.0, 6, 0.05).unwrap(),
            dimension: 6,
            rounds: 25,
            master_seed: 31,
            retain_trace: false,
            clip_primal: false,
        };
        let model = SyntheticModel::new(6, 2, 3, 0.05, 2).unwrap();
        let stream = generate_stream(&model, 100, 5);
        let a = run_experiment(&spec, &stream).unwrap();
        let b = run_experiment(&spec, &stream).unwrap();
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn empty_horizon_gives_no_records() {
        let graph = build_graph(TopologyKind::Ring, 4).unwrap();
        let spec = RunSpec {
            matrix: metropolis_weights(&graph),
            schedule: schedule(0.05, 0.0, 4),
            privacy: PrivacyParams::disabled(),
            dimension: 4,
            rounds: 0,
            master_seed: 0,
            retain_trace: false,
            clip_primal: false,
        };
        let out = run_experiment(&spec, &[]).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.ledger.rounds(), 0);
    }

    #[test]
    fn stream_exhaustion_is_reported() {
        let graph = build_graph(TopologyKind::Ring, 4).unwrap();
        let spec = RunSpec {
            matrix: metropolis_weights(&graph),
            schedule: schedule(0.05, 0.0, 4),
            privacy: PrivacyParams::disabled(),
            dimension: 4,
            rounds: 10,
            master_seed: 0,
            retain_trace: false,
            clip_primal: false,
        };
        let model = SyntheticModel::new(4, 2, 2, 0.0, 1).unwrap();
        let stream = generate_stream(&model, 12, 3);
        assert!(matches!(
            run_experiment(&spec, &stream),
            Err(SimulatorError::StreamExhausted { needed: 40, available: 12 })
        ));
    }

    #[test]
    fn duplicate_examples_violate_disjointness() {
        let mut sim = Simulation::new(
            single_node_matrix(),
            schedule(0.1, 0.0, 1),
            PrivacyParams::disabled(),
            2,
            0,
            false,
            false,
        )
        .unwrap();
        let ex = example(7, &[(0, 1.0)], 1);
        sim.run_round(std::slice::from_ref(&ex)).unwrap();
        assert!(matches!(
            sim.run_round(std::slice::from_ref(&ex)),
            Err(SimulatorError::Privacy(PrivacyError::DuplicateExample(7)))
        ));
    }

    #[test]
    fn average_dynamics_holds_with_metropolis_weights() {
        let graph = build_graph(TopologyKind::Random { p: 0.5, seed: 9 }, 6).unwrap();
        let spec = RunSpec {
            matrix: metropolis_weights(&graph),
            schedule: schedule(0.04, 0.3, 6),
            privacy: PrivacyParams::enabled(0.5, 1.0, 5, 0.04).unwrap(),
            dimension: 5,
            rounds: 50,
            master_seed: 13,
            retain_trace: true,
            clip_primal: false,
        };
        let model = SyntheticModel::new(5, 2, 3, 0.1, 4).unwrap();
        let stream = generate_stream(&model, 300, 6);
        let out = run_experiment(&spec, &stream).unwrap();
        average_dynamics_check(out.trace.as_ref()).unwrap();
    }

    #[test]
    fn average_dynamics_detects_row_stochastic_only_matrix() {
        // Row sums are 1 but columns are not: the averaged recursion breaks
        // once the nodes' duals (and so the broadcasts) disagree.
        let entries = vec![0.9, 0.1, 0.5, 0.5];
        let matrix = MixingMatrix::from_entries(2, entries).unwrap();
        let mut sim = Simulation::new(
            matrix,
            schedule(0.1, 0.0, 2),
            PrivacyParams::disabled(),
            2,
            3,
            true,
            false,
        )
        .unwrap();
        for t in 0..3u64 {
            // orthogonal features so the two nodes take different steps
            let batch = [
                example(2 * t, &[(0, 1.0)], 1),
                example(2 * t + 1, &[(1, 1.0)], 1),
            ];
            sim.run_round(&batch).unwrap();
        }
        let (_, trace) = sim.into_parts();
        assert!(matches!(
            average_dynamics_check(trace.as_ref()),
            Err(SimulatorError::AverageDynamics { round: 2, .. })
        ));
    }

    #[test]
    fn single_node_average_dynamics_equals_node_recursion() {
        let spec = RunSpec {
            matrix: single_node_matrix(),
            schedule: schedule(0.1, 0.0, 1),
            privacy: PrivacyParams::disabled(),
            dimension: 3,
            rounds: 10,
            master_seed: 1,
            retain_trace: true,
            clip_primal: false,
        };
        let model = SyntheticModel::new(3, 1, 2, 0.0, 9).unwrap();
        let stream = generate_stream(&model, 10, 2);
        let out = run_experiment(&spec, &stream).unwrap();
        average_dynamics_check(out.trace.as_ref()).unwrap();
        assert!(matches!(
            average_dynamics_check(None),
            Err(SimulatorError::TraceMissing)
        ));
    }

    #[test]
    fn lemma_one_bound_dominates_adjacent_round_replays() {
        // Replay full rounds with one example swapped; the realized L1
        // distance of any node's next dual never exceeds 2 alpha sqrt(n) L.
        let n = 4;
        let alpha = 0.08;
        let bound = 2.0 * alpha * (n as f64).sqrt();
        let graph = build_graph(TopologyKind::Ring, 4).unwrap();
        let matrix = metropolis_weights(&graph);
        let model = SyntheticModel::new(n, 2, 3, 0.2, 11).unwrap();
        let stream = generate_stream(&model, 80, 12);
        let swaps = generate_stream(&model, 20, 99);
        for (k, swap) in swaps.iter().enumerate() {
            let round = k % 20;
            let node = k % 4;
            let run = |alternate: Option<(usize, usize, &LabeledExample)>| {
                let mut sim = Simulation::new(
                    matrix.clone(),
                    schedule(alpha, 0.1, 4),
                    PrivacyParams::enabled(0.5, 1.0, n, alpha).unwrap(),
                    n,
                    55,
                    false,
                    false,
                )
                .unwrap();
                for t in 0..=round {
                    let mut batch: Vec<LabeledExample> = stream[t * 4..(t + 1) * 4].to_vec();
                    if let Some((r, i, ex)) = alternate {
                        if r == t {
                            batch[i] = LabeledExample {
                                id: batch[i].id,
                                features: ex.features.clone(),
                                label: ex.label,
                            };
                        }
                    }
                    sim.run_round(&batch).unwrap();
                }
                sim.states().iter().map(|s| s.dual.clone()).collect::<Vec<_>>()
            };
            let base = run(None);
            let swapped = run(Some((round, node, swap)));
            for (a, b) in base.iter().zip(&swapped) {
                let l1: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
                assert!(l1 <= bound + 1e-12, "realized {l1} exceeds bound {bound}");
            }
        }
    }
}
