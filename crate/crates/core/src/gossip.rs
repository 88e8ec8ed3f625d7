//! Simulated decentralized execution: one agent per block, factor state
//! exchanged only through messages.
//!
//! A structure update is driven by its pivot's agent as pull-compute-push:
//! the pivot requests its two neighbors' factors, receives them, computes
//! the structure gradient locally, applies its own update, and pushes the
//! neighbors' updated factors back. Exactly six messages per execution.
//!
//! Parallelism is modeled as synchronous rounds of block-disjoint batches;
//! structures that share no block could run concurrently, so a round is a
//! conflict-free set executed back to back. A single-threaded event loop
//! realizes the same contract deterministically.

use std::collections::{BTreeMap, VecDeque};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{enumerate_structures, sample_structure, BlockId, Structure};
use crate::objective::{
    structure_gradient_parts, training_cost, BlockData, FactorPair, FactorState,
    SparseBlockMatrix,
};
use crate::trainer::{
    divergence_check, step_size, ConvergenceTracker, TrainConfig, TrainReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageKind {
    FactorRequest,
    FactorResponse,
    FactorPush,
}

/// A factor-exchange message between edge-adjacent agents.
#[derive(Debug, Clone)]
pub struct GossipMessage {
    pub kind: MessageKind,
    pub from: BlockId,
    pub to: BlockId,
    pub payload_u: Option<Array2<f64>>,
    pub payload_w: Option<Array2<f64>>,
    pub round: u64,
}

impl GossipMessage {
    fn payload_scalars(&self) -> usize {
        self.payload_u.as_ref().map_or(0, |m| m.len())
            + self.payload_w.as_ref().map_or(0, |m| m.len())
    }
}

/// One block's agent: owns its data shard and factor pair; mutates only
/// its own pair.
#[derive(Debug)]
pub struct Agent {
    owns: BlockId,
    data: BlockData,
    pair: FactorPair,
    inbox: VecDeque<GossipMessage>,
}

impl Agent {
    pub fn owns(&self) -> BlockId {
        self.owns
    }

    pub fn pair(&self) -> &FactorPair {
        &self.pair
    }
}

/// Message and round accounting for a simulation run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimStats {
    pub messages_sent: u64,
    /// Payload scalars times eight bytes.
    pub bytes_sent: u64,
    pub rounds: u64,
    /// Histogram: structures executed in a round -> number of such rounds.
    pub batches_per_round: BTreeMap<usize, u64>,
    pub requests_sent: u64,
    pub responses_sent: u64,
    pub pushes_sent: u64,
}

/// How structures are picked each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// One uniformly sampled structure per round; reproduces the
    /// sequential trainer's trajectory bit for bit on a shared seed.
    Sequential,
    /// A greedy maximal block-disjoint batch per round.
    Batched,
}

/// Greedily build a block-disjoint batch: scan a seeded random permutation
/// and accept every structure that conflicts with none accepted so far.
pub fn select_non_overlapping_batch<R: Rng + ?Sized>(
    structures: &[Structure],
    rng: &mut R,
) -> Vec<Structure> {
    let mut order: Vec<usize> = (0..structures.len()).collect();
    order.shuffle(rng);
    let mut batch: Vec<Structure> = Vec::new();
    for idx in order {
        let s = structures[idx];
        if batch.iter().all(|t| t.is_disjoint(&s)) {
            batch.push(s);
        }
    }
    batch
}

struct GossipWorld<'d> {
    data: &'d SparseBlockMatrix,
    rank: usize,
    agents: Vec<Agent>,
    stats: SimStats,
    round: u64,
    norm: crate::grid::NormalizationTable,
}

impl<'d> GossipWorld<'d> {
    fn new(data: &'d SparseBlockMatrix, init: &FactorState) -> GossipWorld<'d> {
        let grid = data.grid();
        let agents = grid
            .blocks()
            .map(|id| Agent {
                owns: id,
                data: data.block(id).clone(),
                pair: init.pair(id).clone(),
                inbox: VecDeque::new(),
            })
            .collect();
        GossipWorld {
            data,
            rank: init.rank(),
            agents,
            stats: SimStats::default(),
            round: 0,
            norm: crate::grid::compute_normalization(grid),
        }
    }

    fn index(&self, id: BlockId) -> usize {
        self.data.grid().block_index(id)
    }

    /// Route a message, enforcing adjacency and round freshness.
    fn send(&mut self, msg: GossipMessage) -> Result<()> {
        if msg.from != msg.to && !msg.from.is_adjacent(&msg.to) {
            return Err(Error::Protocol(format!(
                "message from {} to non-adjacent {}",
                msg.from, msg.to
            )));
        }
        if msg.round != self.round {
            return Err(Error::Protocol(format!(
                "stale round {} in message from {} (current round {})",
                msg.round, msg.from, self.round
            )));
        }
        self.stats.messages_sent += 1;
        self.stats.bytes_sent += 8 * msg.payload_scalars() as u64;
        match msg.kind {
            MessageKind::FactorRequest => self.stats.requests_sent += 1,
            MessageKind::FactorResponse => self.stats.responses_sent += 1,
            MessageKind::FactorPush => self.stats.pushes_sent += 1,
        }
        let to = self.index(msg.to);
        self.agents[to].inbox.push_back(msg);
        Ok(())
    }

    /// Let one agent drain its inbox: answer requests with its current
    /// factors, adopt pushed factors. Only the owner ever writes its pair.
    fn process_inbox(&mut self, id: BlockId) -> Result<()> {
        let idx = self.index(id);
        while let Some(msg) = self.agents[idx].inbox.pop_front() {
            if msg.to != self.agents[idx].owns {
                return Err(Error::Protocol(format!(
                    "message addressed to {} delivered to {}",
                    msg.to, self.agents[idx].owns
                )));
            }
            match msg.kind {
                MessageKind::FactorRequest => {
                    let reply = GossipMessage {
                        kind: MessageKind::FactorResponse,
                        from: id,
                        to: msg.from,
                        payload_u: Some(self.agents[idx].pair.u.clone()),
                        payload_w: Some(self.agents[idx].pair.w.clone()),
                        round: msg.round,
                    };
                    self.send(reply)?;
                }
                MessageKind::FactorPush => {
                    let u = msg
                        .payload_u
                        .ok_or_else(|| Error::Protocol("push without U payload".into()))?;
                    let w = msg
                        .payload_w
                        .ok_or_else(|| Error::Protocol("push without W payload".into()))?;
                    let own = &mut self.agents[idx].pair;
                    if u.dim() != own.u.dim() || w.dim() != own.w.dim() {
                        return Err(Error::Protocol(format!(
                            "push to {} carries factors of the wrong shape",
                            msg.to
                        )));
                    }
                    own.u = u;
                    own.w = w;
                }
                MessageKind::FactorResponse => {
                    return Err(Error::Protocol(format!(
                        "unexpected factor response at {} (only the requesting pivot consumes responses)",
                        msg.to
                    )));
                }
            }
        }
        Ok(())
    }

    /// Run the six-message pull-compute-push protocol for one structure.
    /// Update arithmetic is bit-identical to the sequential trainer's.
    fn execute_structure(&mut self, s: &Structure, config: &TrainConfig, t: u64) -> Result<()> {
        let ids = *s.members();
        let pivot = ids[0];
        let round = self.round;
        for nb in [ids[1], ids[2]] {
            self.send(GossipMessage {
                kind: MessageKind::FactorRequest,
                from: pivot,
                to: nb,
                payload_u: None,
                payload_w: None,
                round,
            })?;
        }
        for nb in [ids[1], ids[2]] {
            self.process_inbox(nb)?;
        }

        let pivot_idx = self.index(pivot);
        let mut responses: Vec<GossipMessage> = self.agents[pivot_idx].inbox.drain(..).collect();
        if responses.len() != 2 {
            return Err(Error::Protocol(format!(
                "pivot {pivot} expected 2 responses, found {}",
                responses.len()
            )));
        }
        let mut neighbor_pair = |want: BlockId| -> Result<FactorPair> {
            let pos = responses
                .iter()
                .position(|m| m.kind == MessageKind::FactorResponse && m.from == want)
                .ok_or_else(|| {
                    Error::Protocol(format!("missing factor response from {want} at {pivot}"))
                })?;
            let msg = responses.swap_remove(pos);
            if msg.round != round {
                return Err(Error::Protocol(format!("stale response from {want}")));
            }
            Ok(FactorPair {
                u: msg
                    .payload_u
                    .ok_or_else(|| Error::Protocol("response without U payload".into()))?,
                w: msg
                    .payload_w
                    .ok_or_else(|| Error::Protocol("response without W payload".into()))?,
            })
        };
        let mut pair1 = neighbor_pair(ids[1])?;
        let mut pair2 = neighbor_pair(ids[2])?;

        let gamma = step_size(t, config.a, config.b);
        let grad = {
            let members = [
                (
                    &self.agents[pivot_idx].data,
                    &self.agents[pivot_idx].pair,
                ),
                (&self.agents[self.index(ids[1])].data, &pair1),
                (&self.agents[self.index(ids[2])].data, &pair2),
            ];
            structure_gradient_parts(s, members, config.rho, config.lambda, &self.norm)
        };

        let finite = |ok: bool, block: BlockId| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::NonFiniteGradient {
                    iteration: t,
                    block,
                })
            }
        };
        let ok = self.agents[pivot_idx]
            .pair
            .apply_step(&grad.members[0].u, &grad.members[0].w, gamma);
        finite(ok, pivot)?;
        finite(pair1.apply_step(&grad.members[1].u, &grad.members[1].w, gamma), ids[1])?;
        finite(pair2.apply_step(&grad.members[2].u, &grad.members[2].w, gamma), ids[2])?;

        for (nb, pair) in [(ids[1], pair1), (ids[2], pair2)] {
            self.send(GossipMessage {
                kind: MessageKind::FactorPush,
                from: pivot,
                to: nb,
                payload_u: Some(pair.u),
                payload_w: Some(pair.w),
                round,
            })?;
        }
        for nb in [ids[1], ids[2]] {
            self.process_inbox(nb)?;
        }
        Ok(())
    }

    /// Immutable copy of all factors, for evaluation by an outside
    /// observer.
    fn snapshot(&self) -> FactorState {
        let grid = self.data.grid().clone();
        let factors = self.agents.iter().map(|a| a.pair.clone()).collect();
        FactorState::new(grid, self.rank, factors).expect("agent factors stay consistent")
    }
}

/// Decentralized training run. With `Schedule::Sequential` and the same
/// config this produces the sequential trainer's exact factor trajectory;
/// with `Schedule::Batched` each round executes a block-disjoint batch.
pub fn run_gossip(
    data: &SparseBlockMatrix,
    config: &TrainConfig,
    schedule: Schedule,
) -> Result<(TrainReport, SimStats)> {
    run_gossip_with_observer(data, config, schedule, |_, _, _, _| {})
}

pub fn run_gossip_with_observer(
    data: &SparseBlockMatrix,
    config: &TrainConfig,
    schedule: Schedule,
    mut observer: impl FnMut(u64, f64, &FactorState, &SimStats),
) -> Result<(TrainReport, SimStats)> {
    config.validate()?;
    let grid = data.grid();
    if grid.p() != config.p || grid.q() != config.q {
        return Err(Error::InvalidConfig {
            field: "p/q",
            reason: format!(
                "data partitioned {}x{} but config asks {}x{}",
                grid.p(),
                grid.q(),
                config.p,
                config.q
            ),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = crate::trainer::init_factors(grid, config.rank, config.init_scale, &mut rng);
    let structures = enumerate_structures(grid);
    let mut world = GossipWorld::new(data, &init);
    drop(init);

    let snap = world.snapshot();
    let initial_cost = training_cost(&snap, data, config.lambda);
    let mut trace = vec![(0u64, initial_cost)];
    observer(0, initial_cost, &snap, &world.stats);
    let mut tracker = ConvergenceTracker::new(config.tol, initial_cost);
    let mut converged = false;
    let mut t = 0u64;

    while t < config.max_iters && !converged {
        let batch = match schedule {
            Schedule::Sequential => vec![sample_structure(grid, &mut rng)],
            Schedule::Batched => select_non_overlapping_batch(&structures, &mut rng),
        };
        for (k, a) in batch.iter().enumerate() {
            for b in &batch[k + 1..] {
                assert!(a.is_disjoint(b), "scheduler produced overlapping batch: {a} vs {b}");
            }
        }
        world.stats.rounds += 1;
        let mut executed = 0usize;
        for s in &batch {
            world.execute_structure(s, config, t)?;
            t += 1;
            executed += 1;
            if t % config.eval_every == 0 {
                let snap = world.snapshot();
                let cost = training_cost(&snap, data, config.lambda);
                trace.push((t, cost));
                observer(t, cost, &snap, &world.stats);
                divergence_check(t, cost, initial_cost)?;
                if tracker.observe(cost) {
                    converged = true;
                    break;
                }
            }
            if t == config.max_iters {
                break;
            }
        }
        *world.stats.batches_per_round.entry(executed).or_insert(0) += 1;
        world.round += 1;
    }

    let report = TrainReport {
        iterations: t,
        converged,
        cost_trace: trace,
        final_state: world.snapshot(),
    };
    Ok((report, world.stats))
}
