//! Decentralized low-rank matrix completion over a gossiping block grid.
//!
//! The input matrix is partitioned into a p×q grid; every block learns its
//! own factor pair (U, W) by stochastic gradient steps on randomly sampled
//! three-block structures, with consensus penalties pulling row-adjacent U
//! factors and column-adjacent W factors together. After training, the
//! per-block factors are averaged and stacked into global m×r and n×r
//! factors for rating prediction.
//!
//! Two executors share the same update arithmetic: a sequential in-process
//! trainer ([`trainer::train`]) and a simulated message-passing gossip
//! network ([`gossip::run_gossip`]) in which non-overlapping structures
//! execute in conflict-free rounds.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gossip;
pub mod grid;
pub mod metrics;
pub mod objective;
pub mod trainer;

pub use checkpoint::{Checkpoint, CheckpointBlock};
pub use data::{
    generate_synthetic, load_movielens, read_triples, rmse, train_test_split, write_triples,
    Dataset, IdMap, MovieLensFormat, RatingTriple,
};
pub use error::{Error, Result};
pub use gossip::{
    run_gossip, run_gossip_with_observer, select_non_overlapping_batch, Agent, GossipMessage,
    MessageKind, Schedule, SimStats,
};
pub use grid::{
    compute_normalization, enumerate_structures, sample_structure, BlockId, GridSpec,
    NormalizationTable, Structure, StructureKind,
};
pub use metrics::{MetricsRow, MetricsWriter, METRICS_HEADER};
pub use objective::{
    d_cost_u, d_cost_w, f_cost, global_objective, structure_cost, structure_gradient,
    structure_objective, training_cost, BlockData, BlockGradient, FactorPair, FactorState,
    SparseBlockMatrix, StructureGradient,
};
pub use trainer::{
    assemble_global_factors, default_init_scale, init_factors, predict, step_size, train,
    train_with_observer, update_through_sgd, TrainConfig, TrainReport,
};
