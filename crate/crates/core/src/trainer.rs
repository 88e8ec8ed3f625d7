//! Sequential training loop: sample a structure, take one SGD step on its
//! three blocks, repeat until the cost trace settles.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{sample_structure, GridSpec, Structure};
use crate::objective::{
    structure_gradient, training_cost, FactorPair, FactorState, SparseBlockMatrix,
};

/// Relative-change floor in the convergence test.
pub const CONVERGENCE_EPS: f64 = 1e-12;
/// Consecutive below-tolerance evaluations required to declare convergence.
pub const CONVERGENCE_STREAK: u32 = 3;
/// A run is declared divergent when the cost exceeds this multiple of the
/// initial cost.
pub const DIVERGENCE_FACTOR: f64 = 1e3;

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Consensus weight rho.
    pub rho: f64,
    /// Regularization weight lambda.
    pub lambda: f64,
    /// Factorization rank r.
    pub rank: usize,
    /// Grid rows.
    pub p: usize,
    /// Grid columns.
    pub q: usize,
    /// Step-size numerator: gamma_t = a / (1 + b*t).
    pub a: f64,
    /// Step-size decay scalar.
    pub b: f64,
    /// Hard cap on structure updates.
    pub max_iters: u64,
    /// Evaluate the training cost every this many updates.
    pub eval_every: u64,
    /// Relative-change convergence tolerance.
    pub tol: f64,
    /// Seed for initialization and structure sampling.
    pub seed: u64,
    /// Factors initialize i.i.d. uniform on [-init_scale, init_scale].
    pub init_scale: f64,
}

/// Default initialization half-width, 1/sqrt(rank): keeps initial
/// predictions O(1).
pub fn default_init_scale(rank: usize) -> f64 {
    1.0 / (rank as f64).sqrt()
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rho: 1e3,
            lambda: 1e-9,
            rank: 5,
            p: 4,
            q: 4,
            a: 5.0e-4,
            b: 5.0e-7,
            max_iters: 240_000,
            eval_every: 1000,
            tol: 1e-6,
            seed: 42,
            init_scale: default_init_scale(5),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, field: &'static str, reason: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidConfig {
                    field,
                    reason: reason.into(),
                })
            }
        }
        check(self.rho >= 0.0, "rho", "must be >= 0")?;
        check(self.lambda >= 0.0, "lambda", "must be >= 0")?;
        check(self.rank >= 1, "rank", "must be >= 1")?;
        check(self.p >= 2, "p", "must be >= 2")?;
        check(self.q >= 2, "q", "must be >= 2")?;
        check(self.a > 0.0 && self.a.is_finite(), "a", "must be > 0")?;
        check(self.b >= 0.0 && self.b.is_finite(), "b", "must be >= 0")?;
        check(self.max_iters >= 1, "max_iters", "must be >= 1")?;
        check(self.eval_every >= 1, "eval_every", "must be >= 1")?;
        check(self.tol > 0.0, "tol", "must be > 0")?;
        check(self.init_scale > 0.0, "init_scale", "must be > 0")?;
        Ok(())
    }
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Structure updates performed.
    pub iterations: u64,
    /// Whether the convergence test fired before max_iters.
    pub converged: bool,
    /// (iteration, training cost) at iteration 0 and every eval_every.
    pub cost_trace: Vec<(u64, f64)>,
    pub final_state: FactorState,
}

/// Step size gamma_t = a / (1 + b*t), t counting structure updates from 0.
pub fn step_size(t: u64, a: f64, b: f64) -> f64 {
    a / (1.0 + b * t as f64)
}

/// Fresh factors with every entry drawn i.i.d. uniform on
/// [-init_scale, init_scale]. Deterministic in rng state: blocks are
/// filled row-major, U before W, entries row-major.
pub fn init_factors<R: Rng + ?Sized>(
    grid: &GridSpec,
    rank: usize,
    init_scale: f64,
    rng: &mut R,
) -> FactorState {
    let sample = |count: usize, rng: &mut R| -> Vec<f64> {
        if init_scale == 0.0 {
            vec![0.0; count]
        } else {
            (0..count)
                .map(|_| rng.gen_range(-init_scale..=init_scale))
                .collect()
        }
    };
    let factors = grid
        .blocks()
        .map(|id| {
            let rows = grid.block_rows(id.i);
            let cols = grid.block_cols(id.j);
            let u = Array2::from_shape_vec((rows, rank), sample(rows * rank, rng)).unwrap();
            let w = Array2::from_shape_vec((cols, rank), sample(cols * rank, rng)).unwrap();
            FactorPair { u, w }
        })
        .collect();
    FactorState::new(grid.clone(), rank, factors).expect("shapes follow the grid")
}

/// One SGD step on the sampled structure: each member block moves by
/// -gamma_t times its gradient; all other blocks are untouched.
pub fn update_through_sgd(
    state: &mut FactorState,
    s: &Structure,
    data: &SparseBlockMatrix,
    config: &TrainConfig,
    t: u64,
) -> Result<()> {
    let norm = crate::grid::compute_normalization(state.grid());
    update_with_norm(state, s, data, config, &norm, t)
}

/// Same as `update_through_sgd` with the normalization table precomputed;
/// the training loop reuses the table across iterations.
pub fn update_with_norm(
    state: &mut FactorState,
    s: &Structure,
    data: &SparseBlockMatrix,
    config: &TrainConfig,
    norm: &crate::grid::NormalizationTable,
    t: u64,
) -> Result<()> {
    let gamma = step_size(t, config.a, config.b);
    let grad = structure_gradient(s, state, data, config.rho, config.lambda, norm);
    for m in &grad.members {
        if !state.pair_mut(m.id).apply_step(&m.u, &m.w, gamma) {
            return Err(Error::NonFiniteGradient {
                iteration: t,
                block: m.id,
            });
        }
    }
    Ok(())
}

/// Relative-change convergence detector over periodic cost evaluations.
#[derive(Debug, Clone)]
pub(crate) struct ConvergenceTracker {
    tol: f64,
    prev: f64,
    streak: u32,
}

impl ConvergenceTracker {
    pub(crate) fn new(tol: f64, initial_cost: f64) -> Self {
        ConvergenceTracker {
            tol,
            prev: initial_cost,
            streak: 0,
        }
    }

    /// Feed the next evaluation; true once the relative change has stayed
    /// below tol for CONVERGENCE_STREAK consecutive evaluations.
    pub(crate) fn observe(&mut self, cost: f64) -> bool {
        let rel = (self.prev - cost).abs() / self.prev.max(CONVERGENCE_EPS);
        if rel < self.tol {
            self.streak += 1;
        } else {
            self.streak = 0;
        }
        self.prev = cost;
        self.streak >= CONVERGENCE_STREAK
    }
}

pub(crate) fn divergence_check(iteration: u64, cost: f64, initial_cost: f64) -> Result<()> {
    let limit = DIVERGENCE_FACTOR * initial_cost;
    if !cost.is_finite() || cost > limit {
        return Err(Error::Diverged {
            iteration,
            cost,
            limit,
        });
    }
    Ok(())
}

/// Run the full training loop. Deterministic in (data, config): equal
/// inputs give bitwise-equal reports.
pub fn train(data: &SparseBlockMatrix, config: &TrainConfig) -> Result<TrainReport> {
    train_with_observer(data, config, |_, _, _| {})
}

/// Training loop with a cost observer called at iteration 0 and after
/// every eval_every updates; the observer sees the current factor state
/// and may not mutate it.
pub fn train_with_observer(
    data: &SparseBlockMatrix,
    config: &TrainConfig,
    mut observer: impl FnMut(u64, f64, &FactorState),
) -> Result<TrainReport> {
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
    let norm = crate::grid::compute_normalization(grid);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = init_factors(grid, config.rank, config.init_scale, &mut rng);

    let initial_cost = training_cost(&state, data, config.lambda);
    let mut trace = vec![(0u64, initial_cost)];
    observer(0, initial_cost, &state);
    let mut tracker = ConvergenceTracker::new(config.tol, initial_cost);
    let mut converged = false;
    let mut iterations = 0u64;

    for t in 0..config.max_iters {
        let s = sample_structure(grid, &mut rng);
        update_with_norm(&mut state, &s, data, config, &norm, t)?;
        iterations = t + 1;
        if iterations % config.eval_every == 0 {
            let cost = training_cost(&state, data, config.lambda);
            trace.push((iterations, cost));
            observer(iterations, cost, &state);
            divergence_check(iterations, cost, initial_cost)?;
            if tracker.observe(cost) {
                converged = true;
                break;
            }
        }
    }

    Ok(TrainReport {
        iterations,
        converged,
        cost_trace: trace,
        final_state: state,
    })
}

/// Combine per-block factors into global factors: the U blocks of a grid
/// row are averaged entrywise and stacked (m×r), likewise the W blocks of
/// each grid column (n×r).
pub fn assemble_global_factors(state: &FactorState) -> (Array2<f64>, Array2<f64>) {
    let grid = state.grid();
    let r = state.rank();
    let mut u = Array2::zeros((grid.m(), r));
    for i in 1..=grid.p() {
        let mut acc = Array2::zeros((grid.block_rows(i), r));
        for j in 1..=grid.q() {
            acc += &state.pair(crate::grid::BlockId::new(i, j)).u;
        }
        acc /= grid.q() as f64;
        u.slice_mut(ndarray::s![grid.row_range(i), ..]).assign(&acc);
    }
    let mut w = Array2::zeros((grid.n(), r));
    for j in 1..=grid.q() {
        let mut acc = Array2::zeros((grid.block_cols(j), r));
        for i in 1..=grid.p() {
            acc += &state.pair(crate::grid::BlockId::new(i, j)).w;
        }
        acc /= grid.p() as f64;
        w.slice_mut(ndarray::s![grid.col_range(j), ..]).assign(&acc);
    }
    (u, w)
}

/// Predicted rating: dot product of U's row `row` with W's row `col`.
pub fn predict(u: &Array2<f64>, w: &Array2<f64>, row: usize, col: usize) -> f64 {
    crate::objective::row_dot(
        u.row(row).to_slice().expect("U row contiguous"),
        w.row(col).to_slice().expect("W row contiguous"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{compute_normalization, BlockId, StructureKind};
    use crate::objective::{structure_cost, structure_objective};
    use ndarray::array;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            rank: 1,
            p: 2,
            q: 2,
            max_iters: 10,
            eval_every: 1,
            ..TrainConfig::default()
        }
    }

    fn small_data(grid: &GridSpec, seed: u64) -> SparseBlockMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut triples = Vec::new();
        for row in 0..grid.m() {
            for col in 0..grid.n() {
                if rng.gen_bool(0.5) {
                    triples.push((row, col, rng.gen_range(-1.0..1.0)));
                }
            }
        }
        SparseBlockMatrix::from_triples(grid.clone(), triples).unwrap()
    }

    #[test]
    fn step_size_follows_the_schedule() {
        assert_eq!(step_size(0, 0.25, 0.5), 0.25);
        assert_eq!(step_size(2_000_000, 5.0e-4, 5.0e-7), 2.5e-4);
        for t in [0, 1, 10, 1_000_000] {
            assert_eq!(step_size(t, 0.1, 0.0), 0.1);
        }
    }

    #[test]
    fn init_factors_zero_scale_gives_zero_factors() {
        let grid = GridSpec::new(6, 6, 2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let state = init_factors(&grid, 2, 0.0, &mut rng);
        for id in grid.blocks() {
            assert!(state.pair(id).u.iter().all(|&x| x == 0.0));
            assert!(state.pair(id).w.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn init_factors_is_seed_deterministic_and_bounded() {
        let grid = GridSpec::new(500, 500, 4, 4).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let sa = init_factors(&grid, 5, 0.3, &mut a);
        let sb = init_factors(&grid, 5, 0.3, &mut b);
        assert!(sa.bits_eq(&sb));
        for id in grid.blocks() {
            assert_eq!(sa.pair(id).u.dim(), (125, 5));
            assert_eq!(sa.pair(id).w.dim(), (125, 5));
            assert!(sa.pair(id).u.iter().all(|&x| x.abs() <= 0.3));
        }
    }

    #[test]
    fn update_at_a_minimum_leaves_state_unchanged() {
        // All data zero, all factors zero: gradient is exactly zero.
        let grid = GridSpec::new(4, 4, 2, 2).unwrap();
        let data = SparseBlockMatrix::from_triples(grid.clone(), vec![(0, 0, 0.0)]).unwrap();
        let mut state = FactorState::zeros(grid.clone(), 1);
        let before = state.clone();
        let s = crate::grid::enumerate_structures(&grid)[0];
        let cfg = tiny_config();
        update_through_sgd(&mut state, &s, &data, &cfg, 0).unwrap();
        assert!(state.bits_eq(&before));
    }

    #[test]
    fn zero_step_size_leaves_values_unchanged() {
        let grid = GridSpec::new(4, 4, 2, 2).unwrap();
        let data = small_data(&grid, 3);
        let norm = compute_normalization(&grid);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut state = init_factors(&grid, 1, 0.5, &mut rng);
        let before = state.clone();
        let s = crate::grid::enumerate_structures(&grid)[1];
        let grad = structure_gradient(&s, &state, &data, 1.0, 0.1, &norm);
        for m in &grad.members {
            assert!(state.pair_mut(m.id).apply_step(&m.u, &m.w, 0.0));
        }
        for id in grid.blocks() {
            assert_eq!(state.pair(id).u, before.pair(id).u);
            assert_eq!(state.pair(id).w, before.pair(id).w);
        }
    }

    #[test]
    fn one_step_matches_scalar_hand_arithmetic() {
        // 2x2 matrix on a 2x2 grid: every block is 1x1 and rank is 1, so
        // the update is plain scalar arithmetic we can redo by hand.
        let grid = GridSpec::new(2, 2, 2, 2).unwrap();
        let x11 = 2.0;
        let x21 = -1.0;
        let x12 = 0.5;
        let data = SparseBlockMatrix::from_triples(
            grid.clone(),
            vec![(0, 0, x11), (1, 0, x21), (0, 1, x12)],
        )
        .unwrap();
        let (u11, w11) = (0.3, -0.2);
        let (u21, w21) = (0.1, 0.4);
        let (u12, w12) = (-0.5, 0.6);
        let (u22, w22) = (0.2, 0.9);
        let mut factors = Vec::new();
        for (u, w) in [(u11, w11), (u12, w12), (u21, w21), (u22, w22)] {
            factors.push(FactorPair {
                u: array![[u]],
                w: array![[w]],
            });
        }
        let mut state = FactorState::new(grid.clone(), 1, factors).unwrap();

        let rho = 2.0;
        let lambda = 0.1;
        let gamma = 0.05;
        let cfg = TrainConfig {
            rho,
            lambda,
            rank: 1,
            p: 2,
            q: 2,
            a: gamma,
            b: 0.0,
            ..TrainConfig::default()
        };
        // Upper(1,1): members (1,1), (2,1), (1,2). All f coefficients on a
        // 2x2 grid: corner pivots 1, shared blocks 1/2; dU/dW pivot
        // coefficients are 1.
        let s = Structure::new(StructureKind::Upper, BlockId::new(1, 1), &grid).unwrap();
        update_through_sgd(&mut state, &s, &data, &cfg, 0).unwrap();

        let c11 = 1.0;
        let c21 = 0.5;
        let c12 = 0.5;
        let e11 = x11 - u11 * w11;
        let e21 = x21 - u21 * w21;
        let e12 = x12 - u12 * w12;
        // Block (1,1): f term, dU vs (1,2), dW vs (2,1), regularizer.
        let g_u11 = -2.0 * c11 * e11 * w11 + 2.0 * rho * (u11 - u12) + 2.0 * lambda * c11 * u11;
        let g_w11 = -2.0 * c11 * e11 * u11 + 2.0 * rho * (w11 - w21) + 2.0 * lambda * c11 * w11;
        // Block (2,1): f term, dW partner of the pivot.
        let g_u21 = -2.0 * c21 * e21 * w21 + 2.0 * lambda * c21 * u21;
        let g_w21 = -2.0 * c21 * e21 * u21 - 2.0 * rho * (w11 - w21) + 2.0 * lambda * c21 * w21;
        // Block (1,2): f term, dU partner of the pivot.
        let g_u12 = -2.0 * c12 * e12 * w12 - 2.0 * rho * (u11 - u12) + 2.0 * lambda * c12 * u12;
        let g_w12 = -2.0 * c12 * e12 * u12 + 2.0 * lambda * c12 * w12;

        let tol = 1e-14;
        assert!((state.pair(BlockId::new(1, 1)).u[[0, 0]] - (u11 - gamma * g_u11)).abs() < tol);
        assert!((state.pair(BlockId::new(1, 1)).w[[0, 0]] - (w11 - gamma * g_w11)).abs() < tol);
        assert!((state.pair(BlockId::new(2, 1)).u[[0, 0]] - (u21 - gamma * g_u21)).abs() < tol);
        assert!((state.pair(BlockId::new(2, 1)).w[[0, 0]] - (w21 - gamma * g_w21)).abs() < tol);
        assert!((state.pair(BlockId::new(1, 2)).u[[0, 0]] - (u12 - gamma * g_u12)).abs() < tol);
        assert!((state.pair(BlockId::new(1, 2)).w[[0, 0]] - (w12 - gamma * g_w12)).abs() < tol);
        // Untouched block.
        assert_eq!(state.pair(BlockId::new(2, 2)).u[[0, 0]], u22);
        assert_eq!(state.pair(BlockId::new(2, 2)).w[[0, 0]], w22);
    }

    #[test]
    fn a_small_step_decreases_the_structure_cost() {
        let grid = GridSpec::new(8, 8, 2, 2).unwrap();
        let norm = compute_normalization(&grid);
        let data = small_data(&grid, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let state = init_factors(&grid, 2, 0.6, &mut rng);
        let s = crate::grid::enumerate_structures(&grid)[0];
        let (rho, lambda) = (1.0, 0.01);
        let before = structure_objective(&s, &state, &data, rho, lambda, &norm);
        let grad = structure_gradient(&s, &state, &data, rho, lambda, &norm);

        // Find any step that decreases the cost, then require that every
        // smaller step in the sweep also decreases it.
        let mut decreasing_at = Vec::new();
        for exp in 2..=8 {
            let gamma = 10f64.powi(-exp);
            let mut trial = state.clone();
            for m in &grad.members {
                trial.pair_mut(m.id).apply_step(&m.u, &m.w, gamma);
            }
            let after = structure_objective(&s, &trial, &data, rho, lambda, &norm);
            decreasing_at.push(after < before);
        }
        let first_ok = decreasing_at.iter().position(|&ok| ok);
        assert!(first_ok.is_some(), "no step size decreased the cost");
        assert!(
            decreasing_at[first_ok.unwrap()..].iter().all(|&ok| ok),
            "descent not monotone below the threshold: {decreasing_at:?}"
        );
        // And the sampled structure cost itself decreases.
        let mut trial = state.clone();
        for m in &grad.members {
            trial.pair_mut(m.id).apply_step(&m.u, &m.w, 1e-4);
        }
        assert!(structure_cost(&s, &trial, &data, rho, &norm) < structure_cost(&s, &state, &data, rho, &norm));
    }

    #[test]
    fn train_runs_exactly_one_update_when_capped() {
        let grid = GridSpec::new(6, 6, 2, 2).unwrap();
        let data = small_data(&grid, 1);
        let cfg = TrainConfig {
            max_iters: 1,
            ..tiny_config()
        };
        let report = train(&data, &cfg).unwrap();
        assert_eq!(report.iterations, 1);
        assert!(!report.converged);
        assert!(TrainConfig { max_iters: 0, ..tiny_config() }.validate().is_err());
    }

    #[test]
    fn train_is_bitwise_deterministic() {
        let grid = GridSpec::new(12, 12, 3, 3).unwrap();
        let data = small_data(&grid, 5);
        let cfg = TrainConfig {
            rank: 2,
            p: 3,
            q: 3,
            max_iters: 200,
            eval_every: 50,
            tol: 1e-30,
            ..TrainConfig::default()
        };
        let a = train(&data, &cfg).unwrap();
        let b = train(&data, &cfg).unwrap();
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.cost_trace.len(), b.cost_trace.len());
        for (x, y) in a.cost_trace.iter().zip(&b.cost_trace) {
            assert_eq!(x.0, y.0);
            assert_eq!(x.1.to_bits(), y.1.to_bits());
        }
        assert!(a.final_state.bits_eq(&b.final_state));
    }

    #[test]
    fn train_cost_trace_iterations_increase() {
        let grid = GridSpec::new(8, 8, 2, 2).unwrap();
        let data = small_data(&grid, 2);
        let cfg = TrainConfig {
            max_iters: 120,
            eval_every: 25,
            tol: 1e-30,
            ..tiny_config()
        };
        let report = train(&data, &cfg).unwrap();
        assert_eq!(report.cost_trace[0].0, 0);
        for w in report.cost_trace.windows(2) {
            assert!(w[0].0 < w[1].0);
        }
        assert!(report.iterations <= cfg.max_iters);
    }

    #[test]
    fn train_rejects_a_grid_mismatched_config() {
        let grid = GridSpec::new(8, 8, 2, 2).unwrap();
        let data = small_data(&grid, 1);
        let cfg = TrainConfig {
            p: 4,
            q: 4,
            ..tiny_config()
        };
        match train(&data, &cfg) {
            Err(Error::InvalidConfig { field, .. }) => assert_eq!(field, "p/q"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn train_aborts_on_divergence() {
        let grid = GridSpec::new(8, 8, 2, 2).unwrap();
        let data = small_data(&grid, 6);
        let cfg = TrainConfig {
            a: 1e4, // absurd step size blows the cost up immediately
            rank: 1,
            p: 2,
            q: 2,
            max_iters: 50,
            eval_every: 1,
            ..TrainConfig::default()
        };
        match train(&data, &cfg) {
            Err(Error::Diverged { .. }) | Err(Error::NonFiniteGradient { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn update_rejects_non_finite_gradients() {
        let grid = GridSpec::new(4, 4, 2, 2).unwrap();
        let data = SparseBlockMatrix::from_triples(grid.clone(), vec![(0, 0, 1.0)]).unwrap();
        let mut state = FactorState::zeros(grid.clone(), 1);
        state.pair_mut(BlockId::new(1, 1)).u[[0, 0]] = f64::INFINITY;
        let s = crate::grid::enumerate_structures(&grid)[0];
        let cfg = tiny_config();
        match update_through_sgd(&mut state, &s, &data, &cfg, 0) {
            Err(Error::NonFiniteGradient { .. }) => {}
            other => panic!("expected non-finite gradient error, got {other:?}"),
        }
    }

    #[test]
    fn convergence_needs_three_consecutive_quiet_evaluations() {
        let mut t = ConvergenceTracker::new(1e-3, 100.0);
        assert!(!t.observe(100.0));
        assert!(!t.observe(100.0));
        assert!(t.observe(100.0));
        let mut t = ConvergenceTracker::new(1e-3, 100.0);
        assert!(!t.observe(100.0));
        assert!(!t.observe(50.0)); // resets the streak
        assert!(!t.observe(50.0));
        assert!(!t.observe(50.0));
        assert!(t.observe(50.0));
    }

    #[test]
    fn assembly_averages_within_rows_and_columns() {
        let grid = GridSpec::new(4, 4, 2, 2).unwrap();
        let mut state = FactorState::zeros(grid.clone(), 1);
        // U blocks of grid row 1: zeros and all-twos -> stacked mean is ones.
        state
            .pair_mut(BlockId::new(1, 2))
            .u
            .assign(&Array2::from_elem((2, 1), 2.0));
        let (u, _) = assemble_global_factors(&state);
        for row in 0..2 {
            assert_eq!(u[[row, 0]], 1.0);
        }
        for row in 2..4 {
            assert_eq!(u[[row, 0]], 0.0);
        }

        // Identical blocks within each grid row stack unchanged.
        let mut state = FactorState::zeros(grid.clone(), 1);
        for id in grid.blocks() {
            state
                .pair_mut(id)
                .u
                .assign(&Array2::from_elem((2, 1), id.i as f64));
        }
        let (u, _) = assemble_global_factors(&state);
        assert_eq!(u[[0, 0]], 1.0);
        assert_eq!(u[[3, 0]], 2.0);
    }

    #[test]
    fn predict_is_a_row_dot_product() {
        let u = array![[2.0], [0.0]];
        let w = array![[3.0], [5.0]];
        assert_eq!(predict(&u, &w, 0, 0), 6.0);
        assert_eq!(predict(&u, &w, 1, 1), 0.0);
        let u = array![[1.0, 2.0]];
        let w = array![[3.0, -1.0]];
        assert_eq!(predict(&u, &w, 0, 0), 1.0);
    }
}
