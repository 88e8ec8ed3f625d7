//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with the measured numbers (run with `-- --nocapture`).
//!
//! The MovieLens-1M criterion needs the dataset on disk and is `#[ignore]`d
//! by default; see its doc comment.

use ggmc_core::*;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fixed Exp#1-style synthetic setup: 500x500 rank-5 truth, 20% observed
/// for training, 2% held out.
fn exp1_data() -> (Dataset, SparseBlockMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let (ds, _, _) = generate_synthetic(500, 500, 5, 0.2, 0.02, &mut rng).unwrap();
    let grid = GridSpec::new(500, 500, 4, 4).unwrap();
    let data =
        SparseBlockMatrix::from_triples(grid, ds.train.iter().map(|t| (t.row, t.col, t.value)))
            .unwrap();
    (ds, data)
}

/// Criteria 1 and 6 share one training run: cost reduction of at least six
/// (target seven) orders of magnitude within 240k iterations, monotone
/// trace after the first tenth, and sub-1e-2 factor consensus afterwards.
#[test]
fn criterion_1_and_6_synthetic_convergence_and_consensus() {
    let (_, data) = exp1_data();
    let config = TrainConfig {
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
    };
    let report = train(&data, &config).unwrap();
    let first = report.cost_trace[0].1;
    let lowest = report.cost_trace.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    let orders = (first / lowest).log10();
    assert!(
        orders >= 6.0,
        "cost fell only {orders:.2} orders ({first:e} -> {lowest:e})"
    );
    assert!(orders >= 7.0, "target of 7 orders missed: {orders:.2}");

    // Trace is non-increasing once the first 10% of iterations is past.
    let cutoff = report.iterations / 10;
    let tail: Vec<&(u64, f64)> = report
        .cost_trace
        .iter()
        .filter(|(it, _)| *it >= cutoff)
        .collect();
    for w in tail.windows(2) {
        assert!(
            w[1].1 <= w[0].1,
            "cost rose from {:e} (iter {}) to {:e} (iter {})",
            w[0].1,
            w[0].0,
            w[1].1,
            w[1].0
        );
    }
    println!(
        "acceptance 1 (synthetic convergence): PASS — {orders:.2} orders in {} iterations (first {first:.3e}, lowest {lowest:.3e})",
        report.iterations
    );

    // Criterion 6: relative Frobenius disagreement of same-row U blocks
    // and same-column W blocks of the final state.
    let frob = |m: &Array2<f64>| m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let state = &report.final_state;
    let mut worst: f64 = 0.0;
    for i in 1..=4 {
        for j1 in 1..=4usize {
            for j2 in (j1 + 1)..=4 {
                let a = &state.pair(BlockId::new(i, j1)).u;
                let b = &state.pair(BlockId::new(i, j2)).u;
                worst = worst.max(frob(&(a - b)) / (1.0 + frob(a)));
            }
        }
    }
    for j in 1..=4 {
        for i1 in 1..=4usize {
            for i2 in (i1 + 1)..=4 {
                let a = &state.pair(BlockId::new(i1, j)).w;
                let b = &state.pair(BlockId::new(i2, j)).w;
                worst = worst.max(frob(&(a - b)) / (1.0 + frob(a)));
            }
        }
    }
    assert!(worst < 1e-2, "consensus disagreement {worst:e} >= 1e-2");
    println!("acceptance 6 (post-training consensus): PASS — worst relative disagreement {worst:.3e} < 1e-2");
}

fn movielens_path() -> Option<std::path::PathBuf> {
    if let Ok(p) = std::env::var("GGMC_ML1M") {
        return Some(p.into());
    }
    let workspace = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let fallback = workspace.join("data/ml-1m/ratings.dat");
    fallback.exists().then_some(fallback)
}

fn movielens_rmse(dataset: &Dataset, p: usize, q: usize) -> f64 {
    let grid = GridSpec::new(dataset.m, dataset.n, p, q).unwrap();
    let data = SparseBlockMatrix::from_triples(
        grid,
        dataset.train.iter().map(|t| (t.row, t.col, t.value)),
    )
    .unwrap();
    // The tuned real-data step scalars were not published; these keep the
    // consensus map contracting on rating-scale data (gamma*rho*coeff =
    // 0.2) with the step an order below the fit term's stability bound.
    let config = TrainConfig {
        rho: 1e3,
        lambda: 1e-9,
        rank: 5,
        p,
        q,
        a: 2.0e-4,
        b: 5.0e-7,
        max_iters: 400_000,
        eval_every: 1000,
        tol: 1e-6,
        seed: 42,
        init_scale: default_init_scale(5),
    };
    let report = train(&data, &config).unwrap();
    let (gu, gw) = assemble_global_factors(&report.final_state);
    rmse(&dataset.test, &gu, &gw).unwrap()
}

/// MovieLens-1M: 80/20 split, 2x2 grid, rank 5 must land at RMSE
/// 0.87 +- 0.05, and a 10x10 grid must do worse than the 2x2.
///
/// Needs `ratings.dat` from the MovieLens-1M distribution, which cannot be
/// redistributed with this repository. Point `GGMC_ML1M` at the file (or
/// place it at `data/ml-1m/ratings.dat`) and run
/// `cargo test -p ggmc-core --test acceptance -- --ignored --nocapture`.
#[test]
#[ignore = "requires the MovieLens-1M ratings.dat (set GGMC_ML1M or place it at data/ml-1m/ratings.dat)"]
fn criterion_2_movielens_rmse() {
    let path = movielens_path().expect(
        "MovieLens-1M not found: set GGMC_ML1M=/path/to/ratings.dat or place it at data/ml-1m/ratings.dat",
    );
    let unsplit = load_movielens(&path, MovieLensFormat::Dat).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let dataset = train_test_split(unsplit, 0.2, &mut rng).unwrap();

    let rmse_2x2 = movielens_rmse(&dataset, 2, 2);
    assert!(
        (rmse_2x2 - 0.87).abs() <= 0.05,
        "2x2 rank-5 RMSE {rmse_2x2:.4} outside 0.87 +- 0.05"
    );
    let rmse_10x10 = movielens_rmse(&dataset, 10, 10);
    assert!(
        rmse_10x10 > rmse_2x2,
        "10x10 RMSE {rmse_10x10:.4} not worse than 2x2 {rmse_2x2:.4}"
    );
    println!(
        "acceptance 2 (MovieLens-1M RMSE): PASS — 2x2 {rmse_2x2:.4} (target 0.87 +- 0.05), 10x10 {rmse_10x10:.4}"
    );
}

/// Random small instance: a few observed entries per block plus uniform
/// factors.
fn random_instance(
    grid: &GridSpec,
    rank: usize,
    entries_per_block: usize,
    rng: &mut ChaCha8Rng,
) -> (FactorState, SparseBlockMatrix) {
    let mut triples = Vec::new();
    for id in grid.blocks() {
        let rr = grid.row_range(id.i);
        let cc = grid.col_range(id.j);
        for _ in 0..entries_per_block {
            let cell = (rng.gen_range(rr.clone()), rng.gen_range(cc.clone()));
            if !triples.iter().any(|&(r, c, _)| (r, c) == cell) {
                triples.push((cell.0, cell.1, rng.gen_range(-2.0..2.0)));
            }
        }
    }
    let data = SparseBlockMatrix::from_triples(grid.clone(), triples).unwrap();
    let factors = grid
        .blocks()
        .map(|id| {
            let rows = grid.block_rows(id.i);
            let cols = grid.block_cols(id.j);
            FactorPair {
                u: Array2::from_shape_vec(
                    (rows, rank),
                    (0..rows * rank).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )
                .unwrap(),
                w: Array2::from_shape_vec(
                    (cols, rank),
                    (0..cols * rank).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )
                .unwrap(),
            }
        })
        .collect();
    (FactorState::new(grid.clone(), rank, factors).unwrap(), data)
}

/// Analytic structure gradients must match central finite differences of
/// the structure objective on 100 random instances.
#[test]
fn criterion_3_gradient_matches_finite_differences() {
    let h = 1e-6;
    let mut checked = 0usize;
    let mut worst: f64 = 0.0;
    for instance in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + instance);
        let (p, q) = if instance % 2 == 0 { (2, 2) } else { (3, 3) };
        let rank = 1 + (instance as usize % 3);
        let grid = GridSpec::new(3 * p, 3 * q, p, q).unwrap();
        let norm = compute_normalization(&grid);
        let (state, data) = random_instance(&grid, rank, 4, &mut rng);
        let rho = rng.gen_range(0.1..2.0);
        let lambda = rng.gen_range(0.001..0.1);
        for s in enumerate_structures(&grid) {
            let grad = structure_gradient(&s, &state, &data, rho, lambda, &norm);
            for member in &grad.members {
                for which_u in [true, false] {
                    let analytic = if which_u { &member.u } else { &member.w };
                    for r in 0..analytic.nrows() {
                        for c in 0..analytic.ncols() {
                            let eval = |delta: f64| {
                                let mut st = state.clone();
                                let pair = st.pair_mut(member.id);
                                if which_u {
                                    pair.u[[r, c]] += delta;
                                } else {
                                    pair.w[[r, c]] += delta;
                                }
                                structure_objective(&s, &st, &data, rho, lambda, &norm)
                            };
                            let fd = (eval(h) - eval(-h)) / (2.0 * h);
                            let a = analytic[[r, c]];
                            let scale = a.abs().max(fd.abs());
                            let err = (a - fd).abs();
                            let rel = err / scale.max(1e-2);
                            worst = worst.max(if scale > 1e-2 { err / scale } else { rel });
                            assert!(
                                err <= 1e-5 * scale.max(1e-2),
                                "instance {instance} {s} block {} [{r},{c}]: analytic {a} vs fd {fd}",
                                member.id
                            );
                            checked += 1;
                        }
                    }
                }
            }
        }
    }
    println!(
        "acceptance 3 (gradient oracle): PASS — {checked} coordinates on 100 instances, worst relative error {worst:.2e} < 1e-5"
    );
}

/// Independent brute-force enumeration: scan every pivot and kind against
/// the membership rules directly.
fn brute_force_structures(grid: &GridSpec) -> Vec<Structure> {
    let mut out = Vec::new();
    for kind in [StructureKind::Upper, StructureKind::Lower] {
        for i in 1..=grid.p() {
            for j in 1..=grid.q() {
                let valid = match kind {
                    StructureKind::Upper => i < grid.p() && j < grid.q(),
                    StructureKind::Lower => i >= 2 && j >= 2,
                };
                if valid {
                    out.push(Structure::new(kind, BlockId::new(i, j), grid).unwrap());
                }
            }
        }
    }
    out
}

#[test]
fn criterion_4_enumeration_matches_brute_force() {
    let mut grids = 0;
    for p in 2..=8usize {
        for q in 2..=8usize {
            let grid = GridSpec::new(4 * p, 4 * q, p, q).unwrap();
            let enumerated = enumerate_structures(&grid);
            let brute = brute_force_structures(&grid);
            assert_eq!(enumerated.len(), 2 * (p - 1) * (q - 1), "{p}x{q} count");
            assert_eq!(enumerated, brute, "{p}x{q} sets");
            grids += 1;
        }
    }
    println!("acceptance 4 (structure enumeration oracle): PASS — {grids} grids, count always 2(p-1)(q-1)");
}

#[test]
fn criterion_5_normalization_inverts_membership_counts_exactly() {
    let mut blocks_checked = 0;
    for p in 2..=8usize {
        for q in 2..=8usize {
            let grid = GridSpec::new(4 * p, 4 * q, p, q).unwrap();
            let table = compute_normalization(&grid);
            let brute = brute_force_structures(&grid);
            for b in grid.blocks() {
                let count = brute.iter().filter(|s| s.contains(b)).count();
                assert!(count >= 1);
                assert_eq!(table.f_count(b) as usize, count, "{p}x{q} block {b}");
                // Exact: fCoeff is the float inverse of a count <= 6.
                assert_eq!(table.f_coeff(b) * count as f64, 1.0, "{p}x{q} block {b}");
                blocks_checked += 1;
            }
        }
    }
    println!("acceptance 5 (normalization exactness): PASS — fCoeff x count == 1 for {blocks_checked} blocks");
}

/// Gossip execution with batch size one and a shared seed reproduces the
/// sequential trainer bit for bit, with exact message accounting.
#[test]
fn criterion_7_gossip_reproduces_the_trainer_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let grid = GridSpec::new(60, 60, 3, 3).unwrap();
    let mut triples = Vec::new();
    for row in 0..60 {
        for col in 0..60 {
            if rng.gen_bool(0.4) {
                triples.push((row, col, rng.gen_range(-1.0..1.0)));
            }
        }
    }
    let data = SparseBlockMatrix::from_triples(grid.clone(), triples).unwrap();
    let config = TrainConfig {
        rho: 50.0,
        lambda: 1e-6,
        rank: 2,
        p: 3,
        q: 3,
        a: 2e-3,
        b: 1e-6,
        max_iters: 1000,
        eval_every: 100,
        tol: 1e-30,
        seed: 4242,
        init_scale: default_init_scale(2),
    };

    let mut trainer_states: Vec<FactorState> = Vec::new();
    let sequential = train_with_observer(&data, &config, |_, _, state| {
        trainer_states.push(state.clone());
    })
    .unwrap();

    let mut gossip_states: Vec<FactorState> = Vec::new();
    let (gossip, stats) = run_gossip_with_observer(
        &data,
        &config,
        Schedule::Sequential,
        |_, _, state, _| {
            gossip_states.push(state.clone());
        },
    )
    .unwrap();

    assert_eq!(sequential.iterations, 1000);
    assert_eq!(gossip.iterations, 1000);
    assert_eq!(trainer_states.len(), gossip_states.len());
    for (k, (a, b)) in trainer_states.iter().zip(&gossip_states).enumerate() {
        assert!(a.bits_eq(b), "trajectories diverge at snapshot {k}");
    }
    for (a, b) in sequential.cost_trace.iter().zip(&gossip.cost_trace) {
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.to_bits(), b.1.to_bits());
    }
    assert!(sequential.final_state.bits_eq(&gossip.final_state));
    assert_eq!(stats.messages_sent, 6 * gossip.iterations);
    assert_eq!(stats.requests_sent, 2 * gossip.iterations);
    assert_eq!(stats.responses_sent, 2 * gossip.iterations);
    assert_eq!(stats.pushes_sent, 2 * gossip.iterations);
    println!(
        "acceptance 7 (gossip equivalence): PASS — {} snapshots bitwise equal over 1000 iterations, {} messages = 6 x 1000",
        gossip_states.len(),
        stats.messages_sent
    );
}

/// The global objective must equal the enumerated sum of structure costs
/// plus per-block regularizers, exactly, on 50 random instances.
#[test]
fn criterion_8_objective_decomposes_exactly() {
    for instance in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + instance);
        let p = 2 + (instance as usize % 3);
        let q = 2 + ((instance as usize / 3) % 3);
        let rank = 1 + (instance as usize % 3);
        let grid = GridSpec::new(3 * p, 3 * q, p, q).unwrap();
        let norm = compute_normalization(&grid);
        let (state, data) = random_instance(&grid, rank, 3, &mut rng);
        let rho = rng.gen_range(0.0..3.0);
        let lambda = rng.gen_range(0.0..0.2);

        let mut expected = 0.0;
        for s in brute_force_structures(&grid) {
            expected += structure_cost(&s, &state, &data, rho, &norm);
        }
        for b in grid.blocks() {
            expected += lambda * state.pair(b).sq_norm();
        }
        let got = global_objective(&state, &data, rho, lambda, &norm);
        assert_eq!(
            got.to_bits(),
            expected.to_bits(),
            "instance {instance} ({p}x{q} rank {rank}): {got:e} != {expected:e}"
        );
    }
    println!("acceptance 8 (objective decomposition): PASS — exact equality on 50 instances");
}
