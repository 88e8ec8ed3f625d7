//! Generate a rank-constrained synthetic matrix, train the block factors,
//! and report the cost trace and held-out RMSE.
//!
//! Run with `cargo run --release -p ggmc-core --example synthetic_run`.

use ggmc_core::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let (dataset, _, _) = generate_synthetic(500, 500, 5, 0.2, 0.02, &mut rng).unwrap();
    println!(
        "synthetic 500x500 rank-5: {} train / {} test entries",
        dataset.train.len(),
        dataset.test.len()
    );

    let grid = GridSpec::new(500, 500, 4, 4).unwrap();
    let data = SparseBlockMatrix::from_triples(
        grid,
        dataset.train.iter().map(|t| (t.row, t.col, t.value)),
    )
    .unwrap();

    let config = TrainConfig::default();
    let report = train(&data, &config).unwrap();
    println!(
        "{} iterations, converged: {}",
        report.iterations, report.converged
    );
    for (iteration, cost) in report.cost_trace.iter().step_by(20) {
        println!("  iter {iteration:>7}  cost {cost:.6e}");
    }
    let (iteration, cost) = report.cost_trace.last().unwrap();
    println!("  iter {iteration:>7}  cost {cost:.6e} (final)");

    let (u, w) = assemble_global_factors(&report.final_state);
    let test_rmse = rmse(&dataset.test, &u, &w).unwrap();
    println!("test rmse: {test_rmse:.3e}");
}
