//! The generate / train / evaluate subcommands.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ggmc_core::{
    assemble_global_factors, generate_synthetic, load_movielens, read_triples, rmse,
    run_gossip_with_observer, train_test_split, train_with_observer, write_triples, Checkpoint,
    Dataset, Error as CoreError, GridSpec, MetricsRow, MetricsWriter, MovieLensFormat,
    RatingTriple, Schedule, SparseBlockMatrix,
};

use crate::config::{Mode, RunSettings};
use crate::{CliError, EvaluateArgs, GenerateArgs, TrainArgs};

/// Parameter and input-validation failures exit 1; I/O, parse, and
/// training-time failures exit 2.
fn core_err(e: CoreError) -> CliError {
    match e {
        CoreError::InvalidGrid(_)
        | CoreError::InvalidConfig { .. }
        | CoreError::InvalidInput(_) => CliError::Usage(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

pub fn generate(args: &GenerateArgs) -> Result<(), CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (dataset, truth_u, truth_w) = generate_synthetic(
        args.m,
        args.n,
        args.rank,
        args.train_frac,
        args.test_frac,
        &mut rng,
    )
    .map_err(core_err)?;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", args.out.display())))?;
    let train_path = args.out.join("train.triples");
    let test_path = args.out.join("test.triples");
    let truth_path = args.out.join("truth.ckpt");
    write_triples(&train_path, &dataset.train).map_err(core_err)?;
    write_triples(&test_path, &dataset.test).map_err(core_err)?;
    Checkpoint::from_global(truth_u, truth_w)
        .write_to(&truth_path)
        .map_err(core_err)?;

    println!("wrote {} ({} triples)", train_path.display(), dataset.train.len());
    println!("wrote {} ({} triples)", test_path.display(), dataset.test.len());
    println!("wrote {} ({}x{} rank {})", truth_path.display(), args.m, args.n, args.rank);
    Ok(())
}

enum InputKind {
    Triples,
    MovieLens(MovieLensFormat),
}

fn sniff_format(path: &Path) -> InputKind {
    match path.extension().and_then(|e| e.to_str()) {
        Some("dat") => InputKind::MovieLens(MovieLensFormat::Dat),
        Some("csv") => InputKind::MovieLens(MovieLensFormat::Csv),
        _ => InputKind::Triples,
    }
}

/// Load the training (and optional test) ratings. MovieLens inputs carry
/// their own sparse ids, so a separate test file cannot share their dense
/// index space; those are split in-process via test_fraction instead.
fn load_training_data(
    train_path: &Path,
    test_path: Option<&Path>,
    settings: &RunSettings,
) -> Result<(Vec<RatingTriple>, Vec<RatingTriple>, usize, usize), CliError> {
    match sniff_format(train_path) {
        InputKind::MovieLens(format) => {
            if test_path.is_some() {
                return Err(CliError::Usage(
                    "--test cannot be combined with a MovieLens-format --train file; \
                     its ids live in a remapped index space. Use test_fraction to split."
                        .into(),
                ));
            }
            let dataset = load_movielens(train_path, format).map_err(core_err)?;
            let (m, n) = (dataset.m, dataset.n);
            let dataset = if settings.test_fraction > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(settings.train.seed);
                train_test_split(dataset, settings.test_fraction, &mut rng).map_err(core_err)?
            } else {
                dataset
            };
            let Dataset { train, test, .. } = dataset;
            Ok((train, test, m, n))
        }
        InputKind::Triples => {
            let train = read_triples(train_path).map_err(core_err)?;
            if train.is_empty() {
                return Err(CliError::Runtime(format!(
                    "{}: no ratings found",
                    train_path.display()
                )));
            }
            let test = match test_path {
                Some(p) => read_triples(p).map_err(core_err)?,
                None => Vec::new(),
            };
            let m = train
                .iter()
                .chain(&test)
                .map(|t| t.row + 1)
                .max()
                .unwrap_or(0);
            let n = train
                .iter()
                .chain(&test)
                .map(|t| t.col + 1)
                .max()
                .unwrap_or(0);
            Ok((train, test, m, n))
        }
    }
}

/// Path for the assembled global factors written next to the per-block
/// checkpoint: `out.ckpt` -> `out.global.ckpt`.
fn global_path(checkpoint: &Path) -> PathBuf {
    match checkpoint.extension().and_then(|e| e.to_str()) {
        Some(ext) => checkpoint.with_extension(format!("global.{ext}")),
        None => checkpoint.with_extension("global"),
    }
}

pub fn train(args: &TrainArgs, settings: &RunSettings) -> Result<(), CliError> {
    settings.train.validate().map_err(core_err)?;
    if !(0.0..=1.0).contains(&settings.test_fraction) {
        return Err(CliError::Usage(format!(
            "test_fraction must lie in [0,1], got {}",
            settings.test_fraction
        )));
    }
    let (train_triples, test_triples, m, n) =
        load_training_data(&args.train, args.test.as_deref(), settings)?;
    let grid = GridSpec::new(m, n, settings.train.p, settings.train.q).map_err(core_err)?;
    let data = SparseBlockMatrix::from_triples(
        grid,
        train_triples.iter().map(|t| (t.row, t.col, t.value)),
    )
    .map_err(core_err)?;

    let mut metrics = match &args.metrics {
        Some(path) => {
            let file = File::create(path)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            Some(
                MetricsWriter::new(BufWriter::new(file))
                    .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?,
            )
        }
        None => None,
    };
    let mut stream_error: Option<String> = None;
    let mut last_rmse: Option<f64> = None;

    let observe = |iteration: u64,
                       cost: f64,
                       state: &ggmc_core::FactorState,
                       sim: Option<(u64, u64)>,
                       metrics: &mut Option<MetricsWriter<BufWriter<File>>>,
                       stream_error: &mut Option<String>,
                       last_rmse: &mut Option<f64>| {
        let rmse_test = if test_triples.is_empty() {
            None
        } else {
            let (gu, gw) = assemble_global_factors(state);
            rmse(&test_triples, &gu, &gw).ok()
        };
        *last_rmse = rmse_test.or(*last_rmse);
        if let Some(w) = metrics.as_mut() {
            let row = MetricsRow {
                iteration,
                cost: Some(cost),
                rmse_test,
                messages_sent: sim.map(|s| s.0),
                rounds: sim.map(|s| s.1),
            };
            if let Err(e) = w.write_row(&row) {
                stream_error.get_or_insert(e.to_string());
            }
        }
    };

    let report = match settings.mode {
        Mode::Sequential => train_with_observer(&data, &settings.train, |it, cost, state| {
            observe(it, cost, state, None, &mut metrics, &mut stream_error, &mut last_rmse)
        })
        .map_err(core_err)?,
        Mode::Gossip => {
            let (report, stats) = run_gossip_with_observer(
                &data,
                &settings.train,
                Schedule::Batched,
                |it, cost, state, stats| {
                    observe(
                        it,
                        cost,
                        state,
                        Some((stats.messages_sent, stats.rounds)),
                        &mut metrics,
                        &mut stream_error,
                        &mut last_rmse,
                    )
                },
            )
            .map_err(core_err)?;
            println!("messages_sent={}", stats.messages_sent);
            println!("rounds={}", stats.rounds);
            report
        }
    };
    if let Some(w) = metrics.as_mut() {
        w.flush()
            .map_err(|e| CliError::Runtime(format!("metrics stream: {e}")))?;
    }
    if let Some(e) = stream_error {
        return Err(CliError::Runtime(format!("metrics stream: {e}")));
    }

    Checkpoint::from_state(&report.final_state)
        .write_to(&args.out_checkpoint)
        .map_err(core_err)?;
    let (gu, gw) = assemble_global_factors(&report.final_state);
    let global = global_path(&args.out_checkpoint);
    Checkpoint::from_global(gu, gw)
        .write_to(&global)
        .map_err(core_err)?;

    println!("iterations={}", report.iterations);
    println!("converged={}", report.converged);
    println!("final_cost={}", report.cost_trace.last().map(|x| x.1).unwrap_or(f64::NAN));
    if let Some(r) = last_rmse {
        println!("rmse_test={r}");
    }
    println!("checkpoint={}", args.out_checkpoint.display());
    println!("global_checkpoint={}", global.display());
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let ck = Checkpoint::read_from(&args.checkpoint).map_err(core_err)?;
    let test = read_triples(&args.test).map_err(core_err)?;
    let (gu, gw) = ck.assemble_global();
    let value = rmse(&test, &gu, &gw).map_err(core_err)?;
    println!("{value}");
    if let Some(path) = &args.metrics {
        let file = File::create(path)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        let mut w = MetricsWriter::new(BufWriter::new(file))
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        w.write_row(&MetricsRow {
            iteration: 0,
            cost: None,
            rmse_test: Some(value),
            messages_sent: None,
            rounds: None,
        })
        .and_then(|_| w.flush())
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}
