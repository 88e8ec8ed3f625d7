//! Dataset handling: synthetic low-rank generation, MovieLens ingestion,
//! train/test splitting, RMSE, and the triple/id-map file formats.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::objective::row_dot;

/// One observed rating at dense 0-based indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingTriple {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// Mapping between sparse original ids and dense 0-based indices,
/// in first-appearance order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IdMap {
    originals: Vec<u64>,
    to_dense: HashMap<u64, usize>,
}

impl IdMap {
    pub fn identity(len: usize) -> IdMap {
        let originals: Vec<u64> = (0..len as u64).collect();
        let to_dense = originals.iter().map(|&id| (id, id as usize)).collect();
        IdMap {
            originals,
            to_dense,
        }
    }

    pub fn len(&self) -> usize {
        self.originals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.originals.is_empty()
    }

    /// Dense index for an original id, inserting it on first sight.
    pub fn intern(&mut self, original: u64) -> usize {
        if let Some(&idx) = self.to_dense.get(&original) {
            return idx;
        }
        let idx = self.originals.len();
        self.originals.push(original);
        self.to_dense.insert(original, idx);
        idx
    }

    pub fn dense(&self, original: u64) -> Option<usize> {
        self.to_dense.get(&original).copied()
    }

    pub fn original(&self, dense: usize) -> u64 {
        self.originals[dense]
    }

    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for (dense, original) in self.originals.iter().enumerate() {
            writeln!(out, "{original} {dense}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_from(path: impl AsRef<Path>) -> Result<IdMap> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut map = IdMap::default();
        for (line_no, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let (orig, dense) = match (it.next(), it.next(), it.next()) {
                (Some(o), Some(d), None) => (o, d),
                _ => {
                    return Err(Error::parse(
                        Some(path),
                        line_no + 1,
                        "expected `original_id dense_index`",
                    ))
                }
            };
            let orig: u64 = orig
                .parse()
                .map_err(|e| Error::parse(Some(path), line_no + 1, format!("bad id: {e}")))?;
            let dense: usize = dense
                .parse()
                .map_err(|e| Error::parse(Some(path), line_no + 1, format!("bad index: {e}")))?;
            if dense != map.len() {
                return Err(Error::parse(
                    Some(path),
                    line_no + 1,
                    format!("dense indices must appear in order; expected {}, got {dense}", map.len()),
                ));
            }
            map.intern(orig);
        }
        Ok(map)
    }
}

/// A ratings matrix with an optional held-out test portion.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub m: usize,
    pub n: usize,
    pub train: Vec<RatingTriple>,
    pub test: Vec<RatingTriple>,
    pub row_ids: IdMap,
    pub col_ids: IdMap,
}

impl Dataset {
    pub fn is_split(&self) -> bool {
        !self.test.is_empty()
    }
}

/// Draw rank-constrained ground truth A (m×r), B (n×r) with entries
/// uniform on [-1,1], then sample disjoint uniform-random train and test
/// entry sets of the full product A·B^T.
///
/// Sizes are floor(train_fraction·m·n) and floor(test_fraction·m·n).
/// Entry values are computed with the shared prediction dot product, so
/// the returned factors reproduce every sampled value exactly.
pub fn generate_synthetic<R: Rng + ?Sized>(
    m: usize,
    n: usize,
    rank: usize,
    train_fraction: f64,
    test_fraction: f64,
    rng: &mut R,
) -> Result<(Dataset, Array2<f64>, Array2<f64>)> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidInput("matrix dimensions must be positive".into()));
    }
    if rank == 0 || rank > m.min(n) {
        return Err(Error::InvalidInput(format!(
            "rank must be in 1..=min(m,n)={}, got {rank}",
            m.min(n)
        )));
    }
    let frac_ok = |f: f64| (0.0..=1.0).contains(&f);
    if !frac_ok(train_fraction) || !frac_ok(test_fraction) || train_fraction + test_fraction > 1.0 {
        return Err(Error::InvalidInput(format!(
            "fractions must lie in [0,1] and sum to at most 1 (got {train_fraction} + {test_fraction})"
        )));
    }

    let uniform = |count: usize, rng: &mut R| -> Vec<f64> {
        (0..count).map(|_| rng.gen_range(-1.0..=1.0)).collect()
    };
    let a = Array2::from_shape_vec((m, rank), uniform(m * rank, rng)).unwrap();
    let b = Array2::from_shape_vec((n, rank), uniform(n * rank, rng)).unwrap();

    let total = (m as u64) * (n as u64);
    let train_count = (train_fraction * (total as f64)).floor() as u64;
    let test_count = (test_fraction * (total as f64)).floor() as u64;

    // Virtual Fisher-Yates over the linearized cell indices: uniformly
    // random distinct cells without materializing all m*n of them.
    let mut swaps: HashMap<u64, u64> = HashMap::new();
    let mut picked = Vec::with_capacity((train_count + test_count) as usize);
    for k in 0..train_count + test_count {
        let j = rng.gen_range(k..total);
        let chosen = *swaps.get(&j).unwrap_or(&j);
        let front = *swaps.get(&k).unwrap_or(&k);
        swaps.insert(j, front);
        picked.push(chosen);
    }

    let au = a.as_slice().expect("standard layout");
    let bu = b.as_slice().expect("standard layout");
    let triple_at = |cell: u64| -> RatingTriple {
        let row = (cell / n as u64) as usize;
        let col = (cell % n as u64) as usize;
        let value = row_dot(
            &au[row * rank..(row + 1) * rank],
            &bu[col * rank..(col + 1) * rank],
        );
        RatingTriple { row, col, value }
    };
    let train = picked[..train_count as usize].iter().map(|&c| triple_at(c)).collect();
    let test = picked[train_count as usize..].iter().map(|&c| triple_at(c)).collect();

    Ok((
        Dataset {
            m,
            n,
            train,
            test,
            row_ids: IdMap::identity(m),
            col_ids: IdMap::identity(n),
        },
        a,
        b,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MovieLensFormat {
    /// `UserID::MovieID::Rating::Timestamp`
    Dat,
    /// Header line, then `userId,movieId,rating,timestamp`
    Csv,
}

/// Parse a MovieLens ratings file, remapping the sparse original ids to
/// dense 0-based indices in first-appearance order. Timestamps are
/// discarded. Returns an unsplit dataset (all ratings in `train`).
pub fn load_movielens(path: impl AsRef<Path>, format: MovieLensFormat) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut row_ids = IdMap::default();
    let mut col_ids = IdMap::default();
    let mut train = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if format == MovieLensFormat::Csv && line_no == 1 {
            continue; // header
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = match format {
            MovieLensFormat::Dat => line.split("::").collect(),
            MovieLensFormat::Csv => line.split(',').collect(),
        };
        if fields.len() != 4 {
            return Err(Error::parse(
                Some(path),
                line_no,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let user: u64 = fields[0]
            .trim()
            .parse()
            .map_err(|e| Error::parse(Some(path), line_no, format!("bad user id `{}`: {e}", fields[0])))?;
        let item: u64 = fields[1]
            .trim()
            .parse()
            .map_err(|e| Error::parse(Some(path), line_no, format!("bad item id `{}`: {e}", fields[1])))?;
        let value: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|e| Error::parse(Some(path), line_no, format!("bad rating `{}`: {e}", fields[2])))?;
        if !value.is_finite() {
            return Err(Error::parse(Some(path), line_no, "non-finite rating"));
        }
        train.push(RatingTriple {
            row: row_ids.intern(user),
            col: col_ids.intern(item),
            value,
        });
    }
    if train.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: no ratings found",
            path.display()
        )));
    }
    Ok(Dataset {
        m: row_ids.len(),
        n: col_ids.len(),
        train,
        test: Vec::new(),
        row_ids,
        col_ids,
    })
}

/// Randomly partition an unsplit dataset; the test side receives
/// round(test_fraction · total) triples. Deterministic in rng state.
pub fn train_test_split<R: Rng + ?Sized>(
    dataset: Dataset,
    test_fraction: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if dataset.is_split() {
        return Err(Error::InvalidInput("dataset is already split".into()));
    }
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::InvalidInput(format!(
            "test fraction must lie in [0,1], got {test_fraction}"
        )));
    }
    let total = dataset.train.len();
    let test_count = (test_fraction * total as f64).round() as usize;
    let mut order: Vec<usize> = (0..total).collect();
    // Fisher-Yates.
    for k in (1..total).rev() {
        order.swap(k, rng.gen_range(0..=k));
    }
    let mut test = Vec::with_capacity(test_count);
    let mut train = Vec::with_capacity(total - test_count);
    for (pos, &idx) in order.iter().enumerate() {
        if pos < test_count {
            test.push(dataset.train[idx]);
        } else {
            train.push(dataset.train[idx]);
        }
    }
    Ok(Dataset {
        train,
        test,
        ..dataset
    })
}

/// Root mean squared error of the factor product against held-out
/// ratings.
pub fn rmse(test: &[RatingTriple], u: &Array2<f64>, w: &Array2<f64>) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let (m, n) = (u.nrows(), w.nrows());
    let mut acc = 0.0;
    for t in test {
        if t.row >= m || t.col >= n {
            return Err(Error::DimensionMismatch(format!(
                "test entry ({},{}) outside {m}x{n} factors",
                t.row, t.col
            )));
        }
        let e = t.value - crate::trainer::predict(u, w, t.row, t.col);
        acc += e * e;
    }
    Ok((acc / test.len() as f64).sqrt())
}

/// Write triples as `row col value` lines; values use the shortest
/// round-trippable decimal form.
pub fn write_triples(path: impl AsRef<Path>, triples: &[RatingTriple]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for t in triples {
        writeln!(out, "{} {} {}", t.row, t.col, t.value).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_triples(path: impl AsRef<Path>) -> Result<Vec<RatingTriple>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut triples = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                Some(path),
                line_no,
                format!("expected `row col value`, found {} fields", fields.len()),
            ));
        }
        let row: usize = fields[0]
            .parse()
            .map_err(|e| Error::parse(Some(path), line_no, format!("bad row: {e}")))?;
        let col: usize = fields[1]
            .parse()
            .map_err(|e| Error::parse(Some(path), line_no, format!("bad col: {e}")))?;
        let value: f64 = fields[2]
            .parse()
            .map_err(|e| Error::parse(Some(path), line_no, format!("bad value: {e}")))?;
        triples.push(RatingTriple { row, col, value });
    }
    Ok(triples)
}
