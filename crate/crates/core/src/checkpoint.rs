//! Versioned text checkpoints for per-block factors.
//!
//! Layout: a `GGMC1 m n r p q` header, then for every block in row-major
//! order a `U i j rows cols` section (one line per row) followed by the
//! matching `W i j rows cols` section. Values carry 17 significant digits
//! so a written checkpoint reads back bit for bit.
//!
//! Ground-truth or already-assembled global factors are stored as a 1×1
//! block grid; training states always use the full p×q grid.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::BlockId;
use crate::objective::FactorState;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointBlock {
    pub id: BlockId,
    pub u: Array2<f64>,
    pub w: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub m: usize,
    pub n: usize,
    pub rank: usize,
    pub p: usize,
    pub q: usize,
    /// Blocks in row-major order.
    pub blocks: Vec<CheckpointBlock>,
}

impl Checkpoint {
    pub fn from_state(state: &FactorState) -> Checkpoint {
        let grid = state.grid();
        let blocks = grid
            .blocks()
            .map(|id| CheckpointBlock {
                id,
                u: state.pair(id).u.clone(),
                w: state.pair(id).w.clone(),
            })
            .collect();
        Checkpoint {
            m: grid.m(),
            n: grid.n(),
            rank: state.rank(),
            p: grid.p(),
            q: grid.q(),
            blocks,
        }
    }

    /// Wrap global m×r and n×r factors as a single-block grid.
    pub fn from_global(u: Array2<f64>, w: Array2<f64>) -> Checkpoint {
        assert_eq!(u.ncols(), w.ncols(), "factor ranks");
        Checkpoint {
            m: u.nrows(),
            n: w.nrows(),
            rank: u.ncols(),
            p: 1,
            q: 1,
            blocks: vec![CheckpointBlock {
                id: BlockId::new(1, 1),
                u,
                w,
            }],
        }
    }

    fn block(&self, i: usize, j: usize) -> &CheckpointBlock {
        &self.blocks[(i - 1) * self.q + (j - 1)]
    }

    /// Average the U blocks of each grid row and the W blocks of each grid
    /// column, stacked into global m×r and n×r factors.
    pub fn assemble_global(&self) -> (Array2<f64>, Array2<f64>) {
        let r = self.rank;
        let mut u = Array2::zeros((self.m, r));
        let mut row_start = 0;
        for i in 1..=self.p {
            let rows = self.block(i, 1).u.nrows();
            let mut acc = Array2::zeros((rows, r));
            for j in 1..=self.q {
                acc += &self.block(i, j).u;
            }
            acc /= self.q as f64;
            u.slice_mut(ndarray::s![row_start..row_start + rows, ..]).assign(&acc);
            row_start += rows;
        }
        let mut w = Array2::zeros((self.n, r));
        let mut col_start = 0;
        for j in 1..=self.q {
            let rows = self.block(1, j).w.nrows();
            let mut acc = Array2::zeros((rows, r));
            for i in 1..=self.p {
                acc += &self.block(i, j).w;
            }
            acc /= self.p as f64;
            w.slice_mut(ndarray::s![col_start..col_start + rows, ..]).assign(&acc);
            col_start += rows;
        }
        (u, w)
    }

    pub fn write(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "GGMC1 {} {} {} {} {}", self.m, self.n, self.rank, self.p, self.q)?;
        for b in &self.blocks {
            write_matrix(out, "U", b.id, &b.u)?;
            write_matrix(out, "W", b.id, &b.w)?;
        }
        Ok(())
    }

    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(input: impl BufRead, path: Option<&Path>) -> Result<Checkpoint> {
        Reader::new(input, path).parse()
    }

    pub fn read_from(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::read(BufReader::new(file), Some(path))
    }
}

fn write_matrix(out: &mut impl Write, tag: &str, id: BlockId, mat: &Array2<f64>) -> std::io::Result<()> {
    writeln!(out, "{tag} {} {} {} {}", id.i, id.j, mat.nrows(), mat.ncols())?;
    for row in mat.rows() {
        let mut first = true;
        for v in row {
            if first {
                first = false;
            } else {
                write!(out, " ")?;
            }
            write!(out, "{v:.16e}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

struct Reader<'p, R> {
    input: R,
    path: Option<&'p Path>,
    line_no: usize,
    buf: String,
}

impl<'p, R: BufRead> Reader<'p, R> {
    fn new(input: R, path: Option<&'p Path>) -> Self {
        Reader {
            input,
            path,
            line_no: 0,
            buf: String::new(),
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.path, self.line_no, msg)
    }

    fn next_line(&mut self) -> Result<&str> {
        self.buf.clear();
        self.line_no += 1;
        let n = self
            .input
            .read_line(&mut self.buf)
            .map_err(|e| Error::parse(self.path, self.line_no, e.to_string()))?;
        if n == 0 {
            return Err(self.err("unexpected end of file"));
        }
        Ok(self.buf.trim_end_matches(['\n', '\r']))
    }

    fn parse(mut self) -> Result<Checkpoint> {
        let header = self.next_line()?.to_string();
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 6 || fields[0] != "GGMC1" {
            return Err(self.err(format!(
                "bad checkpoint header (expected `GGMC1 m n r p q`): `{header}`"
            )));
        }
        let nums: Vec<usize> = fields[1..]
            .iter()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| self.err(format!("bad header field: {e}")))?;
        let (m, n, rank, p, q) = (nums[0], nums[1], nums[2], nums[3], nums[4]);
        if m == 0 || n == 0 || rank == 0 || p == 0 || q == 0 {
            return Err(self.err("header fields must be positive"));
        }

        let mut blocks = Vec::with_capacity(p * q);
        let mut row_heights = vec![None::<usize>; p];
        let mut col_heights = vec![None::<usize>; q];
        for i in 1..=p {
            for j in 1..=q {
                let u = self.read_matrix("U", i, j, rank)?;
                let w = self.read_matrix("W", i, j, rank)?;
                match row_heights[i - 1] {
                    None => row_heights[i - 1] = Some(u.nrows()),
                    Some(h) if h == u.nrows() => {}
                    Some(h) => {
                        return Err(self.err(format!(
                            "block ({i},{j}): U has {} rows but grid row {i} established {h}",
                            u.nrows()
                        )))
                    }
                }
                match col_heights[j - 1] {
                    None => col_heights[j - 1] = Some(w.nrows()),
                    Some(h) if h == w.nrows() => {}
                    Some(h) => {
                        return Err(self.err(format!(
                            "block ({i},{j}): W has {} rows but grid column {j} established {h}",
                            w.nrows()
                        )))
                    }
                }
                blocks.push(CheckpointBlock {
                    id: BlockId::new(i, j),
                    u,
                    w,
                });
            }
        }
        let total_rows: usize = row_heights.iter().map(|h| h.unwrap()).sum();
        if total_rows != m {
            return Err(self.err(format!("U block rows sum to {total_rows}, header says m={m}")));
        }
        let total_cols: usize = col_heights.iter().map(|h| h.unwrap()).sum();
        if total_cols != n {
            return Err(self.err(format!("W block rows sum to {total_cols}, header says n={n}")));
        }
        Ok(Checkpoint {
            m,
            n,
            rank,
            p,
            q,
            blocks,
        })
    }

    fn read_matrix(&mut self, tag: &str, i: usize, j: usize, rank: usize) -> Result<Array2<f64>> {
        let header = self.next_line()?.to_string();
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != tag {
            return Err(self.err(format!(
                "expected `{tag} {i} {j} rows cols` section header, got `{header}`"
            )));
        }
        let nums: Vec<usize> = fields[1..]
            .iter()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| self.err(format!("bad section field: {e}")))?;
        if nums[0] != i || nums[1] != j {
            return Err(self.err(format!(
                "out-of-order section: expected block ({i},{j}), got ({},{})",
                nums[0], nums[1]
            )));
        }
        let (rows, cols) = (nums[2], nums[3]);
        if cols != rank {
            return Err(self.err(format!("section has {cols} columns, header rank is {rank}")));
        }
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = self.next_line()?.to_string();
            let before = values.len();
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|e| self.err(format!("bad value `{tok}`: {e}")))?;
                values.push(v);
            }
            if values.len() - before != cols {
                return Err(self.err(format!(
                    "expected {cols} values, found {}",
                    values.len() - before
                )));
            }
        }
        Ok(Array2::from_shape_vec((rows, cols), values).expect("shape matches collected values"))
    }
}
