//! Cost terms of the block-factorization objective and their gradients.
//!
//! Every block (i,j) holds observed entries X_ij and a factor pair
//! (U_ij, W_ij). A structure's cost combines the masked reconstruction
//! error f of its three blocks with consensus penalties between adjacent
//! U factors (within a grid row) and adjacent W factors (within a grid
//! column), all weighted by the normalization coefficients.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::{enumerate_structures, BlockId, GridSpec, NormalizationTable, Structure};

/// Observed entries of one block, in block-local coordinates.
///
/// Entries are kept sorted by (row, col), so costs and gradients do not
/// depend on the order the entries arrived in.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockData {
    id: BlockId,
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl BlockData {
    pub fn new(
        id: BlockId,
        rows: usize,
        cols: usize,
        mut entries: Vec<(usize, usize, f64)>,
    ) -> Result<BlockData> {
        for &(r, c, v) in &entries {
            if r >= rows || c >= cols {
                return Err(Error::DimensionMismatch(format!(
                    "entry ({r},{c}) outside {rows}x{cols} block {id}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "non-finite rating at ({r},{c}) in block {id}"
                )));
            }
        }
        entries.sort_unstable_by_key(|e| (e.0, e.1));
        if let Some(w) = entries.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::InvalidInput(format!(
                "duplicate entry ({},{}) in block {id}",
                w[0].0, w[0].1
            )));
        }
        Ok(BlockData {
            id,
            rows,
            cols,
            entries,
        })
    }

    pub fn id(&self) -> BlockId {
        self.id
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn num_entries(&self) -> usize {
        self.entries.len()
    }
}

/// Observed entries of the whole matrix, partitioned block by block.
#[derive(Debug, Clone)]
pub struct SparseBlockMatrix {
    grid: GridSpec,
    blocks: Vec<BlockData>,
}

impl SparseBlockMatrix {
    /// Route global (row, col, value) triples into their owning blocks.
    pub fn from_triples(
        grid: GridSpec,
        triples: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<SparseBlockMatrix> {
        let mut per_block: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); grid.num_blocks()];
        for (row, col, value) in triples {
            let id = grid.block_of(row, col)?;
            let local = (row - grid.row_range(id.i).start, col - grid.col_range(id.j).start);
            per_block[grid.block_index(id)].push((local.0, local.1, value));
        }
        let blocks = grid
            .blocks()
            .map(|id| {
                let entries = std::mem::take(&mut per_block[grid.block_index(id)]);
                BlockData::new(id, grid.block_rows(id.i), grid.block_cols(id.j), entries)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SparseBlockMatrix { grid, blocks })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn block(&self, id: BlockId) -> &BlockData {
        &self.blocks[self.grid.block_index(id)]
    }

    pub fn blocks(&self) -> &[BlockData] {
        &self.blocks
    }

    /// Total number of observed entries.
    pub fn nnz(&self) -> usize {
        self.blocks.iter().map(|b| b.num_entries()).sum()
    }
}

/// Low-rank factors (U, W) of one block: U is rows×r, W is cols×r.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    pub u: Array2<f64>,
    pub w: Array2<f64>,
}

impl FactorPair {
    pub fn zeros(rows: usize, cols: usize, rank: usize) -> FactorPair {
        FactorPair {
            u: Array2::zeros((rows, rank)),
            w: Array2::zeros((cols, rank)),
        }
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    /// ||U||_F^2 + ||W||_F^2, accumulated in row-major order.
    pub fn sq_norm(&self) -> f64 {
        let u: f64 = self.u.iter().map(|x| x * x).sum();
        let w: f64 = self.w.iter().map(|x| x * x).sum();
        u + w
    }

    /// Gradient step U -= gamma*gU, W -= gamma*gW. Returns false when the
    /// gradient contains a non-finite value.
    pub fn apply_step(&mut self, grad_u: &Array2<f64>, grad_w: &Array2<f64>, gamma: f64) -> bool {
        debug_assert_eq!(self.u.dim(), grad_u.dim());
        debug_assert_eq!(self.w.dim(), grad_w.dim());
        let mut acc = 0.0;
        for (x, g) in self.u.iter_mut().zip(grad_u.iter()) {
            acc += *g;
            *x -= gamma * *g;
        }
        for (x, g) in self.w.iter_mut().zip(grad_w.iter()) {
            acc += *g;
            *x -= gamma * *g;
        }
        acc.is_finite()
    }
}

/// The complete set of per-block factors at a common rank.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorState {
    grid: GridSpec,
    rank: usize,
    factors: Vec<FactorPair>,
}

impl FactorState {
    /// Validate shapes: block (i,j) needs U of block_rows(i)×r and W of
    /// block_cols(j)×r.
    pub fn new(grid: GridSpec, rank: usize, factors: Vec<FactorPair>) -> Result<FactorState> {
        if rank == 0 {
            return Err(Error::InvalidConfig {
                field: "rank",
                reason: "rank must be at least 1".into(),
            });
        }
        if factors.len() != grid.num_blocks() {
            return Err(Error::DimensionMismatch(format!(
                "{} factor pairs for {} blocks",
                factors.len(),
                grid.num_blocks()
            )));
        }
        for id in grid.blocks() {
            let pair = &factors[grid.block_index(id)];
            let want_u = (grid.block_rows(id.i), rank);
            let want_w = (grid.block_cols(id.j), rank);
            if pair.u.dim() != want_u || pair.w.dim() != want_w {
                return Err(Error::DimensionMismatch(format!(
                    "block {id}: U is {:?}, W is {:?}; expected {want_u:?} and {want_w:?}",
                    pair.u.dim(),
                    pair.w.dim()
                )));
            }
        }
        Ok(FactorState {
            grid,
            rank,
            factors,
        })
    }

    pub fn zeros(grid: GridSpec, rank: usize) -> FactorState {
        let factors = grid
            .blocks()
            .map(|id| FactorPair::zeros(grid.block_rows(id.i), grid.block_cols(id.j), rank))
            .collect();
        FactorState {
            grid,
            rank,
            factors,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn pair(&self, id: BlockId) -> &FactorPair {
        &self.factors[self.grid.block_index(id)]
    }

    pub fn pair_mut(&mut self, id: BlockId) -> &mut FactorPair {
        &mut self.factors[self.grid.block_index(id)]
    }

    pub fn pairs(&self) -> &[FactorPair] {
        &self.factors
    }

    /// Bitwise equality of all factor entries; used by determinism checks.
    pub fn bits_eq(&self, other: &FactorState) -> bool {
        self.grid == other.grid
            && self.rank == other.rank
            && self
                .factors
                .iter()
                .zip(&other.factors)
                .all(|(a, b)| {
                    a.u.iter().zip(b.u.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
                        && a.w.iter().zip(b.w.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
                })
    }
}

/// Gradient of a structure's objective with respect to one member block.
#[derive(Debug, Clone)]
pub struct BlockGradient {
    pub id: BlockId,
    pub u: Array2<f64>,
    pub w: Array2<f64>,
}

/// Gradients for the three member blocks of a structure, in member order.
#[derive(Debug, Clone)]
pub struct StructureGradient {
    pub members: [BlockGradient; 3],
}

/// Single dot-product routine shared by costs, gradients, prediction, and
/// synthetic generation, so an exact factorization reproduces its entries
/// bit for bit.
#[inline]
pub(crate) fn row_dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for k in 0..a.len() {
        acc += a[k] * b[k];
    }
    acc
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for k in 0..x.len() {
        y[k] += alpha * x[k];
    }
}

/// Masked reconstruction error: sum over observed entries of
/// (x - (U W^T))^2. Unobserved positions contribute nothing.
pub fn f_cost(block: &BlockData, pair: &FactorPair) -> f64 {
    assert_eq!(pair.u.nrows(), block.rows(), "U rows vs block rows");
    assert_eq!(pair.w.nrows(), block.cols(), "W rows vs block cols");
    assert_eq!(pair.u.ncols(), pair.w.ncols(), "factor ranks");
    let r = pair.rank();
    let u = pair.u.as_slice().expect("U is standard layout");
    let w = pair.w.as_slice().expect("W is standard layout");
    let mut acc = 0.0;
    for &(bi, bj, x) in block.entries() {
        let e = x - row_dot(&u[bi * r..(bi + 1) * r], &w[bj * r..(bj + 1) * r]);
        acc += e * e;
    }
    acc
}

fn sq_frobenius_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim(), "consensus factors must share a shape");
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Consensus distance ||Ua - Ub||_F^2 between two U factors.
pub fn d_cost_u(ua: &Array2<f64>, ub: &Array2<f64>) -> f64 {
    sq_frobenius_diff(ua, ub)
}

/// Consensus distance ||Wa - Wb||_F^2 between two W factors.
pub fn d_cost_w(wa: &Array2<f64>, wb: &Array2<f64>) -> f64 {
    sq_frobenius_diff(wa, wb)
}

/// Weighted cost of one structure: normalized f terms of the three member
/// blocks plus rho-weighted consensus terms, the d coefficients taken from
/// the pivot block.
///
/// Accumulation order is fixed: f terms in member order, then the U
/// consensus term, then the W consensus term.
pub fn structure_cost(
    s: &Structure,
    state: &FactorState,
    data: &SparseBlockMatrix,
    rho: f64,
    norm: &NormalizationTable,
) -> f64 {
    let mut acc = 0.0;
    for b in s.members() {
        acc += norm.f_coeff(*b) * f_cost(data.block(*b), state.pair(*b));
    }
    let (ua, ub) = s.u_pair();
    acc += rho * norm.du_coeff(s.pivot()) * d_cost_u(&state.pair(ua).u, &state.pair(ub).u);
    let (wa, wb) = s.w_pair();
    acc += rho * norm.dw_coeff(s.pivot()) * d_cost_w(&state.pair(wa).w, &state.pair(wb).w);
    acc
}

/// The function one SGD step descends: structure_cost plus the
/// f-coefficient-scaled regularizer of the three member blocks. Summed
/// over all structures the scaled regularizers add up to the plain
/// per-block regularizer of the global objective.
pub fn structure_objective(
    s: &Structure,
    state: &FactorState,
    data: &SparseBlockMatrix,
    rho: f64,
    lambda: f64,
    norm: &NormalizationTable,
) -> f64 {
    let mut acc = structure_cost(s, state, data, rho, norm);
    for b in s.members() {
        acc += lambda * norm.f_coeff(*b) * state.pair(*b).sq_norm();
    }
    acc
}

/// Sum of structure costs over the full enumeration plus the per-block
/// regularizer, accumulated in enumeration order then block-row-major
/// order.
pub fn global_objective(
    state: &FactorState,
    data: &SparseBlockMatrix,
    rho: f64,
    lambda: f64,
    norm: &NormalizationTable,
) -> f64 {
    let mut acc = 0.0;
    for s in enumerate_structures(state.grid()) {
        acc += structure_cost(&s, state, data, rho, norm);
    }
    for b in state.grid().blocks() {
        acc += lambda * state.pair(b).sq_norm();
    }
    acc
}

/// The reported training cost: unweighted f over all blocks plus the
/// regularizer, block-row-major. No rho terms, no normalization.
pub fn training_cost(state: &FactorState, data: &SparseBlockMatrix, lambda: f64) -> f64 {
    let mut acc = 0.0;
    for b in state.grid().blocks() {
        acc += f_cost(data.block(b), state.pair(b)) + lambda * state.pair(b).sq_norm();
    }
    acc
}

/// Analytic gradient of `structure_objective` with respect to each member
/// block's factors.
///
/// Per block: the f term contributes -2c·R·W to the U gradient and
/// -2c·R^T·U to the W gradient, where R is the residual at observed
/// positions and c the block's f coefficient; the regularizer contributes
/// 2λc·U and 2λc·W. The consensus terms contribute ±2ρ·coeff·(difference)
/// to the paired factors.
pub fn structure_gradient(
    s: &Structure,
    state: &FactorState,
    data: &SparseBlockMatrix,
    rho: f64,
    lambda: f64,
    norm: &NormalizationTable,
) -> StructureGradient {
    let ids = s.members();
    let parts = [
        (data.block(ids[0]), state.pair(ids[0])),
        (data.block(ids[1]), state.pair(ids[1])),
        (data.block(ids[2]), state.pair(ids[2])),
    ];
    structure_gradient_parts(s, parts, rho, lambda, norm)
}

/// Gradient from explicit member inputs; the gossip executor calls this
/// with factor payloads received over messages. Must stay the single code
/// path for gradient math so sequential and gossip execution agree bit for
/// bit.
pub fn structure_gradient_parts(
    s: &Structure,
    members: [(&BlockData, &FactorPair); 3],
    rho: f64,
    lambda: f64,
    norm: &NormalizationTable,
) -> StructureGradient {
    let ids = s.members();
    let mut grads: Vec<BlockGradient> = ids
        .iter()
        .zip(&members)
        .map(|(id, (_, pair))| BlockGradient {
            id: *id,
            u: Array2::zeros(pair.u.dim()),
            w: Array2::zeros(pair.w.dim()),
        })
        .collect();

    for k in 0..3 {
        let (block, pair) = members[k];
        debug_assert_eq!(block.id(), ids[k]);
        let c = norm.f_coeff(ids[k]);
        let r = pair.rank();
        let u = pair.u.as_slice().expect("U is standard layout");
        let w = pair.w.as_slice().expect("W is standard layout");
        {
            let BlockGradient { u: grad_u, w: grad_w, .. } = &mut grads[k];
            let gu = grad_u.as_slice_mut().expect("grad U standard layout");
            let gw = grad_w.as_slice_mut().expect("grad W standard layout");
            for &(bi, bj, x) in block.entries() {
                let urow = &u[bi * r..(bi + 1) * r];
                let wrow = &w[bj * r..(bj + 1) * r];
                let e = x - row_dot(urow, wrow);
                let scale = -2.0 * c * e;
                axpy(scale, wrow, &mut gu[bi * r..(bi + 1) * r]);
                axpy(scale, urow, &mut gw[bj * r..(bj + 1) * r]);
            }
        }
        if lambda != 0.0 {
            let lc = 2.0 * lambda * c;
            grads[k].u.zip_mut_with(&pair.u, |g, x| *g += lc * x);
            grads[k].w.zip_mut_with(&pair.w, |g, x| *g += lc * x);
        }
    }

    let member_index = |id: BlockId| ids.iter().position(|b| *b == id).expect("pair in members");

    let (ua, ub) = s.u_pair();
    let cu = 2.0 * rho * norm.du_coeff(s.pivot());
    let du = &members[member_index(ua)].1.u - &members[member_index(ub)].1.u;
    grads[member_index(ua)].u.zip_mut_with(&du, |g, d| *g += cu * d);
    grads[member_index(ub)].u.zip_mut_with(&du, |g, d| *g -= cu * d);

    let (wa, wb) = s.w_pair();
    let cw = 2.0 * rho * norm.dw_coeff(s.pivot());
    let dw = &members[member_index(wa)].1.w - &members[member_index(wb)].1.w;
    grads[member_index(wa)].w.zip_mut_with(&dw, |g, d| *g += cw * d);
    grads[member_index(wb)].w.zip_mut_with(&dw, |g, d| *g -= cw * d);

    let mut it = grads.into_iter();
    StructureGradient {
        members: [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()],
    }
}
