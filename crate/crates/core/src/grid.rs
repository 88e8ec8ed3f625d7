//! Block grid over the input matrix and the three-block gossip structures
//! defined on it.
//!
//! The m×n input is split into a p×q grid of blocks. Blocks that share an
//! edge gossip with each other; the atomic unit of one update is a
//! *structure*: a pivot block together with two edge-adjacent neighbors.
//! An upper structure at pivot (i,j) spans {(i,j), (i+1,j), (i,j+1)}, a
//! lower one spans {(i,j), (i-1,j), (i,j-1)}.

use std::fmt;
use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};

/// Grid coordinates of a block, 1-based in both axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId {
    pub i: usize,
    pub j: usize,
}

impl BlockId {
    pub fn new(i: usize, j: usize) -> Self {
        BlockId { i, j }
    }

    /// True when the two blocks share an edge in the grid.
    pub fn is_adjacent(&self, other: &BlockId) -> bool {
        let di = self.i.abs_diff(other.i);
        let dj = self.j.abs_diff(other.j);
        di + dj == 1
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.i, self.j)
    }
}

/// Partition of an m×n matrix into a p×q grid of contiguous blocks.
///
/// Row and column ranges are balanced: sizes within an axis differ by at
/// most one, with the remainder assigned to the leading intervals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridSpec {
    m: usize,
    n: usize,
    p: usize,
    q: usize,
    row_ranges: Vec<Range<usize>>,
    col_ranges: Vec<Range<usize>>,
}

fn balanced_ranges(total: usize, parts: usize) -> Vec<Range<usize>> {
    let base = total / parts;
    let rem = total % parts;
    let mut ranges = Vec::with_capacity(parts);
    let mut start = 0;
    for k in 0..parts {
        let len = if k < rem { base + 1 } else { base };
        ranges.push(start..start + len);
        start += len;
    }
    ranges
}

/// Locate the interval owning `index` in a balanced partition.
fn balanced_part_of(index: usize, total: usize, parts: usize) -> usize {
    let base = total / parts;
    let rem = total % parts;
    let boundary = rem * (base + 1);
    if index < boundary {
        index / (base + 1)
    } else {
        rem + (index - boundary) / base
    }
}

impl GridSpec {
    /// Build a balanced p×q grid over an m×n matrix.
    ///
    /// Grids with p < 2 or q < 2 admit no valid structure and are rejected,
    /// as are grids finer than the matrix (empty blocks).
    pub fn new(m: usize, n: usize, p: usize, q: usize) -> Result<GridSpec> {
        if p < 2 || q < 2 {
            return Err(Error::InvalidGrid(format!(
                "grid must be at least 2x2 (got {p}x{q}); a single grid row or column admits no structure"
            )));
        }
        if p > m || q > n {
            return Err(Error::InvalidGrid(format!(
                "grid {p}x{q} is finer than the {m}x{n} matrix; blocks would be empty"
            )));
        }
        Ok(GridSpec {
            m,
            n,
            p,
            q,
            row_ranges: balanced_ranges(m, p),
            col_ranges: balanced_ranges(n, q),
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Half-open row interval owned by grid row `i` (1-based).
    pub fn row_range(&self, i: usize) -> Range<usize> {
        self.row_ranges[i - 1].clone()
    }

    /// Half-open column interval owned by grid column `j` (1-based).
    pub fn col_range(&self, j: usize) -> Range<usize> {
        self.col_ranges[j - 1].clone()
    }

    /// Row count of the blocks in grid row `i`.
    pub fn block_rows(&self, i: usize) -> usize {
        self.row_ranges[i - 1].len()
    }

    /// Column count of the blocks in grid column `j`.
    pub fn block_cols(&self, j: usize) -> usize {
        self.col_ranges[j - 1].len()
    }

    /// Block owning global entry (row, col).
    pub fn block_of(&self, row: usize, col: usize) -> Result<BlockId> {
        if row >= self.m || col >= self.n {
            return Err(Error::DimensionMismatch(format!(
                "entry ({row},{col}) outside {}x{} matrix",
                self.m, self.n
            )));
        }
        Ok(BlockId::new(
            balanced_part_of(row, self.m, self.p) + 1,
            balanced_part_of(col, self.n, self.q) + 1,
        ))
    }

    pub fn contains(&self, id: BlockId) -> bool {
        (1..=self.p).contains(&id.i) && (1..=self.q).contains(&id.j)
    }

    /// Row-major flat index of a block, for p×q tables.
    pub fn block_index(&self, id: BlockId) -> usize {
        debug_assert!(self.contains(id));
        (id.i - 1) * self.q + (id.j - 1)
    }

    /// All block ids in row-major order.
    pub fn blocks(&self) -> impl Iterator<Item = BlockId> + '_ {
        (1..=self.p).flat_map(move |i| (1..=self.q).map(move |j| BlockId::new(i, j)))
    }

    pub fn num_blocks(&self) -> usize {
        self.p * self.q
    }

    /// Number of valid structures on this grid: 2(p-1)(q-1).
    pub fn num_structures(&self) -> usize {
        2 * (self.p - 1) * (self.q - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StructureKind {
    Upper,
    Lower,
}

/// A validated three-block gossip structure.
///
/// Member order is fixed: pivot first, then the vertical neighbor (the
/// pivot's partner in the W consensus term), then the horizontal neighbor
/// (the U consensus partner).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Structure {
    kind: StructureKind,
    pivot: BlockId,
    members: [BlockId; 3],
}

impl Structure {
    pub fn new(kind: StructureKind, pivot: BlockId, grid: &GridSpec) -> Result<Structure> {
        let (p, q) = (grid.p(), grid.q());
        let ok = match kind {
            StructureKind::Upper => (1..p).contains(&pivot.i) && (1..q).contains(&pivot.j),
            StructureKind::Lower => (2..=p).contains(&pivot.i) && (2..=q).contains(&pivot.j),
        };
        if !ok {
            return Err(Error::InvalidStructure(format!(
                "{kind:?} structure with pivot {pivot} is invalid on a {p}x{q} grid"
            )));
        }
        let members = match kind {
            StructureKind::Upper => [
                pivot,
                BlockId::new(pivot.i + 1, pivot.j),
                BlockId::new(pivot.i, pivot.j + 1),
            ],
            StructureKind::Lower => [
                pivot,
                BlockId::new(pivot.i - 1, pivot.j),
                BlockId::new(pivot.i, pivot.j - 1),
            ],
        };
        Ok(Structure {
            kind,
            pivot,
            members,
        })
    }

    pub fn kind(&self) -> StructureKind {
        self.kind
    }

    pub fn pivot(&self) -> BlockId {
        self.pivot
    }

    pub fn members(&self) -> &[BlockId; 3] {
        &self.members
    }

    /// The two blocks whose U factors the structure pulls together,
    /// ordered left to right within their grid row.
    pub fn u_pair(&self) -> (BlockId, BlockId) {
        match self.kind {
            StructureKind::Upper => (self.members[0], self.members[2]),
            StructureKind::Lower => (self.members[2], self.members[0]),
        }
    }

    /// The two blocks whose W factors the structure pulls together,
    /// ordered top to bottom within their grid column.
    pub fn w_pair(&self) -> (BlockId, BlockId) {
        match self.kind {
            StructureKind::Upper => (self.members[0], self.members[1]),
            StructureKind::Lower => (self.members[1], self.members[0]),
        }
    }

    pub fn contains(&self, id: BlockId) -> bool {
        self.members.contains(&id)
    }

    /// True when the two structures share no block.
    pub fn is_disjoint(&self, other: &Structure) -> bool {
        !self.members.iter().any(|b| other.contains(*b))
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = match self.kind {
            StructureKind::Upper => "S-upper",
            StructureKind::Lower => "S-lower",
        };
        write!(f, "{}[{} {}]", k, self.pivot.i, self.pivot.j)
    }
}

/// Structure at position `index` in the canonical enumeration order:
/// upper pivots row-major, then lower pivots row-major.
fn structure_by_index(grid: &GridSpec, index: usize) -> Structure {
    let (p, q) = (grid.p(), grid.q());
    let per_kind = (p - 1) * (q - 1);
    debug_assert!(index < 2 * per_kind);
    let (kind, k) = if index < per_kind {
        (StructureKind::Upper, index)
    } else {
        (StructureKind::Lower, index - per_kind)
    };
    let pivot = match kind {
        StructureKind::Upper => BlockId::new(k / (q - 1) + 1, k % (q - 1) + 1),
        StructureKind::Lower => BlockId::new(k / (q - 1) + 2, k % (q - 1) + 2),
    };
    Structure::new(kind, pivot, grid).expect("enumeration produces only valid structures")
}

/// All valid structures, in deterministic order: upper pivots row-major,
/// then lower pivots row-major. Count is always 2(p-1)(q-1).
pub fn enumerate_structures(grid: &GridSpec) -> Vec<Structure> {
    (0..grid.num_structures())
        .map(|k| structure_by_index(grid, k))
        .collect()
}

/// Draw one structure uniformly from the valid set. Reproducible: a given
/// rng state always yields the same draw.
pub fn sample_structure<R: Rng + ?Sized>(grid: &GridSpec, rng: &mut R) -> Structure {
    structure_by_index(grid, rng.gen_range(0..grid.num_structures()))
}

/// Per-block inverse-frequency coefficients equalizing block representation
/// in the stochastic objective.
///
/// A block near the grid interior belongs to up to six structures while a
/// corner belongs to exactly one; without correction the interior would
/// dominate the sampled gradient mass. Each f term is weighted by the
/// inverse of its block's structure-membership count, each d term by the
/// inverse of the pivot block's d-term count.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationTable {
    p: usize,
    q: usize,
    f_count: Vec<u32>,
    du_count: Vec<u32>,
    dw_count: Vec<u32>,
    f_coeff: Vec<f64>,
    du_coeff: Vec<f64>,
    dw_coeff: Vec<f64>,
}

impl NormalizationTable {
    fn idx(&self, id: BlockId) -> usize {
        debug_assert!((1..=self.p).contains(&id.i) && (1..=self.q).contains(&id.j));
        (id.i - 1) * self.q + (id.j - 1)
    }

    /// 1 / (number of structures containing the block).
    pub fn f_coeff(&self, id: BlockId) -> f64 {
        self.f_coeff[self.idx(id)]
    }

    /// 1 / (number of d-U terms the block's U appears in), 0 if none.
    pub fn du_coeff(&self, id: BlockId) -> f64 {
        self.du_coeff[self.idx(id)]
    }

    /// 1 / (number of d-W terms the block's W appears in), 0 if none.
    pub fn dw_coeff(&self, id: BlockId) -> f64 {
        self.dw_coeff[self.idx(id)]
    }

    pub fn f_count(&self, id: BlockId) -> u32 {
        self.f_count[self.idx(id)]
    }

    pub fn du_count(&self, id: BlockId) -> u32 {
        self.du_count[self.idx(id)]
    }

    pub fn dw_count(&self, id: BlockId) -> u32 {
        self.dw_count[self.idx(id)]
    }
}

/// Count block and consensus-term memberships over the full structure
/// enumeration and invert them into normalization coefficients.
pub fn compute_normalization(grid: &GridSpec) -> NormalizationTable {
    let cells = grid.num_blocks();
    let mut f_count = vec![0u32; cells];
    let mut du_count = vec![0u32; cells];
    let mut dw_count = vec![0u32; cells];
    for s in enumerate_structures(grid) {
        for b in s.members() {
            f_count[grid.block_index(*b)] += 1;
        }
        let (ua, ub) = s.u_pair();
        du_count[grid.block_index(ua)] += 1;
        du_count[grid.block_index(ub)] += 1;
        let (wa, wb) = s.w_pair();
        dw_count[grid.block_index(wa)] += 1;
        dw_count[grid.block_index(wb)] += 1;
    }
    let invert = |counts: &[u32]| {
        counts
            .iter()
            .map(|&c| if c == 0 { 0.0 } else { 1.0 / c as f64 })
            .collect()
    };
    NormalizationTable {
        p: grid.p(),
        q: grid.q(),
        f_coeff: invert(&f_count),
        du_coeff: invert(&du_count),
        dw_coeff: invert(&dw_count),
        f_count,
        du_count,
        dw_count,
    }
}
