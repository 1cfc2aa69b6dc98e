//! Uniform Cartesian grid, block decomposition and periodic block topology.
//!
//! The global grid is cut into cubic blocks of `block` cells per axis. Blocks
//! are ordered along a Morton (Z-order) curve and the resulting sequence is
//! split into contiguous, balanced chunks, one per rank.

use thiserror::Error;

/// Ghost layer width on every face of a block.
pub const NGHOST: usize = 2;

/// Largest number of blocks per axis the Morton code supports.
pub const MAX_BLOCKS_PER_AXIS: usize = 1 << 21;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    Config(String),
    #[error("block coordinates {coords:?} outside block range {dims:?}")]
    OutOfRange { coords: [usize; 3], dims: [usize; 3] },
    #[error("cannot distribute {nblocks} blocks over {nranks} ranks")]
    TooManyRanks { nranks: usize, nblocks: usize },
}

/// Grid descriptor: cell counts, block edge length and physical extent.
#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    cells: [usize; 3],
    block: usize,
    extent: [f64; 3],
}

impl GridConfig {
    /// Cubic grid of `n³` cells on the unit cube.
    pub fn cube(n: usize, block: usize) -> Result<Self, GridError> {
        Self::new([n, n, n], block, [1.0; 3])
    }

    /// Grid with `cells[a]` cells along axis `a`. The cell spacing must be the
    /// same along every axis.
    pub fn new(cells: [usize; 3], block: usize, extent: [f64; 3]) -> Result<Self, GridError> {
        if block < NGHOST {
            return Err(GridError::Config(format!(
                "block size {block} is smaller than the ghost width {NGHOST}"
            )));
        }
        for (axis, &n) in cells.iter().enumerate() {
            let name = AXIS_NAMES[axis];
            if n == 0 {
                return Err(GridError::Config(format!("n{name} must be positive")));
            }
            if n % block != 0 {
                return Err(GridError::Config(format!(
                    "n{name} = {n} is not divisible by the block size {block}"
                )));
            }
            if n / block > MAX_BLOCKS_PER_AXIS {
                return Err(GridError::Config(format!("too many blocks along {name}")));
            }
            if !(extent[axis].is_finite() && extent[axis] > 0.0) {
                return Err(GridError::Config(format!("extent along {name} must be positive")));
            }
        }
        let dx = extent[0] / cells[0] as f64;
        for axis in 1..3 {
            let d = extent[axis] / cells[axis] as f64;
            if ((d - dx) / dx).abs() > 1e-12 {
                return Err(GridError::Config(format!(
                    "cell spacing along {} ({d}) differs from x ({dx})",
                    AXIS_NAMES[axis]
                )));
            }
        }
        Ok(Self { cells, block, extent })
    }

    pub fn cells(&self) -> [usize; 3] {
        self.cells
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn extent(&self) -> [f64; 3] {
        self.extent
    }

    /// Padded block edge length, `block + 2·NGHOST`.
    pub fn padded(&self) -> usize {
        self.block + 2 * NGHOST
    }

    pub fn dx(&self) -> f64 {
        self.extent[0] / self.cells[0] as f64
    }

    pub fn blocks_per_axis(&self) -> [usize; 3] {
        [
            self.cells[0] / self.block,
            self.cells[1] / self.block,
            self.cells[2] / self.block,
        ]
    }

    pub fn nblocks(&self) -> usize {
        self.blocks_per_axis().iter().product()
    }

    pub fn interior_cells(&self) -> u64 {
        self.cells.iter().map(|&n| n as u64).product()
    }

    /// Block with the given block coordinates.
    pub fn block_id(&self, coords: [usize; 3]) -> Result<BlockId, GridError> {
        let morton = morton_encode(coords, self.blocks_per_axis())?;
        Ok(BlockId { coords, morton })
    }

    /// Periodic face neighbour of `id`.
    pub fn face_neighbor(&self, id: BlockId, face: Face) -> BlockId {
        let dims = self.blocks_per_axis();
        let axis = face.axis();
        let mut coords = id.coords;
        coords[axis] = match face.side() {
            Side::Low => (coords[axis] + dims[axis] - 1) % dims[axis],
            Side::High => (coords[axis] + 1) % dims[axis],
        };
        BlockId { coords, morton: interleave(coords) }
    }

    fn linear(&self, coords: [usize; 3]) -> usize {
        let d = self.blocks_per_axis();
        coords[0] + d[0] * (coords[1] + d[1] * coords[2])
    }
}

const AXIS_NAMES: [&str; 3] = ["x", "y", "z"];

/// Block coordinates together with their Morton index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId {
    pub coords: [usize; 3],
    pub morton: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Low,
    High,
}

/// One of the six block faces, in index order −x, +x, −y, +y, −z, +z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Face {
    XMinus,
    XPlus,
    YMinus,
    YPlus,
    ZMinus,
    ZPlus,
}

impl Face {
    pub const ALL: [Face; 6] = [
        Face::XMinus,
        Face::XPlus,
        Face::YMinus,
        Face::YPlus,
        Face::ZMinus,
        Face::ZPlus,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Face> {
        Self::ALL.get(index).copied()
    }

    pub fn axis(self) -> usize {
        self.index() / 2
    }

    pub fn side(self) -> Side {
        if self.index().is_multiple_of(2) {
            Side::Low
        } else {
            Side::High
        }
    }

    pub fn opposite(self) -> Face {
        Self::ALL[self.index() ^ 1]
    }
}

fn spread_bits(v: u64) -> u64 {
    // 21 input bits, each moved to position 3·i.
    let mut x = v & 0x1f_ffff;
    x = (x | (x << 32)) & 0x001f_0000_0000_ffff;
    x = (x | (x << 16)) & 0x001f_0000_ff00_00ff;
    x = (x | (x << 8)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x << 4)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x << 2)) & 0x1249_2492_4924_9249;
    x
}

fn compact_bits(v: u64) -> u64 {
    let mut x = v & 0x1249_2492_4924_9249;
    x = (x | (x >> 2)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x >> 4)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x >> 8)) & 0x001f_0000_ff00_00ff;
    x = (x | (x >> 16)) & 0x001f_0000_0000_ffff;
    x = (x | (x >> 32)) & 0x1f_ffff;
    x
}

fn interleave(coords: [usize; 3]) -> u64 {
    spread_bits(coords[0] as u64)
        | (spread_bits(coords[1] as u64) << 1)
        | (spread_bits(coords[2] as u64) << 2)
}

/// Interleave block coordinates: bit `i` of x goes to bit `3i`, y to `3i+1`,
/// z to `3i+2`.
pub fn morton_encode(coords: [usize; 3], dims: [usize; 3]) -> Result<u64, GridError> {
    if coords.iter().zip(dims.iter()).any(|(c, d)| c >= d) {
        return Err(GridError::OutOfRange { coords, dims });
    }
    Ok(interleave(coords))
}

pub fn morton_decode(morton: u64) -> [usize; 3] {
    [
        compact_bits(morton) as usize,
        compact_bits(morton >> 1) as usize,
        compact_bits(morton >> 2) as usize,
    ]
}

/// Assignment of Morton-ordered blocks to ranks in contiguous chunks.
#[derive(Debug, Clone)]
pub struct Decomposition {
    grid: GridConfig,
    nranks: usize,
    /// Every block, sorted by Morton index.
    order: Vec<BlockId>,
    /// `starts[r]..starts[r + 1]` is the chunk of `order` owned by rank `r`.
    starts: Vec<usize>,
    /// Position in `order`, indexed by linear block coordinates.
    position: Vec<usize>,
}

/// Split the Morton sequence of `grid` into `nranks` chunks whose sizes differ
/// by at most one; the first `nblocks % nranks` ranks take the larger chunks.
pub fn decompose(grid: &GridConfig, nranks: usize) -> Result<Decomposition, GridError> {
    let nblocks = grid.nblocks();
    if nranks == 0 || nranks > nblocks {
        return Err(GridError::TooManyRanks { nranks, nblocks });
    }
    let dims = grid.blocks_per_axis();
    let mut order = Vec::with_capacity(nblocks);
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let coords = [i, j, k];
                order.push(BlockId { coords, morton: interleave(coords) });
            }
        }
    }
    order.sort_unstable_by_key(|b| b.morton);

    let base = nblocks / nranks;
    let extra = nblocks % nranks;
    let mut starts = Vec::with_capacity(nranks + 1);
    let mut at = 0;
    starts.push(0);
    for r in 0..nranks {
        at += base + usize::from(r < extra);
        starts.push(at);
    }

    let mut position = vec![0; nblocks];
    for (seq, id) in order.iter().enumerate() {
        position[grid.linear(id.coords)] = seq;
    }
    Ok(Decomposition { grid: grid.clone(), nranks, order, starts, position })
}

impl Decomposition {
    pub fn grid(&self) -> &GridConfig {
        &self.grid
    }

    pub fn nranks(&self) -> usize {
        self.nranks
    }

    /// All blocks in Morton order.
    pub fn blocks(&self) -> &[BlockId] {
        &self.order
    }

    /// Blocks owned by `rank`, in Morton order.
    pub fn blocks_of(&self, rank: usize) -> &[BlockId] {
        &self.order[self.starts[rank]..self.starts[rank + 1]]
    }

    /// Position of `id` in the global Morton sequence.
    pub fn sequence_index(&self, id: BlockId) -> usize {
        self.position[self.grid.linear(id.coords)]
    }

    pub fn owner(&self, id: BlockId) -> usize {
        let seq = self.sequence_index(id);
        // `starts` is sorted; find the chunk containing `seq`.
        self.starts.partition_point(|&s| s <= seq) - 1
    }

    /// Index of `id` within its owner's local block list.
    pub fn local_index(&self, id: BlockId) -> usize {
        self.sequence_index(id) - self.starts[self.owner(id)]
    }

    pub fn chunk_sizes(&self) -> Vec<usize> {
        self.starts.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// One block's conserved variables with ghost layers.
///
/// Layout is `[var][z][y][x]` over the padded extent, x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub id: BlockId,
    pub owner: usize,
    nvar: usize,
    size: usize,
    pub data: Vec<f64>,
}

impl Block {
    pub fn new(id: BlockId, owner: usize, nvar: usize, size: usize) -> Self {
        let padded = size + 2 * NGHOST;
        Self { id, owner, nvar, size, data: vec![0.0; nvar * padded * padded * padded] }
    }

    pub fn nvar(&self) -> usize {
        self.nvar
    }

    /// Interior cells per axis.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn padded(&self) -> usize {
        self.size + 2 * NGHOST
    }

    /// Flat index of padded cell `(i, j, k)` of variable `var`.
    #[inline]
    pub fn index(&self, var: usize, i: usize, j: usize, k: usize) -> usize {
        let p = self.padded();
        ((var * p + k) * p + j) * p + i
    }

    #[inline]
    pub fn get(&self, var: usize, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.index(var, i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, var: usize, i: usize, j: usize, k: usize, value: f64) {
        let at = self.index(var, i, j, k);
        self.data[at] = value;
    }

    /// Global cell coordinates of padded cell `(i, j, k)`, unwrapped (may be
    /// negative or past the grid edge for ghost cells).
    pub fn global_cell(&self, i: usize, j: usize, k: usize) -> [i64; 3] {
        let local = [i, j, k];
        let mut out = [0i64; 3];
        for a in 0..3 {
            out[a] = (self.id.coords[a] * self.size) as i64 + local[a] as i64 - NGHOST as i64;
        }
        out
    }

    /// Interior values only, ordered `[var][z][y][x]`.
    pub fn interior(&self) -> Vec<f64> {
        let n = self.size;
        let mut out = Vec::with_capacity(self.nvar * n * n * n);
        for v in 0..self.nvar {
            for k in NGHOST..NGHOST + n {
                for j in NGHOST..NGHOST + n {
                    let start = self.index(v, NGHOST, j, k);
                    out.extend_from_slice(&self.data[start..start + n]);
                }
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn morton_examples() {
        let dims = [4, 4, 4];
        assert_eq!(morton_encode([0, 0, 0], dims).unwrap(), 0);
        assert_eq!(morton_encode([1, 1, 1], dims).unwrap(), 7);
        // x = 0b10 -> bit 1 of x lands at position 3.
        assert_eq!(morton_encode([2, 0, 0], dims).unwrap(), 8);
        assert_eq!(morton_encode([0, 2, 0], dims).unwrap(), 16);
        assert_eq!(morton_encode([0, 0, 2], dims).unwrap(), 32);
    }

    #[test]
    fn morton_out_of_range() {
        assert!(matches!(
            morton_encode([4, 0, 0], [4, 4, 4]),
            Err(GridError::OutOfRange { .. })
        ));
    }

    #[test]
    fn morton_roundtrip_up_to_64() {
        for k in 0..64 {
            for j in 0..64 {
                for i in 0..64 {
                    let m = morton_encode([i, j, k], [64; 3]).unwrap();
                    assert_eq!(morton_decode(m), [i, j, k]);
                }
            }
        }
    }

    #[test]
    fn decompose_examples() {
        let g = GridConfig::cube(16, 8).unwrap();
        let d = decompose(&g, 1).unwrap();
        assert!(d.blocks().iter().all(|&b| d.owner(b) == 0));

        let d = decompose(&g, 8).unwrap();
        for &b in d.blocks() {
            assert_eq!(d.owner(b) as u64, b.morton);
        }

        let g = GridConfig::cube(24, 8).unwrap();
        let d = decompose(&g, 4).unwrap();
        assert_eq!(d.chunk_sizes(), vec![7, 7, 7, 6]);
        let mortons: Vec<u64> = d.blocks().iter().map(|b| b.morton).collect();
        assert!(mortons.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn decompose_too_many_ranks() {
        let g = GridConfig::cube(16, 8).unwrap();
        assert!(matches!(decompose(&g, 9), Err(GridError::TooManyRanks { .. })));
        assert!(decompose(&g, 0).is_err());
    }

    #[test]
    fn face_neighbor_examples() {
        let g = GridConfig::cube(32, 8).unwrap();
        let b = g.block_id([0, 0, 0]).unwrap();
        assert_eq!(g.face_neighbor(b, Face::XMinus).coords, [3, 0, 0]);
        let b = g.block_id([1, 2, 3]).unwrap();
        assert_eq!(g.face_neighbor(b, Face::YPlus).coords, [1, 3, 3]);

        let single = GridConfig::cube(8, 8).unwrap();
        let b = single.block_id([0, 0, 0]).unwrap();
        for f in Face::ALL {
            assert_eq!(single.face_neighbor(b, f), b);
        }
    }

    #[test]
    fn grid_validation() {
        assert!(GridConfig::cube(64, 15).is_err());
        assert!(GridConfig::cube(64, 1).is_err());
        assert!(GridConfig::new([64, 8, 8], 8, [1.0, 1.0, 1.0]).is_err());
        let g = GridConfig::new([64, 8, 8], 8, [1.0, 0.125, 0.125]).unwrap();
        assert_eq!(g.nblocks(), 8);
        assert_eq!(g.dx(), 1.0 / 64.0);
    }

    #[test]
    fn block_layout_is_x_fastest() {
        let g = GridConfig::cube(8, 8).unwrap();
        let b = Block::new(g.block_id([0, 0, 0]).unwrap(), 0, 2, 8);
        assert_eq!(b.data.len(), 2 * 12 * 12 * 12);
        assert_eq!(b.index(0, 1, 0, 0), 1);
        assert_eq!(b.index(0, 0, 1, 0), 12);
        assert_eq!(b.index(1, 0, 0, 0), 12 * 12 * 12);
    }

    proptest! {
        #[test]
        fn decomposition_is_balanced_partition(
            bx in 1usize..5, by in 1usize..5, bz in 1usize..5, r in 1usize..20
        ) {
            let g = GridConfig::new([bx * 2, by * 2, bz * 2], 2, [bx as f64, by as f64, bz as f64]).unwrap();
            let nranks = r.min(g.nblocks());
            let d = decompose(&g, nranks).unwrap();
            let mut seen = vec![0u32; g.nblocks()];
            for rank in 0..nranks {
                for &b in d.blocks_of(rank) {
                    prop_assert_eq!(d.owner(b), rank);
                    seen[g.linear(b.coords)] += 1;
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
            let sizes = d.chunk_sizes();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }

        #[test]
        fn opposite_faces_cancel(i in 0usize..5, j in 0usize..5, k in 0usize..5, f in 0usize..6) {
            let g = GridConfig::cube(10, 2).unwrap();
            let b = g.block_id([i, j, k]).unwrap();
            let face = Face::from_index(f).unwrap();
            let back = g.face_neighbor(g.face_neighbor(b, face), face.opposite());
            prop_assert_eq!(back, b);
        }
    }
}
