//! Uniform background grid for the state variables and the dyadic quadtree
//! that carries the piecewise-constant parameter.
//!
//! Both live on the square `(-1, 1)^2`. The quadtree never refines below the
//! background resolution, so every leaf is a union of whole background cells
//! and every background cell has exactly one owning leaf.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub const DOMAIN_MIN: f64 = -1.0;
pub const DOMAIN_MAX: f64 = 1.0;
pub const DOMAIN_SIDE: f64 = DOMAIN_MAX - DOMAIN_MIN;

/// Uniform `n x n` cell grid on the domain with bilinear nodal unknowns.
///
/// Nodes are numbered row by row, `node = iy * (n + 1) + ix`; cells likewise
/// with `cell = cy * n + cx`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UniformGrid {
    cells: usize,
}

impl UniformGrid {
    /// `2^levels x 2^levels` cells.
    pub fn from_levels(levels: u32) -> Self {
        assert!(levels < 16, "grid level {levels} is unreasonably fine");
        Self { cells: 1 << levels }
    }

    pub fn with_cells(cells: usize) -> Result<Self> {
        if cells == 0 {
            return Err(Error::InvalidArgument("grid needs at least one cell".into()));
        }
        Ok(Self { cells })
    }

    /// The dyadic level if the cell count is a power of two.
    pub fn levels(&self) -> Option<u32> {
        self.cells.is_power_of_two().then(|| self.cells.trailing_zeros())
    }

    pub fn cells_per_side(&self) -> usize {
        self.cells
    }

    pub fn nodes_per_side(&self) -> usize {
        self.cells + 1
    }

    pub fn node_count(&self) -> usize {
        self.nodes_per_side() * self.nodes_per_side()
    }

    pub fn cell_count(&self) -> usize {
        self.cells * self.cells
    }

    /// Cell edge length.
    pub fn h(&self) -> f64 {
        DOMAIN_SIDE / self.cells as f64
    }

    pub fn node_index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nodes_per_side() + ix
    }

    pub fn node_ij(&self, node: usize) -> (usize, usize) {
        (node % self.nodes_per_side(), node / self.nodes_per_side())
    }

    pub fn node_coords(&self, node: usize) -> [f64; 2] {
        let (ix, iy) = self.node_ij(node);
        [self.coord(ix), self.coord(iy)]
    }

    pub fn coord(&self, i: usize) -> f64 {
        DOMAIN_MIN + i as f64 * self.h()
    }

    pub fn is_boundary_node(&self, node: usize) -> bool {
        let (ix, iy) = self.node_ij(node);
        ix == 0 || iy == 0 || ix == self.cells || iy == self.cells
    }

    pub fn cell_index(&self, cx: usize, cy: usize) -> usize {
        cy * self.cells + cx
    }

    pub fn cell_ij(&self, cell: usize) -> (usize, usize) {
        (cell % self.cells, cell / self.cells)
    }

    pub fn cell_center(&self, cx: usize, cy: usize) -> [f64; 2] {
        let h = self.h();
        [DOMAIN_MIN + (cx as f64 + 0.5) * h, DOMAIN_MIN + (cy as f64 + 0.5) * h]
    }

    /// Corner nodes of a cell in the order SW, SE, NW, NE.
    pub fn cell_nodes(&self, cx: usize, cy: usize) -> [usize; 4] {
        let sw = self.node_index(cx, cy);
        let np = self.nodes_per_side();
        [sw, sw + 1, sw + np, sw + np + 1]
    }

    /// Containing cell and local coordinates `(s, t) in [0, 1]^2` of a point
    /// in the closed domain. Points on interior grid lines go to the cell on
    /// the upper/right side.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, usize, f64, f64)> {
        if !(DOMAIN_MIN..=DOMAIN_MAX).contains(&x) || !(DOMAIN_MIN..=DOMAIN_MAX).contains(&y) {
            return None;
        }
        let h = self.h();
        let locate_1d = |v: f64| {
            let r = (v - DOMAIN_MIN) / h;
            let c = (r.floor() as usize).min(self.cells - 1);
            (c, (r - c as f64).clamp(0.0, 1.0))
        };
        let (cx, s) = locate_1d(x);
        let (cy, t) = locate_1d(y);
        Some((cx, cy, s, t))
    }
}

/// Quadtree leaf: a dyadic square at `level` with index `(i, j)` along x and y.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Leaf {
    pub level: u32,
    pub i: u32,
    pub j: u32,
}

impl Leaf {
    pub fn new(level: u32, i: u32, j: u32) -> Self {
        Self { level, i, j }
    }

    /// Edge length.
    pub fn size(&self) -> f64 {
        DOMAIN_SIDE / (1u64 << self.level) as f64
    }

    pub fn area(&self) -> f64 {
        self.size() * self.size()
    }

    pub fn diameter(&self) -> f64 {
        std::f64::consts::SQRT_2 * self.size()
    }

    pub fn x_min(&self) -> f64 {
        DOMAIN_MIN + self.i as f64 * self.size()
    }

    pub fn y_min(&self) -> f64 {
        DOMAIN_MIN + self.j as f64 * self.size()
    }

    pub fn center(&self) -> [f64; 2] {
        let half = 0.5 * self.size();
        [self.x_min() + half, self.y_min() + half]
    }

    /// Morton (z-order) index of `(i, j)` within its level; x occupies the
    /// even bits.
    pub fn morton(&self) -> u64 {
        spread_bits(self.i) | (spread_bits(self.j) << 1)
    }

    /// Sort key giving the canonical leaf ordering: level first, then z-order.
    pub fn order_key(&self) -> (u32, u64) {
        (self.level, self.morton())
    }

    pub fn children(&self) -> [Leaf; 4] {
        let (l, i, j) = (self.level + 1, 2 * self.i, 2 * self.j);
        [
            Leaf::new(l, i, j),
            Leaf::new(l, i + 1, j),
            Leaf::new(l, i, j + 1),
            Leaf::new(l, i + 1, j + 1),
        ]
    }

    /// Reflection about `y = 0`.
    pub fn mirror_y(&self) -> Leaf {
        Leaf::new(self.level, self.i, (1u32 << self.level) - 1 - self.j)
    }
}

fn spread_bits(v: u32) -> u64 {
    let mut x = v as u64;
    x = (x | (x << 16)) & 0x0000_FFFF_0000_FFFF;
    x = (x | (x << 8)) & 0x00FF_00FF_00FF_00FF;
    x = (x | (x << 4)) & 0x0F0F_0F0F_0F0F_0F0F;
    x = (x | (x << 2)) & 0x3333_3333_3333_3333;
    x = (x | (x << 1)) & 0x5555_5555_5555_5555;
    x
}

/// Side of a leaf, used by the neighbor queries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    West = 0,
    East = 1,
    South = 2,
    North = 3,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::West, Side::East, Side::South, Side::North];
}

/// Hierarchical partition of the domain into dyadic leaves.
///
/// Leaves are kept sorted by [`Leaf::order_key`]; the mesh is immutable and
/// refinement returns a new mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadtreeMesh {
    leaves: Vec<Leaf>,
    max_level: u32,
    /// Owning leaf of every cell of the `2^max_level` background grid.
    cell_owner: Vec<usize>,
}

/// Result of [`QuadtreeMesh::refine`].
#[derive(Clone, Debug)]
pub struct Refinement {
    pub mesh: QuadtreeMesh,
    /// Marked leaves (indices into the old mesh) that were already at the
    /// resolution cap.
    pub skipped: Vec<usize>,
}

impl QuadtreeMesh {
    /// Uniform quadtree with `4^level` leaves.
    pub fn uniform(level: u32, max_level: u32) -> Result<Self> {
        if level > max_level {
            return Err(Error::InvalidArgument(format!(
                "initial level {level} exceeds the background level {max_level}"
            )));
        }
        let n = 1u32 << level;
        let leaves = (0..n)
            .flat_map(|j| (0..n).map(move |i| Leaf::new(level, i, j)))
            .collect();
        Self::from_leaves(leaves, max_level)
    }

    /// Builds a mesh from an arbitrary leaf set, checking that it tiles the
    /// domain exactly.
    pub fn from_leaves(mut leaves: Vec<Leaf>, max_level: u32) -> Result<Self> {
        leaves.sort_by_key(Leaf::order_key);
        let side = 1usize << max_level;
        let mut cell_owner = vec![usize::MAX; side * side];
        for (k, leaf) in leaves.iter().enumerate() {
            if leaf.level > max_level {
                return Err(Error::Misaligned(format!(
                    "leaf {leaf:?} is finer than the background level {max_level}"
                )));
            }
            if leaf.i >= 1 << leaf.level || leaf.j >= 1 << leaf.level {
                return Err(Error::InvalidArgument(format!("leaf {leaf:?} lies outside the domain")));
            }
            let span = 1usize << (max_level - leaf.level);
            let (cx0, cy0) = (leaf.i as usize * span, leaf.j as usize * span);
            for cy in cy0..cy0 + span {
                for cx in cx0..cx0 + span {
                    let slot = &mut cell_owner[cy * side + cx];
                    if *slot != usize::MAX {
                        return Err(Error::InvalidArgument(format!("leaves {} and {k} overlap", *slot)));
                    }
                    *slot = k;
                }
            }
        }
        if cell_owner.contains(&usize::MAX) {
            return Err(Error::InvalidArgument("leaves do not cover the domain".into()));
        }
        Ok(Self {
            leaves,
            max_level,
            cell_owner,
        })
    }

    pub fn leaves(&self) -> &[Leaf] {
        &self.leaves
    }

    pub fn leaf(&self, k: usize) -> &Leaf {
        &self.leaves[k]
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn max_level(&self) -> u32 {
        self.max_level
    }

    pub fn areas(&self) -> Vec<f64> {
        self.leaves.iter().map(Leaf::area).collect()
    }

    pub fn min_area(&self) -> f64 {
        self.leaves.iter().map(Leaf::area).fold(f64::INFINITY, f64::min)
    }

    /// Background cells per side.
    pub fn background_cells(&self) -> usize {
        1 << self.max_level
    }

    /// Leaf owning background cell `(cx, cy)`.
    pub fn owner(&self, cx: usize, cy: usize) -> usize {
        self.cell_owner[cy * self.background_cells() + cx]
    }

    /// Owning leaf for every background cell, in grid cell order.
    pub fn cell_owners(&self) -> &[usize] {
        &self.cell_owner
    }

    /// Range of background cells covered by leaf `k` along x and y.
    pub fn cell_range(&self, k: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let leaf = &self.leaves[k];
        let span = 1usize << (self.max_level - leaf.level);
        let (cx0, cy0) = (leaf.i as usize * span, leaf.j as usize * span);
        (cx0..cx0 + span, cy0..cy0 + span)
    }

    /// Index of a leaf in this mesh.
    pub fn find(&self, leaf: &Leaf) -> Option<usize> {
        self.leaves
            .binary_search_by_key(&leaf.order_key(), Leaf::order_key)
            .ok()
    }

    /// Splits every marked leaf into its four children. Leaves already at the
    /// resolution cap are left alone and reported in `skipped`.
    pub fn refine(&self, marked: &[usize]) -> Result<Refinement> {
        let mut split = vec![false; self.leaves.len()];
        let mut skipped = Vec::new();
        for &k in marked {
            let leaf = self.leaves.get(k).ok_or_else(|| {
                Error::InvalidArgument(format!("leaf index {k} out of range ({})", self.leaves.len()))
            })?;
            if leaf.level >= self.max_level {
                if !skipped.contains(&k) {
                    skipped.push(k);
                }
            } else {
                split[k] = true;
            }
        }
        skipped.sort_unstable();
        let mut leaves = Vec::with_capacity(self.leaves.len() + 3 * marked.len());
        for (leaf, &s) in self.leaves.iter().zip(&split) {
            if s {
                leaves.extend(leaf.children());
            } else {
                leaves.push(*leaf);
            }
        }
        Ok(Refinement {
            mesh: Self::from_leaves(leaves, self.max_level)?,
            skipped,
        })
    }

    /// Neighbors across one side of leaf `k` with the shared edge length,
    /// sorted by neighbor index. Empty on the domain boundary.
    pub fn side_neighbors(&self, k: usize, side: Side) -> Vec<(usize, f64)> {
        let n = self.background_cells();
        let h = DOMAIN_SIDE / n as f64;
        let (xr, yr) = self.cell_range(k);
        let cells: Vec<(usize, usize)> = match side {
            Side::West if xr.start > 0 => yr.map(|cy| (xr.start - 1, cy)).collect(),
            Side::East if xr.end < n => yr.map(|cy| (xr.end, cy)).collect(),
            Side::South if yr.start > 0 => xr.map(|cx| (cx, yr.start - 1)).collect(),
            Side::North if yr.end < n => xr.map(|cx| (cx, yr.end)).collect(),
            _ => Vec::new(),
        };
        let mut shared: BTreeMap<usize, usize> = BTreeMap::new();
        for (cx, cy) in cells {
            *shared.entry(self.owner(cx, cy)).or_default() += 1;
        }
        shared.into_iter().map(|(nb, count)| (nb, count as f64 * h)).collect()
    }

    /// All leaves sharing a positive-length edge with leaf `k`.
    pub fn leaf_neighbors(&self, k: usize) -> Vec<(usize, f64)> {
        let mut all: BTreeMap<usize, f64> = BTreeMap::new();
        for side in Side::ALL {
            for (nb, len) in self.side_neighbors(k, side) {
                *all.entry(nb).or_default() += len;
            }
        }
        all.into_iter().collect()
    }

    /// True if the leaf set equals its reflection about `y = 0`.
    pub fn is_mirror_symmetric(&self) -> bool {
        self.leaves.iter().all(|l| self.find(&l.mirror_y()).is_some())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_levels() {
        let m = QuadtreeMesh::uniform(0, 7).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.leaf(0).area(), 4.0);

        let m = QuadtreeMesh::uniform(4, 7).unwrap();
        assert_eq!(m.len(), 256);
        assert!(m.leaves().iter().all(|l| l.area() == 4.0 / 256.0));

        let m = QuadtreeMesh::uniform(7, 7).unwrap();
        assert_eq!(m.len(), 16384);
        assert!(m.leaves().iter().all(|l| l.size() == UniformGrid::from_levels(7).h()));

        assert!(QuadtreeMesh::uniform(8, 7).is_err());
    }

    #[test]
    fn single_split() {
        let m = QuadtreeMesh::uniform(0, 3).unwrap();
        let r = m.refine(&[0]).unwrap();
        assert_eq!(r.mesh.len(), 4);
        assert!(r.mesh.leaves().iter().all(|l| l.area() == 1.0));
        assert!(r.skipped.is_empty());
    }

    #[test]
    fn empty_marking_is_noop() {
        let m = QuadtreeMesh::uniform(4, 7).unwrap();
        let r = m.refine(&[]).unwrap();
        assert_eq!(r.mesh, m);
    }

    #[test]
    fn capped_leaves_are_skipped() {
        let m = QuadtreeMesh::uniform(2, 2).unwrap();
        let r = m.refine(&[3, 5, 3]).unwrap();
        assert_eq!(r.skipped, vec![3, 5]);
        assert_eq!(r.mesh, m);
        assert!(m.refine(&[16]).is_err());
    }

    #[test]
    fn ordering_is_level_then_morton() {
        let m = QuadtreeMesh::uniform(1, 3).unwrap();
        let order: Vec<_> = m.leaves().iter().map(|l| (l.i, l.j)).collect();
        assert_eq!(order, vec![(0, 0), (1, 0), (0, 1), (1, 1)]);
        let r = m.refine(&[0]).unwrap().mesh;
        assert_eq!(r.leaf(0).level, 1);
        assert_eq!(r.leaves().last().unwrap().level, 2);
    }

    #[test]
    fn corner_leaf_has_two_neighbors() {
        let m = QuadtreeMesh::uniform(1, 3).unwrap();
        let nb = m.leaf_neighbors(0);
        assert_eq!(nb, vec![(1, 1.0), (2, 1.0)]);
        let single = QuadtreeMesh::uniform(0, 3).unwrap();
        assert!(single.leaf_neighbors(0).is_empty());
    }

    #[test]
    fn coarse_leaf_sees_two_fine_neighbors() {
        // refine the south-west quadrant; the south-east coarse leaf then has
        // two fine neighbors on its west side
        let m = QuadtreeMesh::uniform(1, 3).unwrap();
        let m = m.refine(&[0]).unwrap().mesh;
        let se = m.find(&Leaf::new(1, 1, 0)).unwrap();
        let west = m.side_neighbors(se, Side::West);
        assert_eq!(west.len(), 2);
        for (nb, len) in west {
            assert_eq!(m.leaf(nb).level, 2);
            assert_eq!(len, 0.5);
        }
    }

    #[test]
    fn mirror_of_leaf() {
        let l = Leaf::new(2, 1, 0);
        assert_eq!(l.mirror_y(), Leaf::new(2, 1, 3));
        assert_eq!(l.mirror_y().mirror_y(), l);
        assert!(QuadtreeMesh::uniform(3, 5).unwrap().is_mirror_symmetric());
    }

    #[test]
    fn locate_points() {
        let g = UniformGrid::from_levels(2);
        assert_eq!(g.locate(-1.0, -1.0), Some((0, 0, 0.0, 0.0)));
        let (cx, cy, s, t) = g.locate(1.0, 1.0).unwrap();
        assert_eq!((cx, cy), (3, 3));
        assert_eq!((s, t), (1.0, 1.0));
        assert!(g.locate(1.5, 0.0).is_none());
    }
}
