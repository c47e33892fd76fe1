//! Bilinear finite elements for the stationary advection-diffusion operator
//! `b . grad u - D lap u` with homogeneous Dirichlet conditions on the
//! background grid, plus the couplings between state space, parameter leaves
//! and point detectors.

use nalgebra::DMatrix;

use crate::banded::BandedLu;
use crate::error::{Error, Result};
use crate::mesh::{QuadtreeMesh, UniformGrid, DOMAIN_MAX, DOMAIN_MIN, DOMAIN_SIDE};

/// Sparse vector as `(index, value)` pairs.
pub type SparseVec = Vec<(usize, f64)>;

/// Nodal field on a background grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: UniformGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: UniformGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::Dimension(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.node_count()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: UniformGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.node_count()],
        }
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Bilinear interpolation at a point of the closed domain.
    pub fn evaluate(&self, x: f64, y: f64) -> Option<f64> {
        let (cx, cy, s, t) = self.grid.locate(x, y)?;
        let w = bilinear_weights(s, t);
        let nodes = self.grid.cell_nodes(cx, cy);
        Some((0..4).map(|a| w[a] * self.values[nodes[a]]).sum())
    }

    /// Mean of the four corner values, i.e. the value at the cell center.
    pub fn cell_center_value(&self, cx: usize, cy: usize) -> f64 {
        let nodes = self.grid.cell_nodes(cx, cy);
        0.25 * nodes.iter().map(|&n| self.values[n]).sum::<f64>()
    }

    /// Integral over one background cell (exact for the bilinear field).
    pub fn cell_integral(&self, cx: usize, cy: usize) -> f64 {
        let h = self.grid.h();
        self.cell_center_value(cx, cy) * h * h
    }

    /// `L2` distance to a closed-form function, by 3x3 Gauss per cell.
    pub fn l2_error<F: Fn(f64, f64) -> f64>(&self, exact: F) -> f64 {
        let g = &self.grid;
        let h = g.h();
        let rule = gauss_rule(3);
        let mut sum = 0.0;
        for cy in 0..g.cells_per_side() {
            for cx in 0..g.cells_per_side() {
                let nodes = g.cell_nodes(cx, cy);
                for &(s, ws) in &rule {
                    for &(t, wt) in &rule {
                        let w = bilinear_weights(s, t);
                        let uh: f64 = (0..4).map(|a| w[a] * self.values[nodes[a]]).sum();
                        let x = g.coord(cx) + s * h;
                        let y = g.coord(cy) + t * h;
                        let e = uh - exact(x, y);
                        sum += ws * wt * h * h * e * e;
                    }
                }
            }
        }
        sum.sqrt()
    }
}

/// Bilinear shape values at local coordinates, order SW, SE, NW, NE.
pub fn bilinear_weights(s: f64, t: f64) -> [f64; 4] {
    [(1.0 - s) * (1.0 - t), s * (1.0 - t), (1.0 - s) * t, s * t]
}

/// Gauss-Legendre points and weights on `[0, 1]`.
pub fn gauss_rule(points: usize) -> Vec<(f64, f64)> {
    match points {
        1 => vec![(0.5, 1.0)],
        2 => {
            let d = 0.5 / 3f64.sqrt();
            vec![(0.5 - d, 0.5), (0.5 + d, 0.5)]
        }
        3 => {
            let d = 0.5 * (0.6f64).sqrt();
            vec![(0.5 - d, 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + d, 5.0 / 18.0)]
        }
        _ => panic!("Gauss rule with {points} points not tabulated"),
    }
}

/// Quadrature used for right-hand sides.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quadrature {
    /// Tensor Gauss rule with the given number of points per direction.
    Gauss(usize),
    /// `n x n` midpoint sub-cells; suited to discontinuous sources.
    Midpoint(usize),
}

impl Quadrature {
    fn points(self) -> Vec<(f64, f64)> {
        match self {
            Quadrature::Gauss(n) => gauss_rule(n),
            Quadrature::Midpoint(n) => (0..n).map(|i| ((i as f64 + 0.5) / n as f64, 1.0 / n as f64)).collect(),
        }
    }
}

/// Load vector `F_i = \int f phi_i` with Dirichlet rows zeroed.
pub fn load_vector<F: Fn(f64, f64) -> f64>(grid: &UniformGrid, f: F, rule: Quadrature) -> Vec<f64> {
    let h = grid.h();
    let pts = rule.points();
    let mut rhs = vec![0.0; grid.node_count()];
    for cy in 0..grid.cells_per_side() {
        for cx in 0..grid.cells_per_side() {
            let nodes = grid.cell_nodes(cx, cy);
            for &(s, ws) in &pts {
                for &(t, wt) in &pts {
                    let fx = f(grid.coord(cx) + s * h, grid.coord(cy) + t * h);
                    if fx == 0.0 {
                        continue;
                    }
                    let w = bilinear_weights(s, t);
                    for a in 0..4 {
                        rhs[nodes[a]] += ws * wt * h * h * fx * w[a];
                    }
                }
            }
        }
    }
    for (i, r) in rhs.iter_mut().enumerate() {
        if grid.is_boundary_node(i) {
            *r = 0.0;
        }
    }
    rhs
}

/// Assembled operator in compressed-row form with Dirichlet rows and columns
/// replaced by identity.
#[derive(Clone, Debug)]
pub struct SparseOperator {
    grid: UniformGrid,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    constrained: Vec<bool>,
    diffusion: f64,
    wind: [f64; 2],
    stability_warning: Option<String>,
}

impl SparseOperator {
    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.node_count()
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn is_constrained(&self, i: usize) -> bool {
        self.constrained[i]
    }

    pub fn diffusion(&self) -> f64 {
        self.diffusion
    }

    pub fn wind(&self) -> [f64; 2] {
        self.wind
    }

    /// `|b| h / (2 D)` on the background grid.
    pub fn cell_peclet(&self) -> f64 {
        cell_peclet(&self.grid, self.diffusion, self.wind)
    }

    /// `|b| L / D` with `L` the side length of the domain.
    pub fn problem_peclet(&self) -> f64 {
        problem_peclet(self.diffusion, self.wind)
    }

    pub fn stability_warning(&self) -> Option<&str> {
        self.stability_warning.as_deref()
    }

    /// Nonzero entries as `(row, col, value)`.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim())
            .flat_map(move |r| (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |p| (r, self.cols[p], self.vals[p])))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.cols[range.clone()].binary_search(&c) {
            Ok(p) => self.vals[range.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .map(|p| self.vals[p] * x[self.cols[p]])
                    .sum()
            })
            .collect()
    }

    pub fn transpose_matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        for (r, c, v) in self.triplets() {
            y[c] += v * x[r];
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.dim(), self.dim());
        for (r, c, v) in self.triplets() {
            a[(r, c)] = v;
        }
        a
    }

    /// Lower and upper bandwidth of the stored pattern.
    pub fn bandwidths(&self) -> (usize, usize) {
        self.triplets().fold((0, 0), |(kl, ku), (r, c, _)| {
            (kl.max(r.saturating_sub(c)), ku.max(c.saturating_sub(r)))
        })
    }
}

pub fn cell_peclet(grid: &UniformGrid, diffusion: f64, wind: [f64; 2]) -> f64 {
    wind[0].hypot(wind[1]) * grid.h() / (2.0 * diffusion)
}

pub fn problem_peclet(diffusion: f64, wind: [f64; 2]) -> f64 {
    wind[0].hypot(wind[1]) * DOMAIN_SIDE / diffusion
}

/// Galerkin discretization of `b . grad u - D lap u` with 2x2 Gauss
/// quadrature per cell and homogeneous Dirichlet conditions.
pub fn assemble_operator(grid: &UniformGrid, diffusion: f64, wind: [f64; 2]) -> Result<SparseOperator> {
    if !(diffusion > 0.0) || !diffusion.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "diffusion coefficient must be positive, got {diffusion}"
        )));
    }
    if !wind.iter().all(|w| w.is_finite()) {
        return Err(Error::InvalidArgument("wind field must be finite".into()));
    }
    let h = grid.h();
    let rule = gauss_rule(2);
    // reference gradients of the bilinear shapes: d/ds, d/dt
    let grads = |s: f64, t: f64| -> [[f64; 2]; 4] { [[-(1.0 - t), -(1.0 - s)], [1.0 - t, -s], [-t, 1.0 - s], [t, s]] };
    let mut local = [[0.0f64; 4]; 4];
    for &(s, ws) in &rule {
        for &(t, wt) in &rule {
            let phi = bilinear_weights(s, t);
            let g = grads(s, t);
            // physical gradient = reference gradient / h, measure h^2
            let w = ws * wt;
            for i in 0..4 {
                for j in 0..4 {
                    let diff = diffusion * (g[j][0] * g[i][0] + g[j][1] * g[i][1]);
                    let adv = h * (wind[0] * g[j][0] + wind[1] * g[j][1]) * phi[i];
                    local[i][j] += w * (diff + adv);
                }
            }
        }
    }

    let n = grid.node_count();
    let constrained: Vec<bool> = (0..n).map(|i| grid.is_boundary_node(i)).collect();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::with_capacity(9); n];
    for cy in 0..grid.cells_per_side() {
        for cx in 0..grid.cells_per_side() {
            let nodes = grid.cell_nodes(cx, cy);
            for i in 0..4 {
                if constrained[nodes[i]] {
                    continue;
                }
                for j in 0..4 {
                    if constrained[nodes[j]] {
                        continue;
                    }
                    rows[nodes[i]].push((nodes[j], local[i][j]));
                }
            }
        }
    }
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    row_ptr.push(0);
    for (i, row) in rows.iter_mut().enumerate() {
        if constrained[i] {
            cols.push(i);
            vals.push(1.0);
        } else {
            row.sort_by_key(|e| e.0);
            for &(c, v) in row.iter() {
                if cols.len() > *row_ptr.last().unwrap() && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
        }
        row_ptr.push(cols.len());
    }

    let pe = cell_peclet(grid, diffusion, wind);
    let stability_warning = (pe >= 1.0).then(|| {
        let msg = format!(
            "cell Peclet number {pe:.3} >= 1 on the {0}x{0} grid; unstabilized Galerkin solution may oscillate",
            grid.cells_per_side()
        );
        log::warn!("{msg}");
        msg
    });

    Ok(SparseOperator {
        grid: *grid,
        row_ptr,
        cols,
        vals,
        constrained,
        diffusion,
        wind,
        stability_warning,
    })
}

/// Direct factorization of an operator, shared by forward and transposed
/// solves. Immutable once built, so any number of threads may solve
/// concurrently.
#[derive(Clone, Debug)]
pub struct FactorHandle {
    grid: UniformGrid,
    lu: BandedLu,
}

pub fn factorize(op: &SparseOperator) -> Result<FactorHandle> {
    let (kl, ku) = op.bandwidths();
    let lu = BandedLu::factor(op.dim(), kl, ku, op.triplets())?;
    Ok(FactorHandle { grid: op.grid, lu })
}

impl FactorHandle {
    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<ScalarField> {
        let mut x = rhs.to_vec();
        self.check_len(&x)?;
        self.lu.solve_in_place(&mut x);
        ScalarField::new(self.grid, x)
    }

    pub fn solve_transpose(&self, rhs: &[f64]) -> Result<ScalarField> {
        let mut x = rhs.to_vec();
        self.check_len(&x)?;
        self.lu.solve_transpose_in_place(&mut x);
        ScalarField::new(self.grid, x)
    }

    fn check_len(&self, rhs: &[f64]) -> Result<()> {
        if rhs.len() != self.lu.dim() {
            return Err(Error::Dimension(format!(
                "right-hand side has length {}, operator has dimension {}",
                rhs.len(),
                self.lu.dim()
            )));
        }
        Ok(())
    }
}

/// `B_{ik} = \int_{omega_k} phi_i`, stored by leaf column. Entries are kept
/// for all nodes; the `apply`/`transpose_apply`/`column_dot` methods drop the
/// Dirichlet rows.
#[derive(Clone, Debug)]
pub struct CouplingMatrix {
    grid: UniformGrid,
    columns: Vec<SparseVec>,
}

impl CouplingMatrix {
    pub fn leaf_count(&self) -> usize {
        self.columns.len()
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn column(&self, k: usize) -> &[(usize, f64)] {
        &self.columns[k]
    }

    pub fn column_sum(&self, k: usize, interior_only: bool) -> f64 {
        self.columns[k]
            .iter()
            .filter(|(i, _)| !interior_only || !self.grid.is_boundary_node(*i))
            .map(|(_, v)| v)
            .sum()
    }

    /// `sum_i v_i B_{ik}` over interior nodes.
    pub fn column_dot(&self, k: usize, v: &[f64]) -> f64 {
        self.columns[k]
            .iter()
            .filter(|(i, _)| !self.grid.is_boundary_node(*i))
            .map(|&(i, b)| b * v[i])
            .sum()
    }

    /// Constrained `B p` (Dirichlet rows zero).
    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        assert_eq!(p.len(), self.columns.len());
        let mut out = vec![0.0; self.grid.node_count()];
        for (col, &pk) in self.columns.iter().zip(p) {
            for &(i, b) in col {
                out[i] += b * pk;
            }
        }
        for (i, o) in out.iter_mut().enumerate() {
            if self.grid.is_boundary_node(i) {
                *o = 0.0;
            }
        }
        out
    }

    /// Constrained `B^T v`.
    pub fn transpose_apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.columns.len()).map(|k| self.column_dot(k, v)).collect()
    }

    pub fn to_dense(&self, constrained: bool) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.grid.node_count(), self.columns.len());
        for (k, col) in self.columns.iter().enumerate() {
            for &(i, v) in col {
                if !(constrained && self.grid.is_boundary_node(i)) {
                    b[(i, k)] += v;
                }
            }
        }
        b
    }
}

/// Closed-form coupling between bilinear nodal shapes and the leaf
/// indicator functions.
pub fn assemble_coupling(grid: &UniformGrid, mesh: &QuadtreeMesh) -> Result<CouplingMatrix> {
    if grid.levels() != Some(mesh.max_level()) {
        return Err(Error::Misaligned(format!(
            "quadtree resolution 2^{} does not match the {}x{} background grid",
            mesh.max_level(),
            grid.cells_per_side(),
            grid.cells_per_side()
        )));
    }
    let quarter = 0.25 * grid.h() * grid.h();
    let columns = (0..mesh.len())
        .map(|k| {
            let (xr, yr) = mesh.cell_range(k);
            let mut col = Vec::with_capacity((xr.len() + 1) * (yr.len() + 1));
            // a node strictly inside the leaf touches 2 cells along each axis
            let mult = |i: usize, r: &std::ops::Range<usize>| {
                if i == r.start || i == r.end {
                    1.0
                } else {
                    2.0
                }
            };
            for iy in yr.start..=yr.end {
                for ix in xr.start..=xr.end {
                    col.push((grid.node_index(ix, iy), quarter * mult(ix, &xr) * mult(iy, &yr)));
                }
            }
            col
        })
        .collect();
    Ok(CouplingMatrix { grid: *grid, columns })
}

/// Weights `phi_i(xi)` of the point-evaluation functional at an interior
/// point, in SW, SE, NW, NE order with zero weights dropped.
pub fn point_eval_vector(grid: &UniformGrid, point: [f64; 2]) -> Result<SparseVec> {
    let [x, y] = point;
    let inside = |v: f64| v > DOMAIN_MIN && v < DOMAIN_MAX;
    if !inside(x) || !inside(y) {
        return Err(Error::InvalidArgument(format!(
            "measurement point ({x}, {y}) is not strictly inside the domain"
        )));
    }
    let (cx, cy, s, t) = grid.locate(x, y).expect("interior point");
    let w = bilinear_weights(s, t);
    let nodes = grid.cell_nodes(cx, cy);
    Ok((0..4).filter(|&a| w[a] != 0.0).map(|a| (nodes[a], w[a])).collect())
}

/// Point detectors with their noise scales and, once measured, the data.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSet {
    points: Vec<[f64; 2]>,
    sigma: Vec<f64>,
    values: Option<Vec<f64>>,
}

impl MeasurementSet {
    pub fn new(points: Vec<[f64; 2]>, sigma: Vec<f64>) -> Result<Self> {
        if points.len() != sigma.len() {
            return Err(Error::Dimension(format!(
                "{} points but {} noise scales",
                points.len(),
                sigma.len()
            )));
        }
        for (p, s) in points.iter().zip(&sigma) {
            let inside = |v: f64| v > DOMAIN_MIN && v < DOMAIN_MAX;
            if !inside(p[0]) || !inside(p[1]) {
                return Err(Error::InvalidArgument(format!(
                    "detector ({}, {}) is not strictly inside the domain",
                    p[0], p[1]
                )));
            }
            if !(*s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidArgument(format!("noise scale must be positive, got {s}")));
            }
        }
        Ok(Self {
            points,
            sigma,
            values: None,
        })
    }

    pub fn empty() -> Self {
        Self {
            points: Vec::new(),
            sigma: Vec::new(),
            values: None,
        }
    }

    pub fn with_values(mut self, z: Vec<f64>) -> Result<Self> {
        if z.len() != self.points.len() {
            return Err(Error::Dimension(format!(
                "{} values for {} detectors",
                z.len(),
                self.points.len()
            )));
        }
        self.values = Some(z);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn values(&self) -> Option<&[f64]> {
        self.values.as_deref()
    }

    /// `1 / sigma^2` per detector.
    pub fn weights(&self) -> Vec<f64> {
        self.sigma.iter().map(|s| 1.0 / (s * s)).collect()
    }

    /// Same detectors with all noise scales multiplied by `factor`.
    pub fn scaled_sigma(&self, factor: f64) -> Result<Self> {
        let mut m = Self::new(self.points.clone(), self.sigma.iter().map(|s| s * factor).collect())?;
        m.values = self.values.clone();
        Ok(m)
    }

    /// Concatenation of two detector sets (values are dropped unless both
    /// carry them).
    pub fn concat(&self, other: &Self) -> Self {
        let values = match (&self.values, &other.values) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Self {
            points: self.points.iter().chain(&other.points).copied().collect(),
            sigma: self.sigma.iter().chain(&other.sigma).copied().collect(),
            values,
        }
    }

    /// Point evaluation vector of detector `l` with Dirichlet entries dropped.
    pub fn constrained_eval(&self, grid: &UniformGrid, l: usize) -> Result<SparseVec> {
        Ok(point_eval_vector(grid, self.points[l])?
            .into_iter()
            .filter(|(i, _)| !grid.is_boundary_node(*i))
            .collect())
    }
}
