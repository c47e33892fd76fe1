//! Reduced (Schur complement) solution of the source-identification problem.
//!
//! Eliminating state and adjoint from the optimality system leaves
//! `H P = G^T S^{-2} z` with `H = G^T S^{-2} G + beta N`, where row `l` of
//! `G` holds the integrals of the `l`-th measurement adjoint over the leaves
//! and `N` is the diagonal of leaf areas.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::dense::Cholesky;
use crate::error::{Error, Result};
use crate::fem::{assemble_coupling, CouplingMatrix, FactorHandle, MeasurementSet, ScalarField};
use crate::mesh::{QuadtreeMesh, UniformGrid};

/// One value per quadtree leaf.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamField(Vec<f64>);

impl ParamField {
    pub fn new(mesh: &QuadtreeMesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.len() {
            return Err(Error::Dimension(format!(
                "{} values for {} leaves",
                values.len(),
                mesh.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite parameter value {v}")));
        }
        Ok(Self(values))
    }

    /// Leaf averages of a function, by midpoint sampling on the background
    /// cells the leaf covers.
    pub fn project<F: Fn(f64, f64) -> f64>(mesh: &QuadtreeMesh, grid: &UniformGrid, f: F) -> Self {
        let values = (0..mesh.len())
            .map(|k| {
                let (xr, yr) = mesh.cell_range(k);
                let count = (xr.len() * yr.len()) as f64;
                let mut s = 0.0;
                for cy in yr {
                    for cx in xr.clone() {
                        let [x, y] = grid.cell_center(cx, cy);
                        s += f(x, y);
                    }
                }
                s / count
            })
            .collect();
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Reduced system on one parameter mesh. Immutable after assembly.
#[derive(Clone, Debug)]
pub struct SchurSystem {
    g: DMatrix<f64>,
    weights: Vec<f64>,
    areas: Vec<f64>,
    beta: f64,
    h: DMatrix<f64>,
}

impl SchurSystem {
    /// Sensitivity matrix, measurements by leaves.
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    /// `1 / sigma_l^2`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn leaf_count(&self) -> usize {
        self.areas.len()
    }

    pub fn measurement_count(&self) -> usize {
        self.weights.len()
    }

    /// Measurement part of the diagonal, `sum_l G_lk^2 / sigma_l^2`.
    pub fn data_diag(&self) -> Vec<f64> {
        (0..self.leaf_count())
            .map(|k| self.g.column(k).iter().zip(&self.weights).map(|(g, w)| w * g * g).sum())
            .collect()
    }

    /// `G^T S^{-2} z`.
    pub fn rhs(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.measurement_count() {
            return Err(Error::Dimension(format!(
                "{} data values for {} measurements",
                z.len(),
                self.measurement_count()
            )));
        }
        Ok((0..self.leaf_count())
            .map(|k| {
                self.g
                    .column(k)
                    .iter()
                    .zip(&self.weights)
                    .zip(z)
                    .map(|((g, w), z)| g * w * z)
                    .sum()
            })
            .collect())
    }
}

/// `h*_l = A^{-T} m_l` for every detector, in detector order.
pub fn measurement_adjoints(handle: &FactorHandle, ms: &MeasurementSet) -> Result<Vec<ScalarField>> {
    let grid = *handle.grid();
    (0..ms.len())
        .into_par_iter()
        .map(|l| {
            let mut rhs = vec![0.0; grid.node_count()];
            for (i, w) in ms.constrained_eval(&grid, l)? {
                rhs[i] += w;
            }
            handle.solve_transpose(&rhs)
        })
        .collect()
}

/// `G_lk = (h*_l)^T B e_k`.
pub fn sensitivity_matrix(adjoints: &[ScalarField], b: &CouplingMatrix) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(adjoints.len(), b.leaf_count());
    for (l, h) in adjoints.iter().enumerate() {
        for k in 0..b.leaf_count() {
            g[(l, k)] = b.column_dot(k, h.values());
        }
    }
    g
}

pub fn assemble_schur(
    adjoints: &[ScalarField],
    b: &CouplingMatrix,
    ms: &MeasurementSet,
    beta: f64,
    mesh: &QuadtreeMesh,
) -> Result<SchurSystem> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "regularization must be >= 0, got {beta}"
        )));
    }
    if adjoints.len() != ms.len() {
        return Err(Error::Dimension(format!(
            "{} adjoint fields for {} measurements",
            adjoints.len(),
            ms.len()
        )));
    }
    if b.leaf_count() != mesh.len() {
        return Err(Error::Dimension(format!(
            "coupling has {} columns, mesh has {} leaves",
            b.leaf_count(),
            mesh.len()
        )));
    }
    let g = sensitivity_matrix(adjoints, b);
    let weights = ms.weights();
    let areas = mesh.areas();
    let k = areas.len();

    let mut scaled = g.clone();
    for (l, w) in weights.iter().enumerate() {
        let s = w.sqrt();
        scaled.row_mut(l).iter_mut().for_each(|v| *v *= s);
    }
    let mut h = scaled.tr_mul(&scaled);
    for i in 0..k {
        h[(i, i)] += beta * areas[i];
        for j in 0..i {
            h[(j, i)] = h[(i, j)];
        }
    }
    Ok(SchurSystem {
        g,
        weights,
        areas,
        beta,
        h,
    })
}

/// Solves `H P = G^T S^{-2} z`.
pub fn solve_map(sys: &SchurSystem, z: &[f64]) -> Result<ParamField> {
    let rhs = sys.rhs(z)?;
    let chol = Cholesky::factor(&sys.h)?;
    let p = chol.solve(&rhs);
    let hp = &sys.h * nalgebra::DVector::from_column_slice(&p);
    let res = hp.iter().zip(&rhs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let scale = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    log::debug!(
        "reduced solve: |HP - rhs| = {res:e}, |rhs| = {scale:e}, min pivot {:e}",
        chol.min_pivot()
    );
    Ok(ParamField(p))
}

/// `U = A^{-1} B P` and `Lambda = A^{-T} (c_z - C U)`.
pub fn recover_state_adjoint(
    handle: &FactorHandle,
    b: &CouplingMatrix,
    p: &[f64],
    ms: &MeasurementSet,
) -> Result<(ScalarField, ScalarField)> {
    let z = ms
        .values()
        .ok_or_else(|| Error::InvalidArgument("measurement set carries no data".into()))?;
    let grid = *handle.grid();
    let u = handle.solve(&b.apply(p))?;
    let mut rhs = vec![0.0; grid.node_count()];
    for l in 0..ms.len() {
        let m = ms.constrained_eval(&grid, l)?;
        let mu: f64 = m.iter().map(|&(i, w)| w * u.values()[i]).sum();
        let coef = (z[l] - mu) / (ms.sigma()[l] * ms.sigma()[l]);
        for (i, w) in m {
            rhs[i] += coef * w;
        }
    }
    let lambda = handle.solve_transpose(&rhs)?;
    Ok((u, lambda))
}

/// `Q_kk` through one forward solve with the `k`-th source column.
pub fn fisher_forward_route(
    handle: &FactorHandle,
    b: &CouplingMatrix,
    ms: &MeasurementSet,
    beta: f64,
    mesh: &QuadtreeMesh,
    k: usize,
) -> Result<f64> {
    if k >= mesh.len() {
        return Err(Error::InvalidArgument(format!(
            "leaf {k} out of range ({} leaves)",
            mesh.len()
        )));
    }
    let grid = *handle.grid();
    let mut e = vec![0.0; b.leaf_count()];
    e[k] = 1.0;
    let hk = handle.solve(&b.apply(&e))?;
    let mut q = beta * mesh.leaf(k).area();
    for l in 0..ms.len() {
        let m: f64 = ms
            .constrained_eval(&grid, l)?
            .iter()
            .map(|&(i, w)| w * hk.values()[i])
            .sum();
        q += m * m / (ms.sigma()[l] * ms.sigma()[l]);
    }
    Ok(q)
}

/// Everything about the problem that does not depend on the parameter
/// mesh: the factorized operator, the detectors and their adjoints.
#[derive(Clone, Debug)]
pub struct InverseProblem {
    pub handle: FactorHandle,
    pub measurements: MeasurementSet,
    pub adjoints: Vec<ScalarField>,
    pub beta: f64,
}

/// Reduced solve on one mesh.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub q: ParamField,
    pub state: ScalarField,
    pub adjoint: ScalarField,
}

impl InverseProblem {
    pub fn new(handle: FactorHandle, measurements: MeasurementSet, beta: f64) -> Result<Self> {
        let adjoints = measurement_adjoints(&handle, &measurements)?;
        Ok(Self {
            handle,
            measurements,
            adjoints,
            beta,
        })
    }

    pub fn grid(&self) -> &UniformGrid {
        self.handle.grid()
    }

    pub fn coupling(&self, mesh: &QuadtreeMesh) -> Result<CouplingMatrix> {
        assemble_coupling(self.grid(), mesh)
    }

    pub fn schur(&self, mesh: &QuadtreeMesh) -> Result<SchurSystem> {
        let b = self.coupling(mesh)?;
        assemble_schur(&self.adjoints, &b, &self.measurements, self.beta, mesh)
    }

    /// Same detectors and operator, new data.
    pub fn with_data(&self, z: Vec<f64>) -> Result<Self> {
        Ok(Self {
            measurements: self.measurements.clone().with_values(z)?,
            ..self.clone()
        })
    }

    pub fn reconstruct(&self, mesh: &QuadtreeMesh, sys: &SchurSystem) -> Result<Reconstruction> {
        let z = self
            .measurements
            .values()
            .ok_or_else(|| Error::InvalidArgument("measurement set carries no data".into()))?;
        let b = self.coupling(mesh)?;
        let q = solve_map(sys, z)?;
        let (state, adjoint) = recover_state_adjoint(&self.handle, &b, q.values(), &self.measurements)?;
        Ok(Reconstruction { q, state, adjoint })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble_operator, factorize};

    fn setup(wind: [f64; 2]) -> (UniformGrid, FactorHandle) {
        let g = UniformGrid::from_levels(4);
        let op = assemble_operator(&g, 1.0, wind).unwrap();
        (g, factorize(&op).unwrap())
    }

    #[test]
    fn no_detectors_gives_pure_regularization() {
        let (g, f) = setup([10.0, 0.0]);
        let ms = MeasurementSet::empty();
        let adj = measurement_adjoints(&f, &ms).unwrap();
        assert!(adj.is_empty());
        let mesh = QuadtreeMesh::uniform(2, 4).unwrap();
        let b = assemble_coupling(&g, &mesh).unwrap();
        let sys = assemble_schur(&adj, &b, &ms, 1e4, &mesh).unwrap();
        let expect = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(mesh.areas())) * 1e4;
        assert_eq!(sys.h(), &expect);
    }

    #[test]
    fn negative_beta_rejected() {
        let (g, f) = setup([0.0, 0.0]);
        let ms = MeasurementSet::empty();
        let mesh = QuadtreeMesh::uniform(1, 4).unwrap();
        let b = assemble_coupling(&g, &mesh).unwrap();
        let adj = measurement_adjoints(&f, &ms).unwrap();
        assert!(assemble_schur(&adj, &b, &ms, -1.0, &mesh).is_err());
    }

    #[test]
    fn symmetric_operator_adjoint_equals_forward() {
        let (g, f) = setup([0.0, 0.0]);
        let ms = MeasurementSet::new(vec![[0.13, -0.4]], vec![1.0]).unwrap();
        let adj = measurement_adjoints(&f, &ms).unwrap();
        let mut rhs = vec![0.0; g.node_count()];
        for (i, w) in ms.constrained_eval(&g, 0).unwrap() {
            rhs[i] = w;
        }
        let fwd = f.solve(&rhs).unwrap();
        let scale = fwd.max_abs();
        for (a, b) in adj[0].values().iter().zip(fwd.values()) {
            assert!((a - b).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn forward_route_matches_adjoint_route() {
        let (g, f) = setup([30.0, 5.0]);
        let ms = MeasurementSet::new(vec![[0.2, 0.1], [-0.3, 0.5], [0.6, -0.6]], vec![0.5, 1.0, 2.0]).unwrap();
        let mesh = QuadtreeMesh::uniform(2, 4).unwrap();
        let b = assemble_coupling(&g, &mesh).unwrap();
        let adj = measurement_adjoints(&f, &ms).unwrap();
        let sys = assemble_schur(&adj, &b, &ms, 3.0, &mesh).unwrap();
        for k in 0..mesh.len() {
            let q = fisher_forward_route(&f, &b, &ms, 3.0, &mesh, k).unwrap();
            assert!((q - sys.h()[(k, k)]).abs() <= 1e-9 * q, "leaf {k}");
        }
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let (g, f) = setup([10.0, 0.0]);
        let ms = MeasurementSet::new(vec![[0.2, 0.1], [-0.3, 0.5]], vec![0.5, 1.0])
            .unwrap()
            .with_values(vec![0.0, 0.0])
            .unwrap();
        let mesh = QuadtreeMesh::uniform(2, 4).unwrap();
        let b = assemble_coupling(&g, &mesh).unwrap();
        let adj = measurement_adjoints(&f, &ms).unwrap();
        let sys = assemble_schur(&adj, &b, &ms, 1.0, &mesh).unwrap();
        let p = solve_map(&sys, &[0.0, 0.0]).unwrap();
        assert!(p.values().iter().all(|&v| v == 0.0));
        let (u, lam) = recover_state_adjoint(&f, &b, p.values(), &ms).unwrap();
        assert_eq!(u.max_abs(), 0.0);
        assert_eq!(lam.max_abs(), 0.0);
    }

    #[test]
    fn project_constant() {
        let g = UniformGrid::from_levels(3);
        let mesh = QuadtreeMesh::uniform(1, 3).unwrap();
        let p = ParamField::project(&mesh, &g, |_, _| 2.5);
        assert_eq!(p.values(), &[2.5; 4]);
        assert!(ParamField::new(&mesh, vec![1.0; 3]).is_err());
    }
}
