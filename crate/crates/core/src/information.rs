//! Information content and density of the piecewise-constant source
//! coefficients. Everything here depends on the operator, the detector
//! layout, the noise scales, `beta` and the mesh, and never on measured data.

use crate::error::{Error, Result};
use crate::fem::{MeasurementSet, ScalarField};
use crate::inverse::SchurSystem;
use crate::mesh::{QuadtreeMesh, UniformGrid};

/// `Q_kk = sum_l G_lk^2 / sigma_l^2 + beta |omega_k|`.
pub fn fisher_diag(sys: &SchurSystem) -> Vec<f64> {
    sys.data_diag()
        .into_iter()
        .zip(sys.areas())
        .map(|(m, a)| m + sys.beta() * a)
        .collect()
}

/// `j_k = sqrt(Q_kk)`.
pub fn info_content(qdiag: &[f64]) -> Result<Vec<f64>> {
    qdiag
        .iter()
        .enumerate()
        .map(|(k, &q)| {
            if q < 0.0 || q.is_nan() {
                Err(Error::InvalidArgument(format!(
                    "negative Fisher diagonal {q:e} at leaf {k}"
                )))
            } else {
                Ok(q.sqrt())
            }
        })
        .collect()
}

/// Per-leaf content and density.
#[derive(Clone, Debug, PartialEq)]
pub struct InformationField {
    pub content: Vec<f64>,
    pub density: Vec<f64>,
}

pub fn info_density(mesh: &QuadtreeMesh, content: &[f64]) -> Result<InformationField> {
    if content.len() != mesh.len() {
        return Err(Error::Dimension(format!(
            "{} contents for {} leaves",
            content.len(),
            mesh.len()
        )));
    }
    let density = content
        .iter()
        .zip(mesh.leaves())
        .map(|(j, leaf)| j / leaf.area())
        .collect();
    Ok(InformationField {
        content: content.to_vec(),
        density,
    })
}

/// Convenience: content and density straight from an assembled system.
pub fn information_field(sys: &SchurSystem, mesh: &QuadtreeMesh) -> Result<InformationField> {
    info_density(mesh, &info_content(&fisher_diag(sys))?)
}

/// One value per background cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellField {
    grid: UniformGrid,
    values: Vec<f64>,
}

impl CellField {
    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, cx: usize, cy: usize) -> f64 {
        self.values[self.grid.cell_index(cx, cy)]
    }

    /// Value of the cell containing the point.
    pub fn at(&self, x: f64, y: f64) -> Option<f64> {
        let (cx, cy, _, _) = self.grid.locate(x, y)?;
        Some(self.get(cx, cy))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `sqrt(sum_l h*_l(x)^2 / sigma_l^2 + beta / |omega_k(x)|)` at every
/// background-cell center, with `omega_k(x)` the leaf containing `x`.
pub fn info_density_pointwise(
    adjoints: &[ScalarField],
    ms: &MeasurementSet,
    beta: f64,
    mesh: &QuadtreeMesh,
    grid: &UniformGrid,
) -> Result<CellField> {
    if adjoints.len() != ms.len() {
        return Err(Error::Dimension(format!(
            "{} adjoint fields for {} measurements",
            adjoints.len(),
            ms.len()
        )));
    }
    if grid.levels() != Some(mesh.max_level()) {
        return Err(Error::Misaligned(format!(
            "quadtree resolution 2^{} does not match the {}x{} grid",
            mesh.max_level(),
            grid.cells_per_side(),
            grid.cells_per_side()
        )));
    }
    let weights = ms.weights();
    let n = grid.cells_per_side();
    let mut values = vec![0.0; grid.cell_count()];
    for cy in 0..n {
        for cx in 0..n {
            let area = mesh.leaf(mesh.owner(cx, cy)).area();
            let data: f64 = adjoints
                .iter()
                .zip(&weights)
                .map(|(h, w)| {
                    let v = h.cell_center_value(cx, cy);
                    w * v * v
                })
                .sum();
            values[grid.cell_index(cx, cy)] = (data + beta / area).sqrt();
        }
    }
    Ok(CellField { grid: *grid, values })
}

/// Per-leaf regularization that lifts the density to at least `j0`:
/// `beta_k = max(0, (j0^2 |omega_k|^2 - m_k) / |omega_k|)` with `m_k` the
/// measurement part of `Q_kk`.
pub fn beta_floor(sys: &SchurSystem, mesh: &QuadtreeMesh, j0: f64) -> Result<Vec<f64>> {
    if !(j0 >= 0.0) {
        return Err(Error::InvalidArgument(format!("density floor must be >= 0, got {j0}")));
    }
    if sys.leaf_count() != mesh.len() {
        return Err(Error::Dimension("system and mesh disagree on the leaf count".into()));
    }
    Ok(sys
        .data_diag()
        .into_iter()
        .zip(mesh.leaves())
        .map(|(m, leaf)| {
            let a = leaf.area();
            ((j0 * j0 * a * a - m) / a).max(0.0)
        })
        .collect())
}

/// Density that results from per-leaf regularization weights.
pub fn density_with_beta(sys: &SchurSystem, mesh: &QuadtreeMesh, betas: &[f64]) -> Vec<f64> {
    sys.data_diag()
        .into_iter()
        .zip(mesh.leaves())
        .zip(betas)
        .map(|((m, leaf), b)| (m + b * leaf.area()).sqrt() / leaf.area())
        .collect()
}

/// Design scores: sum of contents and trace of the Fisher matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OedScores {
    pub information: f64,
    pub trace: f64,
}

pub fn oed_scores(qdiag: &[f64]) -> Result<OedScores> {
    let j = info_content(qdiag)?;
    Ok(OedScores {
        information: j.iter().sum(),
        trace: qdiag.iter().sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble_coupling, assemble_operator, factorize};
    use crate::inverse::{assemble_schur, measurement_adjoints};

    #[test]
    fn regularization_only() {
        let g = UniformGrid::from_levels(3);
        let mesh = QuadtreeMesh::uniform(2, 3).unwrap();
        let b = assemble_coupling(&g, &mesh).unwrap();
        let ms = MeasurementSet::empty();
        let sys = assemble_schur(&[], &b, &ms, 1e4, &mesh).unwrap();
        let q = fisher_diag(&sys);
        assert!(q.iter().all(|&v| v == 2500.0));
        assert!(info_content(&q).unwrap().iter().all(|&j| j == 50.0));
        let f = info_density_pointwise(&[], &ms, 1e4, &mesh, &g).unwrap();
        assert!(f.values().iter().all(|&v| v == 200.0));
        let betas = beta_floor(&sys, &mesh, 3.0).unwrap();
        assert!(betas.iter().all(|&b| (b - 9.0 * 0.25).abs() < 1e-15));
        assert!(density_with_beta(&sys, &mesh, &betas)
            .iter()
            .all(|&d| (d - 3.0).abs() < 1e-12));
        assert!(beta_floor(&sys, &mesh, 0.0).unwrap().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn negative_diagonal_is_rejected() {
        assert!(info_content(&[1.0, -1e-3]).is_err());
    }

    #[test]
    fn scores() {
        let s = oed_scores(&[4.0, 9.0]).unwrap();
        assert_eq!(s.trace, 13.0);
        assert_eq!(s.information, 5.0);
    }

    #[test]
    fn density_times_area_is_content() {
        let mesh = QuadtreeMesh::uniform(2, 3).unwrap().refine(&[0, 5]).unwrap().mesh;
        let j: Vec<f64> = (0..mesh.len()).map(|k| 1.0 + k as f64).collect();
        let f = info_density(&mesh, &j).unwrap();
        for (k, leaf) in mesh.leaves().iter().enumerate() {
            assert!((f.density[k] * leaf.area() - f.content[k]).abs() <= 1e-12 * f.content[k]);
        }
    }

    #[test]
    fn diagonal_matches_schur_matrix() {
        let g = UniformGrid::from_levels(4);
        let f = factorize(&assemble_operator(&g, 1.0, [20.0, 0.0]).unwrap()).unwrap();
        let ms = MeasurementSet::new(vec![[0.3, 0.2], [-0.1, -0.5]], vec![0.1, 0.3]).unwrap();
        let adj = measurement_adjoints(&f, &ms).unwrap();
        let mesh = QuadtreeMesh::uniform(3, 4).unwrap();
        let b = assemble_coupling(&g, &mesh).unwrap();
        let sys = assemble_schur(&adj, &b, &ms, 2.0, &mesh).unwrap();
        for (k, q) in fisher_diag(&sys).iter().enumerate() {
            assert!((q - sys.h()[(k, k)]).abs() <= 1e-12 * q);
        }
    }
}
