//! Refinement indicators, fixed-fraction marking and the adaptive loop.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fem::{bilinear_weights, gauss_rule, ScalarField};
use crate::information::{information_field, InformationField};
use crate::inverse::{InverseProblem, ParamField, Reconstruction};
use crate::mesh::{QuadtreeMesh, Side};
use crate::spectrum::{eigenvalues, Spectrum, SpectrumLabel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Criterion {
    Information,
    ErrorEstimator,
    Smoothness,
    Global,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [
        Criterion::Information,
        Criterion::ErrorEstimator,
        Criterion::Smoothness,
        Criterion::Global,
    ];

    /// Short name used on the command line and in artifacts.
    pub fn name(self) -> &'static str {
        match self {
            Criterion::Information => "info",
            Criterion::ErrorEstimator => "error",
            Criterion::Smoothness => "smooth",
            Criterion::Global => "global",
        }
    }

    /// Whether the indicator needs a reconstruction from data.
    pub fn needs_data(self) -> bool {
        matches!(self, Criterion::ErrorEstimator | Criterion::Smoothness)
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Criterion::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "unknown criterion '{s}' (expected info, error, smooth or global)"
            ))
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinementIndicators {
    pub criterion: Criterion,
    pub values: Vec<f64>,
}

impl RefinementIndicators {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `eta_K = j_K`.
pub fn criterion_information(info: &InformationField) -> RefinementIndicators {
    RefinementIndicators {
        criterion: Criterion::Information,
        values: info.content.clone(),
    }
}

/// `eta_K = \int_K |beta q_K - lambda_h|`, 2x2 Gauss on each background cell.
pub fn criterion_error_estimator(
    mesh: &QuadtreeMesh,
    q: &ParamField,
    lambda: &ScalarField,
    beta: f64,
) -> Result<RefinementIndicators> {
    let grid = lambda.grid();
    if q.len() != mesh.len() {
        return Err(Error::Dimension(format!(
            "{} parameters for {} leaves",
            q.len(),
            mesh.len()
        )));
    }
    if grid.levels() != Some(mesh.max_level()) {
        return Err(Error::Misaligned(
            "adjoint field and mesh use different resolutions".into(),
        ));
    }
    let h = grid.h();
    let rule = gauss_rule(2);
    let lam = lambda.values();
    let values = (0..mesh.len())
        .map(|k| {
            let target = beta * q.values()[k];
            let (xr, yr) = mesh.cell_range(k);
            let mut s = 0.0;
            for cy in yr {
                for cx in xr.clone() {
                    let nodes = grid.cell_nodes(cx, cy);
                    for &(a, wa) in &rule {
                        for &(b, wb) in &rule {
                            let w = bilinear_weights(a, b);
                            let l: f64 = (0..4).map(|i| w[i] * lam[nodes[i]]).sum();
                            s += wa * wb * h * h * (target - l).abs();
                        }
                    }
                }
            }
            s
        })
        .collect();
    Ok(RefinementIndicators {
        criterion: Criterion::ErrorEstimator,
        values,
    })
}

/// Area-weighted neighbor value and center distance across one side.
fn side_difference(mesh: &QuadtreeMesh, q: &[f64], k: usize, side: Side) -> Option<f64> {
    let nbs = mesh.side_neighbors(k, side);
    if nbs.is_empty() {
        return None;
    }
    let half = 0.5 * mesh.leaf(k).size();
    let (mut wsum, mut val, mut dist) = (0.0, 0.0, 0.0);
    for (n, _) in nbs {
        let leaf = mesh.leaf(n);
        let a = leaf.area();
        wsum += a;
        val += a * q[n];
        dist += a * (half + 0.5 * leaf.size());
    }
    let (val, dist) = (val / wsum, dist / wsum);
    let forward = (val - q[k]) / dist;
    Some(match side {
        Side::East | Side::North => forward,
        Side::West | Side::South => -forward,
    })
}

/// `eta_K = h_K |grad_h q|_{L2(K)}` with a difference-quotient gradient.
pub fn criterion_smoothness(mesh: &QuadtreeMesh, q: &ParamField) -> Result<RefinementIndicators> {
    if q.len() != mesh.len() {
        return Err(Error::Dimension(format!(
            "{} parameters for {} leaves",
            q.len(),
            mesh.len()
        )));
    }
    let qv = q.values();
    let values = (0..mesh.len())
        .map(|k| {
            let d = |s| side_difference(mesh, qv, k, s).unwrap_or(0.0);
            let gx = 0.5 * (d(Side::West) + d(Side::East));
            let gy = 0.5 * (d(Side::South) + d(Side::North));
            let leaf = mesh.leaf(k);
            leaf.diameter() * (leaf.area() * (gx * gx + gy * gy)).sqrt()
        })
        .collect();
    Ok(RefinementIndicators {
        criterion: Criterion::Smoothness,
        values,
    })
}

pub fn criterion_global(mesh: &QuadtreeMesh) -> RefinementIndicators {
    RefinementIndicators {
        criterion: Criterion::Global,
        values: vec![1.0; mesh.len()],
    }
}

/// The `ceil(fraction * n)` leaves with the largest indicator, ties broken
/// by ascending leaf index (the mesh's level/z-order). Returned ascending.
pub fn mark_top_fraction(ind: &RefinementIndicators, fraction: f64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "marking fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let n = ind.len();
    let count = ((fraction * n as f64).ceil() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| ind.values[b].total_cmp(&ind.values[a]).then(a.cmp(&b)));
    let mut marked = order[..count].to_vec();
    marked.sort_unstable();
    Ok(marked)
}

/// Adds every unmarked leaf whose indicator equals the smallest marked one
/// within `rel_tol` (relative to the largest indicator), so that leaves the
/// indicator cannot tell apart are refined together.
pub fn complete_ties(ind: &RefinementIndicators, marked: &[usize], rel_tol: f64) -> Vec<usize> {
    let Some(cut) = marked.iter().map(|&k| ind.values[k]).min_by(f64::total_cmp) else {
        return Vec::new();
    };
    let scale = ind.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = rel_tol * scale;
    let mut out = marked.to_vec();
    let mut is_marked = vec![false; ind.len()];
    marked.iter().for_each(|&k| is_marked[k] = true);
    for (k, &v) in ind.values.iter().enumerate() {
        if !is_marked[k] && (v - cut).abs() <= tol {
            out.push(k);
        }
    }
    out.sort_unstable();
    out
}

#[derive(Clone, Debug)]
pub struct LoopConfig {
    pub criterion: Criterion,
    pub cycles: usize,
    pub fraction: f64,
    /// Relative tolerance for [`complete_ties`]; `None` marks strictly.
    pub tie_tolerance: Option<f64>,
    /// Compute the spectrum of `H` on meshes with at most this many leaves.
    pub spectrum_limit: usize,
}

impl LoopConfig {
    pub fn new(criterion: Criterion, cycles: usize) -> Self {
        Self {
            criterion,
            cycles,
            fraction: 0.3,
            tie_tolerance: Some(1e-10),
            spectrum_limit: 0,
        }
    }
}

/// Everything computed on one mesh of the sequence.
#[derive(Clone, Debug)]
pub struct CycleResult {
    pub cycle: usize,
    pub mesh: QuadtreeMesh,
    pub info: InformationField,
    /// Present when the problem carries data.
    pub reconstruction: Option<Reconstruction>,
    pub indicators: RefinementIndicators,
    pub marked: Vec<usize>,
    pub spectrum: Option<Spectrum>,
}

/// Runs `cycles` rounds of solve, estimate, mark and refine and returns the
/// `cycles + 1` meshes with their diagnostics. The information criterion
/// never reads the measured values.
pub fn refine_loop(problem: &InverseProblem, initial: QuadtreeMesh, cfg: &LoopConfig) -> Result<Vec<CycleResult>> {
    if cfg.criterion.needs_data() && problem.measurements.values().is_none() {
        return Err(Error::InvalidArgument(format!(
            "criterion '{}' needs measured data",
            cfg.criterion
        )));
    }
    let mut out = Vec::with_capacity(cfg.cycles + 1);
    let mut mesh = initial;
    for cycle in 0..=cfg.cycles {
        let sys = problem.schur(&mesh)?;
        let info = information_field(&sys, &mesh)?;
        let reconstruction = match problem.measurements.values() {
            Some(_) => Some(problem.reconstruct(&mesh, &sys)?),
            None => None,
        };
        let indicators = match cfg.criterion {
            Criterion::Information => criterion_information(&info),
            Criterion::Global => criterion_global(&mesh),
            Criterion::ErrorEstimator => {
                let r = reconstruction.as_ref().expect("checked above");
                criterion_error_estimator(&mesh, &r.q, &r.adjoint, problem.beta)?
            }
            Criterion::Smoothness => {
                let r = reconstruction.as_ref().expect("checked above");
                criterion_smoothness(&mesh, &r.q)?
            }
        };
        let spectrum = if mesh.len() <= cfg.spectrum_limit {
            Some(eigenvalues(sys.h())?.with_label(SpectrumLabel {
                criterion: cfg.criterion.name().to_string(),
                cycle,
                leaves: mesh.len(),
            }))
        } else {
            None
        };
        let marked = if cycle == cfg.cycles {
            Vec::new()
        } else if cfg.criterion == Criterion::Global {
            (0..mesh.len()).collect()
        } else {
            let strict = mark_top_fraction(&indicators, cfg.fraction)?;
            match cfg.tie_tolerance {
                Some(tol) => complete_ties(&indicators, &strict, tol),
                None => strict,
            }
        };
        log::info!(
            "{} cycle {cycle}: {} leaves, {} marked",
            cfg.criterion,
            mesh.len(),
            marked.len()
        );
        let next = if marked.is_empty() {
            None
        } else {
            let r = mesh.refine(&marked)?;
            if !r.skipped.is_empty() {
                log::info!("{} marked leaves already at the finest level", r.skipped.len());
            }
            Some(r.mesh)
        };
        out.push(CycleResult {
            cycle,
            mesh: mesh.clone(),
            info,
            reconstruction,
            indicators,
            marked,
            spectrum,
        });
        if let Some(m) = next {
            mesh = m;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::UniformGrid;

    fn ind(values: Vec<f64>) -> RefinementIndicators {
        RefinementIndicators {
            criterion: Criterion::Information,
            values,
        }
    }

    #[test]
    fn marking_examples() {
        assert_eq!(mark_top_fraction(&ind(vec![1.0; 5]), 1.0).unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(mark_top_fraction(&ind(vec![2.0; 16]), 0.25).unwrap(), vec![0, 1, 2, 3]);
        let v = (0..8).map(|i| i as f64).collect();
        assert_eq!(mark_top_fraction(&ind(v), 0.5).unwrap(), vec![4, 5, 6, 7]);
        assert!(mark_top_fraction(&ind(vec![1.0]), 0.0).is_err());
        assert!(mark_top_fraction(&ind(vec![1.0]), 1.5).is_err());
    }

    #[test]
    fn tie_completion() {
        let i = ind(vec![5.0, 3.0, 4.0, 3.0 + 1e-14, 1.0]);
        let strict = mark_top_fraction(&i, 0.6).unwrap();
        assert_eq!(strict, vec![0, 2, 3]);
        assert_eq!(complete_ties(&i, &strict, 1e-10), vec![0, 1, 2, 3]);
        assert_eq!(complete_ties(&i, &[], 1e-10), Vec::<usize>::new());
    }

    #[test]
    fn criterion_names_round_trip() {
        for c in Criterion::ALL {
            assert_eq!(c.name().parse::<Criterion>().unwrap(), c);
        }
        assert!("bogus".parse::<Criterion>().is_err());
    }

    #[test]
    fn smoothness_of_constant_and_linear() {
        let mesh = QuadtreeMesh::uniform(3, 3).unwrap();
        let q = ParamField::new(&mesh, vec![2.0; mesh.len()]).unwrap();
        assert!(criterion_smoothness(&mesh, &q)
            .unwrap()
            .values
            .iter()
            .all(|&v| v == 0.0));

        let x: Vec<f64> = mesh.leaves().iter().map(|l| l.center()[0]).collect();
        let q = ParamField::new(&mesh, x).unwrap();
        let eta = criterion_smoothness(&mesh, &q).unwrap();
        let leaf = mesh.leaf(0);
        for (k, l) in mesh.leaves().iter().enumerate() {
            let [cx, cy] = l.center();
            if cx.abs() < 0.7 && cy.abs() < 0.7 {
                // gx = 1, gy = 0
                let expect = leaf.diameter() * leaf.area().sqrt();
                assert!((eta.values[k] - expect).abs() < 1e-12, "leaf {k}");
            }
        }
    }

    #[test]
    fn smoothness_is_local() {
        let mesh = QuadtreeMesh::uniform(2, 2).unwrap();
        let mut v = vec![0.0; mesh.len()];
        v[5] = 1.0;
        let eta = criterion_smoothness(&mesh, &ParamField::new(&mesh, v).unwrap()).unwrap();
        let mut touched: Vec<usize> = mesh.leaf_neighbors(5).into_iter().map(|(n, _)| n).collect();
        touched.push(5);
        for k in 0..mesh.len() {
            assert_eq!(eta.values[k] > 0.0, touched.contains(&k), "leaf {k}");
        }
    }

    #[test]
    fn error_estimator_constant_cases() {
        let g = UniformGrid::from_levels(3);
        let mesh = QuadtreeMesh::uniform(2, 3).unwrap();
        let zero = ParamField::new(&mesh, vec![0.0; mesh.len()]).unwrap();
        let lam = ScalarField::new(g, vec![-2.0; g.node_count()]).unwrap();
        let eta = criterion_error_estimator(&mesh, &zero, &lam, 10.0).unwrap();
        for (k, l) in mesh.leaves().iter().enumerate() {
            assert!((eta.values[k] - 2.0 * l.area()).abs() < 1e-13);
        }
        let q = ParamField::new(&mesh, vec![-0.2; mesh.len()]).unwrap();
        let eta = criterion_error_estimator(&mesh, &q, &lam, 10.0).unwrap();
        assert!(eta.values.iter().all(|&v| v.abs() < 1e-13));
    }
}
