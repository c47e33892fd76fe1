//! Shared fixtures for the benchmarks.

use infomesh::{factorize, FactorHandle, InverseProblem, MeasurementSet, QuadtreeMesh, Scenario, UniformGrid};

/// Default operator on a `2^levels` grid.
pub fn operator_handle(levels: u32) -> FactorHandle {
    let scn = Scenario::default();
    factorize(&scn.operator(&UniformGrid::from_levels(levels)).unwrap()).unwrap()
}

/// Default detectors with unit noise on a `2^levels` grid.
pub fn problem(levels: u32) -> InverseProblem {
    let scn = Scenario::default();
    let pts = scn.detector_points();
    let ms = MeasurementSet::new(pts.clone(), vec![1e-3; pts.len()]).unwrap();
    InverseProblem::new(operator_handle(levels), ms, scn.beta).unwrap()
}

pub fn uniform_mesh(level: u32, levels: u32) -> QuadtreeMesh {
    QuadtreeMesh::uniform(level, levels).unwrap()
}
