//! Information-density driven adaptive parameter meshes for linear inverse
//! source problems governed by stationary advection-diffusion.
//!
//! The crate is organized bottom-up: [`mesh`] (background grid and
//! quadtree), [`fem`] (bilinear elements and direct solves), [`inverse`]
//! (reduced Schur system), [`information`] (content, density and floors),
//! [`refinement`] (indicators and the adaptive loop) and [`spectrum`].
//! [`findim`] holds the finite-dimensional toolkit and [`scenario`] the
//! experiment description used by the command-line front end.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod banded;
pub mod dense;
pub mod error;
pub mod fem;
pub mod findim;
pub mod information;
pub mod inverse;
pub mod io;
pub mod mesh;
pub mod refinement;
pub mod scenario;
pub mod spectrum;

pub use error::{Error, Result};
pub use fem::{
    assemble_coupling, assemble_operator, factorize, point_eval_vector, CouplingMatrix, FactorHandle, MeasurementSet,
    Quadrature, ScalarField, SparseOperator,
};
pub use findim::{LinearModel, NonlinearModel, Route};
pub use information::{
    beta_floor, fisher_diag, info_content, info_density, info_density_pointwise, oed_scores, CellField,
    InformationField, OedScores,
};
pub use inverse::{
    assemble_schur, fisher_forward_route, measurement_adjoints, recover_state_adjoint, solve_map, InverseProblem,
    ParamField, Reconstruction, SchurSystem,
};
pub use mesh::{Leaf, QuadtreeMesh, Side, UniformGrid};
pub use refinement::{refine_loop, Criterion, CycleResult, LoopConfig, RefinementIndicators};
pub use scenario::{Scenario, SyntheticData};
pub use spectrum::{count_above, eigenvalues, stairstep_ratio, Spectrum};
