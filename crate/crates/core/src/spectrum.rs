//! Eigenvalues of the reduced Schur matrix.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_xoshiro::rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};

/// Largest matrix handed to the dense eigensolver.
pub const DENSE_LIMIT: usize = 5000;

/// Which mesh a spectrum belongs to.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SpectrumLabel {
    pub criterion: String,
    pub cycle: usize,
    pub leaves: usize,
}

/// Eigenvalues sorted in descending order.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub label: SpectrumLabel,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn largest(&self) -> f64 {
        self.values.first().copied().unwrap_or(f64::NAN)
    }

    pub fn smallest(&self) -> f64 {
        self.values.last().copied().unwrap_or(f64::NAN)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn with_label(mut self, label: SpectrumLabel) -> Self {
        self.label = label;
        self
    }
}

fn diagnostics(h: &DMatrix<f64>) -> Error {
    let diag = h.diagonal();
    Error::NotConverged {
        n: h.nrows(),
        max_abs: h.amax(),
        min_diag: diag.min(),
        max_diag: diag.max(),
    }
}

/// Full symmetric eigendecomposition of `(H + H^T) / 2`. Five eigenpairs,
/// chosen by a fixed seed, are checked for `|Hv - lv| <= 1e-8 |H|`.
pub fn eigenvalues(h: &DMatrix<f64>) -> Result<Spectrum> {
    let n = h.nrows();
    if n > DENSE_LIMIT {
        return Err(Error::TooLarge { n, limit: DENSE_LIMIT });
    }
    if h.ncols() != n {
        return Err(Error::Dimension(format!("{}x{} matrix is not square", n, h.ncols())));
    }
    if n == 0 {
        return Ok(Spectrum {
            values: Vec::new(),
            label: SpectrumLabel::default(),
        });
    }
    let sym = (h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym.clone(), f64::EPSILON, 0).ok_or_else(|| diagnostics(h))?;
    let norm = eig.eigenvalues.amax();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(0x5eed);
    for _ in 0..5.min(n) {
        let i = (rng.next_u64() % n as u64) as usize;
        let v: DVector<f64> = eig.eigenvectors.column(i).into_owned();
        let r = (&sym * &v - &v * eig.eigenvalues[i]).norm();
        if !(r <= 1e-8 * norm.max(f64::MIN_POSITIVE)) {
            log::error!("eigenpair {i} residual {r:e} exceeds tolerance (|H| = {norm:e})");
            return Err(diagnostics(h));
        }
    }
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(Spectrum {
        values,
        label: SpectrumLabel::default(),
    })
}

/// Number of eigenvalues at or above `threshold`.
pub fn count_above(s: &Spectrum, threshold: f64) -> Result<usize> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must be positive, got {threshold}"
        )));
    }
    Ok(s.values.partition_point(|&v| v >= threshold))
}

/// Smallest eigenvalue of the coarse spectrum over that of the fine one.
pub fn stairstep_ratio(coarse: &Spectrum, fine: &Spectrum) -> f64 {
    coarse.smallest() / fine.smallest()
}
