//! Dense symmetric positive-definite factorization.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Lower Cholesky factor, stored row-major so that the inner products of
/// the Crout recurrence run over contiguous memory.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
    min_pivot: f64,
}

impl Cholesky {
    /// Factorizes the lower triangle of `a`. On failure the error carries the
    /// offending pivot and the smallest pivot accepted before it.
    pub fn factor(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!("{}x{} matrix is not square", n, a.ncols())));
        }
        let mut l = vec![0.0; n * n];
        let mut min_pivot = f64::INFINITY;
        for i in 0..n {
            for j in 0..=i {
                let (ri, rj) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
                let s = a[(i, j)] - ri.iter().zip(rj).map(|(x, y)| x * y).sum::<f64>();
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite {
                            index: i,
                            pivot: s,
                            smallest: min_pivot,
                        });
                    }
                    min_pivot = min_pivot.min(s);
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Ok(Self { n, l, min_pivot })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Smallest squared diagonal entry of the factor.
    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let s: f64 = row.iter().zip(&x[..i]).map(|(a, b)| a * b).sum();
            x[i] = (x[i] - s) / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            x[i] /= self.l[i * n + i];
            let xi = x[i];
            for (j, xj) in x[..i].iter_mut().enumerate() {
                *xj -= self.l[i * n + j] * xi;
            }
        }
        x
    }

    pub fn solve_vector(&self, b: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.solve(b.as_slice()))
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut inv = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for k in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[k] = 1.0;
            let col = self.solve(&e);
            inv.column_mut(k).copy_from_slice(&col);
        }
        inv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_spd_system() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0]);
        let c = Cholesky::factor(&a).unwrap();
        let b = [1.0, -2.0, 0.5];
        let x = DVector::from_vec(c.solve(&b));
        assert!((&a * x - DVector::from_row_slice(&b)).amax() < 1e-14);
        let inv = c.inverse();
        assert!((&a * inv - DMatrix::identity(3, 3)).amax() < 1e-14);
    }

    #[test]
    fn reports_failing_pivot() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match Cholesky::factor(&a) {
            Err(Error::NotPositiveDefinite { index, pivot, smallest }) => {
                assert_eq!(index, 1);
                assert_eq!(pivot, -3.0);
                assert_eq!(smallest, 1.0);
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }
}
