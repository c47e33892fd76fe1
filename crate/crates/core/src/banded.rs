//! Banded LU factorization with partial pivoting.
//!
//! Storage follows the LAPACK `gbtrf` layout: column `c` holds rows
//! `c - (kl + ku) ..= c + kl` so that the extra `kl` super-diagonals created
//! by row interchanges fit without reallocation. With natural row-by-row node
//! numbering a structured 2D grid has bandwidth `n + 2`, so this is a direct
//! sparse solver whose fill stays inside the band.

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    /// Leading dimension of one stored column: `2 kl + ku + 1`.
    ld: usize,
    ab: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandedLu {
    /// Factorizes the `n x n` matrix given by `(row, col, value)` entries
    /// (duplicates are summed). `kl`/`ku` are the lower/upper bandwidths; an
    /// entry outside them is an error.
    pub fn factor<I>(n: usize, kl: usize, ku: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let ld = 2 * kl + ku + 1;
        let mut lu = Self {
            n,
            kl,
            ku,
            ld,
            ab: vec![0.0; ld * n],
            pivots: vec![0; n],
        };
        for (r, c, v) in entries {
            if r >= n || c >= n || r > c + kl || c > r + ku {
                return Err(Error::Dimension(format!(
                    "entry ({r}, {c}) outside the {n}x{n} band (kl = {kl}, ku = {ku})"
                )));
            }
            let idx = lu.index(r, c);
            lu.ab[idx] += v;
        }
        lu.decompose()?;
        Ok(lu)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn index(&self, r: usize, c: usize) -> usize {
        c * self.ld + (self.kl + self.ku + r - c)
    }

    fn decompose(&mut self) -> Result<()> {
        let (n, kl) = (self.n, self.kl);
        // last column touched by the row interchanges so far
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let diag = self.index(j, j);
            let mut jp = 0;
            let mut best = self.ab[diag].abs();
            for p in 1..=km {
                let v = self.ab[diag + p].abs();
                if v > best {
                    best = v;
                    jp = p;
                }
            }
            self.pivots[j] = j + jp;
            if best == 0.0 {
                return Err(Error::SingularPivot { row: j + jp, column: j });
            }
            ju = ju.max((j + self.ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    let a = self.index(j, c);
                    let b = self.index(j + jp, c);
                    self.ab.swap(a, b);
                }
            }
            let pivot = self.ab[diag];
            for p in 1..=km {
                self.ab[diag + p] /= pivot;
            }
            for c in j + 1..=ju {
                let ujc = self.ab[self.index(j, c)];
                if ujc == 0.0 {
                    continue;
                }
                let base = self.index(j, c);
                for p in 1..=km {
                    self.ab[base + p] -= self.ab[diag + p] * ujc;
                }
            }
        }
        Ok(())
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let (n, kl, kv) = (self.n, self.kl, self.kl + self.ku);
        for j in 0..n {
            let p = self.pivots[j];
            if p != j {
                b.swap(j, p);
            }
            let bj = b[j];
            if bj != 0.0 {
                let km = kl.min(n - 1 - j);
                let diag = self.index(j, j);
                for q in 1..=km {
                    b[j + q] -= self.ab[diag + q] * bj;
                }
            }
        }
        for j in (0..n).rev() {
            let diag = self.index(j, j);
            b[j] /= self.ab[diag];
            let bj = b[j];
            if bj != 0.0 {
                let top = j.saturating_sub(kv);
                for r in top..j {
                    b[r] -= self.ab[self.index(r, j)] * bj;
                }
            }
        }
    }

    /// Solves `A^T x = b` in place.
    pub fn solve_transpose_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let (n, kl, kv) = (self.n, self.kl, self.kl + self.ku);
        for j in 0..n {
            let top = j.saturating_sub(kv);
            let mut s = b[j];
            for r in top..j {
                s -= self.ab[self.index(r, j)] * b[r];
            }
            b[j] = s / self.ab[self.index(j, j)];
        }
        for j in (0..n).rev() {
            let km = kl.min(n - 1 - j);
            let diag = self.index(j, j);
            let mut s = b[j];
            for q in 1..=km {
                s -= self.ab[diag + q] * b[j + q];
            }
            b[j] = s;
            let p = self.pivots[j];
            if p != j {
                b.swap(j, p);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn banded_random(n: usize, kl: usize, ku: usize, seed: u64) -> DMatrix<f64> {
        let mut state = seed;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        DMatrix::from_fn(n, n, |r, c| if r <= c + kl && c <= r + ku { next() } else { 0.0 })
    }

    fn entries(a: &DMatrix<f64>) -> Vec<(usize, usize, f64)> {
        let mut e = Vec::new();
        for c in 0..a.ncols() {
            for r in 0..a.nrows() {
                if a[(r, c)] != 0.0 {
                    e.push((r, c, a[(r, c)]));
                }
            }
        }
        e
    }

    #[test]
    fn matches_dense_solve_with_pivoting() {
        // no diagonal dominance: pivoting is exercised
        for (n, kl, ku, seed) in [(12, 2, 3, 1), (30, 4, 1, 7), (25, 5, 5, 3)] {
            let a = banded_random(n, kl, ku, seed);
            let lu = BandedLu::factor(n, kl, ku, entries(&a)).unwrap();
            let b = DVector::from_fn(n, |i, _| (i as f64 * 0.37).sin());
            let mut x = b.as_slice().to_vec();
            lu.solve_in_place(&mut x);
            // normwise backward error; some of these matrices are ill-conditioned
            let x = DVector::from_vec(x);
            let r = &a * &x - &b;
            assert!(
                r.norm() < 1e-13 * (a.norm() * x.norm() + b.norm()),
                "residual {}",
                r.norm()
            );

            let mut y = b.as_slice().to_vec();
            lu.solve_transpose_in_place(&mut y);
            let y = DVector::from_vec(y);
            let r = a.transpose() * &y - &b;
            assert!(
                r.norm() < 1e-13 * (a.norm() * y.norm() + b.norm()),
                "transpose residual {}",
                r.norm()
            );
        }
    }

    #[test]
    fn singular_reports_column() {
        let e = vec![(0, 0, 1.0), (1, 1, 0.0), (2, 2, 1.0), (0, 1, 1.0)];
        match BandedLu::factor(3, 1, 1, e) {
            Err(Error::SingularPivot { column, .. }) => assert_eq!(column, 1),
            other => panic!("expected singular pivot, got {other:?}"),
        }
    }

    #[test]
    fn out_of_band_entry_rejected() {
        assert!(BandedLu::factor(4, 1, 1, vec![(3, 0, 1.0)]).is_err());
    }
}
