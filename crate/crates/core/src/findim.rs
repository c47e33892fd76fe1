//! Finite-dimensional linear and linearized models: MAP estimate, Fisher
//! matrix by either solve route, exact Gaussian posterior, the Cramér-Rao
//! chain, Gauss-Newton Fisher matrices and a brute-force quadrature
//! posterior used to certify them at toy scale.

use nalgebra::{DMatrix, DVector};
use rand_xoshiro::rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::dense::Cholesky;
use crate::error::{Error, Result};

/// `A u = S q`, data `z = M u + noise` with noise scales `sigma`, Tikhonov
/// term `beta |R q|^2`.
#[derive(Clone, Debug)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub r: DMatrix<f64>,
    pub beta: f64,
}

/// Which family of solves builds the Fisher matrix: one per parameter
/// (`Forward`) or one per measurement (`Adjoint`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Route {
    Forward,
    Adjoint,
}

fn check_sigma(sigma: &DVector<f64>) -> Result<()> {
    if let Some(s) = sigma.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise scale must be positive, got {s}")));
    }
    Ok(())
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "regularization must be >= 0, got {beta}"
        )));
    }
    Ok(())
}

/// `J^T diag(w) J + beta R^T R`, symmetrized exactly.
fn normal_matrix(jac: &DMatrix<f64>, sigma: &DVector<f64>, r: &DMatrix<f64>, beta: f64) -> DMatrix<f64> {
    let mut scaled = jac.clone();
    for (l, s) in sigma.iter().enumerate() {
        scaled.row_mut(l).iter_mut().for_each(|v| *v /= s);
    }
    let q = scaled.tr_mul(&scaled) + r.tr_mul(r) * beta;
    (&q + q.transpose()) * 0.5
}

impl LinearModel {
    pub fn new(
        a: DMatrix<f64>,
        s: DMatrix<f64>,
        m: DMatrix<f64>,
        sigma: DVector<f64>,
        r: DMatrix<f64>,
        beta: f64,
    ) -> Result<Self> {
        let n = a.nrows();
        let k = s.ncols();
        let dims_ok = a.ncols() == n && s.nrows() == n && m.ncols() == n && m.nrows() == sigma.len() && r.ncols() == k;
        if !dims_ok {
            return Err(Error::Dimension(format!(
                "A {}x{}, S {}x{}, M {}x{}, sigma {}, R {}x{}",
                a.nrows(),
                a.ncols(),
                s.nrows(),
                s.ncols(),
                m.nrows(),
                m.ncols(),
                sigma.len(),
                r.nrows(),
                r.ncols()
            )));
        }
        check_sigma(&sigma)?;
        check_beta(beta)?;
        Ok(Self {
            a,
            s,
            m,
            sigma,
            r,
            beta,
        })
    }

    pub fn param_dim(&self) -> usize {
        self.s.ncols()
    }

    pub fn measurement_dim(&self) -> usize {
        self.m.nrows()
    }

    /// Parameter-to-observable map `M A^{-1} S`, assembled by the chosen route.
    pub fn sensitivity(&self, route: Route) -> Result<DMatrix<f64>> {
        let singular = || Error::Singular("state operator is not invertible".into());
        match route {
            Route::Forward => {
                let h = self.a.clone().lu().solve(&self.s).ok_or_else(singular)?;
                Ok(&self.m * h)
            }
            Route::Adjoint => {
                let hstar = self
                    .a
                    .transpose()
                    .lu()
                    .solve(&self.m.transpose())
                    .ok_or_else(singular)?;
                Ok(hstar.tr_mul(&self.s))
            }
        }
    }

    /// Applies `M A^{-1} S` to one parameter vector.
    pub fn observe(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        let u = self
            .a
            .clone()
            .lu()
            .solve(&(&self.s * q))
            .ok_or_else(|| Error::Singular("state operator is not invertible".into()))?;
        Ok(&self.m * u)
    }

    /// `0.5 |S^{-1}(observe(q) - z)|^2 + 0.5 beta |R q|^2`.
    pub fn objective(&self, q: &DVector<f64>, z: &DVector<f64>) -> Result<f64> {
        let misfit = (self.observe(q)? - z).component_div(&self.sigma);
        Ok(0.5 * misfit.norm_squared() + 0.5 * self.beta * (&self.r * q).norm_squared())
    }
}

/// Seeded well-posed random model: diagonally dominant `A` of size `n`,
/// `k` parameters, `l` measurements, `R = I`, `beta` in `[0.01, 1)`.
pub fn random_linear_model(seed: u64, n: usize, k: usize, l: usize) -> LinearModel {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut u = move || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    let a = DMatrix::from_fn(n, n, |i, j| if i == j { n as f64 + u() } else { u() - 0.5 });
    let s = DMatrix::from_fn(n, k, |_, _| u() - 0.5);
    let m = DMatrix::from_fn(l, n, |_, _| u() - 0.5);
    let sigma = DVector::from_fn(l, |_, _| 0.5 + u());
    let beta = 0.01 + 0.99 * u();
    LinearModel::new(a, s, m, sigma, DMatrix::identity(k, k), beta).expect("consistent dimensions")
}

/// `Q = S^T A^{-T} M^T Sigma^{-2} M A^{-1} S + beta R^T R`.
pub fn fisher_matrix(model: &LinearModel, route: Route) -> Result<DMatrix<f64>> {
    let g = model.sensitivity(route)?;
    Ok(normal_matrix(&g, &model.sigma, &model.r, model.beta))
}

/// Minimizer of the Tikhonov functional.
pub fn map_solve(model: &LinearModel, z: &DVector<f64>) -> Result<DVector<f64>> {
    if z.len() != model.measurement_dim() {
        return Err(Error::Dimension(format!(
            "{} data values for {} measurements",
            z.len(),
            model.measurement_dim()
        )));
    }
    let g = model.sensitivity(Route::Adjoint)?;
    let q = normal_matrix(&g, &model.sigma, &model.r, model.beta);
    let rhs = g.tr_mul(&z.component_div(&model.sigma).component_div(&model.sigma));
    Ok(Cholesky::factor(&q)?.solve_vector(&rhs))
}

/// Covariance of the linear-Gaussian posterior, `Q^{-1}`.
pub fn posterior_exact(model: &LinearModel) -> Result<DMatrix<f64>> {
    Ok(Cholesky::factor(&fisher_matrix(model, Route::Adjoint)?)?.inverse())
}

/// Per-parameter comparison of the posterior variance with the computable
/// bound `1 / Q_kk`.
#[derive(Clone, Debug, PartialEq)]
pub struct CramerRaoReport {
    pub variance: Vec<f64>,
    pub bound: Vec<f64>,
    pub slack: Vec<f64>,
}

impl CramerRaoReport {
    pub fn min_slack(&self) -> f64 {
        self.slack.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn holds(&self, tol: f64) -> bool {
        self.min_slack() >= -tol
    }
}

impl std::fmt::Display for CramerRaoReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:>4} {:>16} {:>16} {:>16}", "k", "[Q^-1]_kk", "1/Q_kk", "slack")?;
        for k in 0..self.variance.len() {
            writeln!(
                f,
                "{:>4} {:>16.9e} {:>16.9e} {:>16.9e}",
                k, self.variance[k], self.bound[k], self.slack[k]
            )?;
        }
        Ok(())
    }
}

pub fn cramer_rao_from_fisher(q: &DMatrix<f64>) -> Result<CramerRaoReport> {
    let inv = Cholesky::factor(q)?.inverse();
    let variance: Vec<f64> = inv.diagonal().iter().copied().collect();
    let bound: Vec<f64> = q.diagonal().iter().map(|d| 1.0 / d).collect();
    let slack = variance.iter().zip(&bound).map(|(v, b)| v - b).collect();
    Ok(CramerRaoReport { variance, bound, slack })
}

pub fn cramer_rao_check(model: &LinearModel) -> Result<CramerRaoReport> {
    cramer_rao_from_fisher(&fisher_matrix(model, Route::Adjoint)?)
}

pub type VectorMap = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type MatrixMap = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Data `z = F(S q) + noise`; `jacobian` must be the derivative of `f`.
pub struct NonlinearModel {
    pub f: VectorMap,
    pub jacobian: MatrixMap,
    pub s: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub r: DMatrix<f64>,
    pub beta: f64,
}

impl NonlinearModel {
    pub fn new(
        f: VectorMap,
        jacobian: MatrixMap,
        s: DMatrix<f64>,
        sigma: DVector<f64>,
        r: DMatrix<f64>,
        beta: f64,
    ) -> Result<Self> {
        if r.ncols() != s.ncols() {
            return Err(Error::Dimension(format!(
                "R has {} columns, S has {}",
                r.ncols(),
                s.ncols()
            )));
        }
        check_sigma(&sigma)?;
        check_beta(beta)?;
        Ok(Self {
            f,
            jacobian,
            s,
            sigma,
            r,
            beta,
        })
    }

    /// Wraps a linear model as `F(x) = M A^{-1} x`.
    pub fn from_linear(model: &LinearModel) -> Result<Self> {
        let map = model
            .a
            .clone()
            .lu()
            .solve(&DMatrix::identity(model.a.nrows(), model.a.nrows()))
            .ok_or_else(|| Error::Singular("state operator is not invertible".into()))?;
        let op = &model.m * map;
        let op2 = op.clone();
        Self::new(
            Box::new(move |x| &op * x),
            Box::new(move |_| op2.clone()),
            model.s.clone(),
            model.sigma.clone(),
            model.r.clone(),
            model.beta,
        )
    }

    pub fn param_dim(&self) -> usize {
        self.s.ncols()
    }

    /// `0.5 |S^{-1}(F(S q) - z)|^2 + 0.5 beta |R q|^2`.
    pub fn objective(&self, q: &DVector<f64>, z: &DVector<f64>) -> f64 {
        let misfit = ((self.f)(&(&self.s * q)) - z).component_div(&self.sigma);
        0.5 * misfit.norm_squared() + 0.5 * self.beta * (&self.r * q).norm_squared()
    }
}

/// `Q = S^T F'(S q*)^T Sigma^{-2} F'(S q*) S + beta R^T R`.
pub fn gauss_newton_fisher(model: &NonlinearModel, q_star: &DVector<f64>) -> Result<DMatrix<f64>> {
    if q_star.len() != model.param_dim() {
        return Err(Error::Dimension(format!(
            "parameter has length {}, model expects {}",
            q_star.len(),
            model.param_dim()
        )));
    }
    let jac = (model.jacobian)(&(&model.s * q_star));
    if jac.nrows() != model.sigma.len() || jac.ncols() != model.s.nrows() {
        return Err(Error::Dimension(format!(
            "Jacobian is {}x{}, expected {}x{}",
            jac.nrows(),
            jac.ncols(),
            model.sigma.len(),
            model.s.nrows()
        )));
    }
    Ok(normal_matrix(&(jac * &model.s), &model.sigma, &model.r, model.beta))
}

/// Largest entrywise gap between the supplied Jacobian at `x` and central
/// differences of `F` with the given step.
pub fn jacobian_audit(model: &NonlinearModel, x: &DVector<f64>, step: f64) -> f64 {
    let jac = (model.jacobian)(x);
    let mut worst: f64 = 0.0;
    for j in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += step;
        xm[j] -= step;
        let d = ((model.f)(&xp) - (model.f)(&xm)) / (2.0 * step);
        for i in 0..d.len() {
            worst = worst.max((d[i] - jac[(i, j)]).abs());
        }
    }
    worst
}

/// Normalized first and second moments of a density.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// Probability mass in the outermost layer of grid cells.
    pub shell_mass: f64,
}

/// Midpoint-rule moments of `exp(log_density)` over a box, `n` points per
/// coordinate. At most three dimensions.
pub fn posterior_quadrature_oracle<F>(log_density: F, bounds: &[(f64, f64)], n: usize) -> Result<Moments>
where
    F: Fn(&[f64]) -> f64,
{
    let d = bounds.len();
    if d == 0 || d > 3 {
        return Err(Error::InvalidArgument(format!(
            "quadrature oracle supports 1 to 3 dimensions, got {d}"
        )));
    }
    if n < 3 {
        return Err(Error::InvalidArgument("need at least 3 points per dimension".into()));
    }
    if bounds.iter().any(|(a, b)| !(b > a)) {
        return Err(Error::InvalidArgument("empty quadrature box".into()));
    }
    let total = n.pow(d as u32);
    let point = |mut idx: usize, out: &mut [f64]| -> bool {
        let mut edge = false;
        for (c, (a, b)) in bounds.iter().enumerate() {
            let i = idx % n;
            idx /= n;
            edge |= i == 0 || i == n - 1;
            out[c] = a + (i as f64 + 0.5) * (b - a) / n as f64;
        }
        edge
    };
    let mut x = vec![0.0; d];
    let mut logs = Vec::with_capacity(total);
    let mut peak = f64::NEG_INFINITY;
    for idx in 0..total {
        point(idx, &mut x);
        let v = log_density(&x);
        peak = peak.max(v);
        logs.push(v);
    }
    if !peak.is_finite() {
        return Err(Error::InvalidArgument(
            "log density is not finite anywhere on the grid".into(),
        ));
    }
    let mut mass = 0.0;
    let mut shell = 0.0;
    let mut first = DVector::zeros(d);
    for (idx, lv) in logs.iter().enumerate() {
        let w = (lv - peak).exp();
        let edge = point(idx, &mut x);
        mass += w;
        if edge {
            shell += w;
        }
        for c in 0..d {
            first[c] += w * x[c];
        }
    }
    let mean = first / mass;
    let mut cov = DMatrix::zeros(d, d);
    for (idx, lv) in logs.iter().enumerate() {
        let w = (lv - peak).exp() / mass;
        point(idx, &mut x);
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += w * (x[i] - mean[i]) * (x[j] - mean[j]);
            }
        }
    }
    let shell_mass = shell / mass;
    if shell_mass > 1e-6 {
        return Err(Error::BoxTooSmall { mass: shell_mass });
    }
    Ok(Moments {
        mean,
        covariance: cov,
        shell_mass,
    })
}
