use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("mesh is not aligned with the background grid: {0}")]
    Misaligned(String),

    #[error("singular factorization: zero pivot in column {column} (row {row})")]
    SingularPivot { row: usize, column: usize },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("matrix is not positive definite: pivot {index} = {pivot:e} (smallest pivot so far {smallest:e})")]
    NotPositiveDefinite { index: usize, pivot: f64, smallest: f64 },

    #[error("symmetric eigen-decomposition did not converge (n = {n}, |H|_max = {max_abs:e}, diagonal range [{min_diag:e}, {max_diag:e}])")]
    NotConverged {
        n: usize,
        max_abs: f64,
        min_diag: f64,
        max_diag: f64,
    },

    #[error("matrix of dimension {n} exceeds the dense limit of {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error("quadrature box too small: {mass:e} of the posterior mass lies in the outermost grid shell")]
    BoxTooSmall { mass: f64 },

    #[error("scenario error at line {line}: {message}")]
    Scenario { line: usize, message: String },

    #[error("truth grid equals the inversion grid ({cells}x{cells}); synthetic data would commit an inverse crime")]
    InverseCrime { cells: usize },

    #[error("verification failed: {0}")]
    Check(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Failures of the numerical machinery (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularPivot { .. }
                | Error::Singular(_)
                | Error::NotPositiveDefinite { .. }
                | Error::NotConverged { .. }
                | Error::BoxTooSmall { .. }
                | Error::Check(_)
        )
    }

    pub fn is_scenario(&self) -> bool {
        matches!(
            self,
            Error::Scenario { .. } | Error::InverseCrime { .. } | Error::InvalidArgument(_)
        )
    }
}
