use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected m = {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("outside window: {0}")]
    OutsideWindow(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("iterative solve stalled after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("CFL condition violated: dt = {dt:.3e} exceeds limit {limit:.3e}")]
    Cfl { dt: f64, limit: f64 },

    #[error("all {0} paths were censored")]
    AllCensored(usize),

    #[error("quadrature failure: {0}")]
    Quadrature(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Numerical failures (as opposed to bad input) map to a distinct CLI exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::NotSpd(_)
                | Error::NoConvergence { .. }
                | Error::AllCensored(_)
                | Error::Quadrature(_)
                | Error::DegenerateFit(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
