use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Evaluation point outside the half-plane above the electrodes.
    #[error("point (x = {x:e} m, z = {z:e} m) lies outside the domain z > 0")]
    Domain { x: f64, z: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// Negative radicand in the secular-frequency formula.
    #[error("unstable operating point: {0}")]
    Instability(String),

    #[error("no stable inversion: {0}")]
    Inversion(String),

    #[error("quadrature did not converge: relative change {relative_change:.3e} between refinements")]
    Accuracy { relative_change: f64 },

    #[error("scale fit is degenerate: {0}")]
    FitDegenerate(String),

    #[error("fit did not converge after {iterations} iterations (residual sum of squares {residual:.6e})")]
    FitNonConvergence { iterations: usize, residual: f64 },

    #[error("{0}")]
    Usage(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}
