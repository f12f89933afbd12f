use thiserror::Error;

/// Errors produced by the solver and verification layers.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    /// An argument fell outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An adaptive quadrature hit its panel cap before reaching the
    /// requested tolerance; carries the achieved residual.
    #[error("quadrature did not converge: residual {residual:.3e} > tol {tol:.3e}")]
    Quadrature { residual: f64, tol: f64 },

    /// Series truncation too coarse for the requested evaluation time.
    #[error("truncation warning: tail bound {tail:.3e} at t = {t:.3e} with {n_modes} modes")]
    Truncation { tail: f64, t: f64, n_modes: usize },

    /// Cholesky factorization failed even after jitter retries.
    #[error("cholesky factorization failed after {attempts} jitter attempts")]
    Cholesky { attempts: usize },

    /// The time stepper produced a non-finite state.
    #[error("solution blew up at step {step}")]
    BlowUp { step: usize },

    /// Picard iteration stopped making progress.
    #[error("picard iteration diverged at iterate {iterate}")]
    PicardDiverged { iterate: usize },

    /// A time was requested off the bundle's grid.
    #[error("time {t} is not on the sample grid")]
    OffGrid { t: f64 },

    /// Configuration rejected; every offending key is listed.
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    /// A scan was asked to fit data it refuses to fit (e.g. all zeros).
    #[error("scan refused: {0}")]
    ScanRefused(String),
}

pub type Result<T> = std::result::Result<T, Error>;
