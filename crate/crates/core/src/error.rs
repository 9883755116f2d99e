use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("scalar function is not finite at eigenvalue {eigenvalue}")]
    SpectrumDomain { eigenvalue: f64 },

    #[error("matrix is not positive semi-definite (factorization failed with jitter up to {max_jitter:e})")]
    NotPsd { max_jitter: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("malformed file at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("could not parse {field:?} at line {line} as a number")]
    Parse { line: usize, field: String },

    #[error("invalid bivariate moment: {0}")]
    InvalidMoment(String),

    #[error("degenerate kernel: lambda_min + lambda_max = {0}")]
    DegenerateKernel(f64),

    #[error("initial outputs are required for per-realization dynamics")]
    MissingInitialState,

    #[error("integrator step size underflow at t = {t} (h = {h:e})")]
    Stiffness { t: f64, h: f64 },

    #[error("training diverged at step {step} (loss {loss:e})")]
    Divergence { step: usize, loss: f64 },

    #[error("record grids differ: {0}")]
    Grid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
