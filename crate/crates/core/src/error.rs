use thiserror::Error;

/// Errors raised by the solvers and diagnostics.
#[derive(Debug, Error)]
pub enum CblError {
    #[error("invalid grid size n_y = {0}: must be even and at least 2")]
    InvalidGridSize(usize),

    #[error("length mismatch: expected {expected} samples, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("wavenumber k = 0 is not allowed here")]
    ZeroWavenumber,

    #[error("boundary value {value:e} at y = {y} violates the homogeneous Dirichlet condition")]
    BoundaryViolation { y: f64, value: f64 },

    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("CFL bound violated: {measured:.4} > {limit}")]
    Cfl { measured: f64, limit: f64 },

    #[error("resolution guard: n_y = {n_y} is below the required {required} for diffusivity {diffusivity:e}")]
    UnderResolved {
        n_y: usize,
        required: usize,
        diffusivity: f64,
    },

    #[error("non-finite value encountered at t = {t}")]
    NonFinite { t: f64 },

    #[error("singular linear system ({0})")]
    Singular(&'static str),

    #[error("decay fit needs positive samples; got {value:e} at t = {t}")]
    NonPositiveSample { t: f64, value: f64 },

    #[error("decay fit window ({lo}, {hi}) holds fewer than two samples")]
    EmptyWindow { lo: f64, hi: f64 },

    #[error("stale stream-function cache")]
    StaleCache,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CblError>;
