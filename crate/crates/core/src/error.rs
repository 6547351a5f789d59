use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {what} has length {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate likelihood at observation")]
    DegenerateLikelihood,

    #[error("non-finite integrand at (y = {y}, z = {z})")]
    NonFinite { y: f64, z: u8 },

    #[error("ill-posed; use tikhonov (condition estimate {condition:.3e})")]
    IllPosed { condition: f64 },

    #[error("grid mismatch: correction has {got} rows, prior has {expected} support points")]
    GridMismatch { expected: usize, got: usize },

    #[error("observation {index}: {source}")]
    Observation {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("Jacobian singular at θ̂")]
    SingularJacobian,

    #[error("fit at (δ, γ) = ({delta}, {gamma}) did not converge")]
    Unconverged { delta: f64, gamma: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("insufficient draws: B = {0}, need at least 100")]
    InsufficientDraws(usize),

    #[error("design/method mismatch: {failures} of {reps} replications failed")]
    DesignMismatch { failures: usize, reps: usize },

    #[error("boundary likelihood; not identifiable by inversion")]
    BoundaryLikelihood,

    #[error("EM log-likelihood decreased from {previous} to {current} at iteration {iteration}")]
    LikelihoodDecrease {
        iteration: usize,
        previous: f64,
        current: f64,
    },

    #[error("separation detected in GLM fit: {0}")]
    Separation(String),

    #[error("non-convergent fits along the tipping path at t = {0:?}")]
    PathFailure(Vec<f64>),

    #[error("{0}")]
    Ingest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_observation(self, index: usize) -> Self {
        Error::Observation {
            index,
            source: Box::new(self),
        }
    }

    /// Usage-type errors map to exit code 1 in the CLI; everything else is a
    /// numerical or runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_) | Error::Ingest(_) | Error::Dimension { .. }
        )
    }
}
