use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cutoff mismatch: {left} vs {right}")]
    CutoffMismatch { left: usize, right: usize },

    #[error(
        "cutoff too small: population {population:.3e} at index {n_max} exceeds leakage bound \
         {bound:.1e}; use a cutoff of at least {suggested}"
    )]
    CutoffTooSmall {
        n_max: usize,
        population: f64,
        bound: f64,
        suggested: usize,
    },

    #[error("expected a {expected}-mode object, got {found} modes")]
    ModeMismatch { expected: usize, found: usize },

    #[error("impossible outcome: probability {0:.3e}")]
    ImpossibleOutcome(f64),

    #[error("negligible-probability scenario: herald probability {0:.3e}")]
    NegligibleProbability(f64),

    #[error("input not normalized: deviation {0:.3e}")]
    NotNormalized(f64),

    #[error("invalid density operator: {0}")]
    InvalidDensity(String),

    #[error("insufficient grid coverage: probability mass {0:.3e} outside the grid")]
    InsufficientCoverage(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
