use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("hypothesis (H)-2 requires beta in ]0,2[ (Dalang integral diverges otherwise), got {0}")]
    BetaOutOfRange(f64),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("spectral density is negative ({value:e}) at lattice index {index}; covariance is not positive definite on this grid")]
    NotPositiveDefinite { index: usize, value: f64 },
    #[error("time {t} exceeds the wraparound bound L/4 = {bound}")]
    Wraparound { t: f64, bound: f64 },
    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },
    #[error("control norm {norm} exceeds the declared bound {bound}")]
    ControlBound { norm: f64, bound: f64 },
    #[error("Picard iteration did not converge within {iterations} iterates (last gap {last_gap:e})")]
    PicardDiverged {
        iterations: usize,
        last_gap: f64,
        gaps: Vec<f64>,
    },
    #[error("empty or degenerate region: {0}")]
    EmptyRegion(String),
    #[error("malformed field dump: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// True for failures caused by the numerics rather than by the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::PicardDiverged { .. } | Error::NotPositiveDefinite { .. }
        )
    }
}
