use thiserror::Error;

/// Errors raised across the reachability pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix {name} is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NotSymmetric { name: &'static str, asymmetry: f64 },

    #[error("M_w is not negative definite (largest eigenvalue {max_eigenvalue:.6e})")]
    NotNegativeDefinite { max_eigenvalue: f64 },

    #[error("M_w could not be factorized")]
    SingularMw,

    #[error("scaling factor must be positive, got {0}")]
    NonPositiveScale(f64),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("step size underflow at t = {t} (last valid time)")]
    StepSizeUnderflow { t: f64 },

    #[error("time {t} is outside the domain [0, {end}]")]
    OutOfDomain { t: f64, end: f64 },

    #[error("initial state is not on the paraboloid boundary (h = {h:.3e}, tolerance {tol:.1e})")]
    NotOnBoundary { h: f64, tol: f64 },

    #[error("touching invariant drifted at t = {t}: |h| = {h:.3e} exceeds {tol:.1e}")]
    TouchDrift { t: f64, h: f64, tol: f64 },

    #[error("seed slab is unbounded: E0 is not positive definite; supply gamma_bar explicitly")]
    UnboundedSlab,

    #[error("seed set P0 ∩ X+ is empty")]
    EmptySeed,

    #[error("rejection starvation: accepted {accepted} of {attempted} samples")]
    RejectionStarvation { accepted: usize, attempted: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short machine-readable tag used in structured diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::NotSymmetric { .. } => "not_symmetric",
            Error::NotNegativeDefinite { .. } => "not_negative_definite",
            Error::SingularMw => "singular_mw",
            Error::NonPositiveScale(_) => "non_positive_scale",
            Error::NonFinite(_) => "non_finite",
            Error::InvalidConfig(_) => "invalid_config",
            Error::StepSizeUnderflow { .. } => "step_size_underflow",
            Error::OutOfDomain { .. } => "out_of_domain",
            Error::NotOnBoundary { .. } => "not_on_boundary",
            Error::TouchDrift { .. } => "touch_drift",
            Error::UnboundedSlab => "unbounded_slab",
            Error::EmptySeed => "empty_seed",
            Error::RejectionStarvation { .. } => "rejection_starvation",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
