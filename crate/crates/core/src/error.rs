use thiserror::Error;

/// Errors produced by the simulator and the post-processing stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("wavelength {0} nm is outside the modeled grid [600, 1700] nm")]
    OutsideGrid(f64),

    #[error("invalid configuration: {field}: {reason}")]
    Config { field: &'static str, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("unknown spectrum tap `{0}` (expected one of α, β, γ, δ)")]
    UnknownTap(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("clock synchronization is not locked")]
    Unlocked,

    #[error("tag span [{tag_start_ps}, {tag_end_ps}] ps not covered by the reference record")]
    SpanMismatch { tag_start_ps: u64, tag_end_ps: u64 },

    #[error("mismatched configurations: {0}")]
    Mismatch(String),

    #[error("malformed timetag data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("scenario file: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err(field: &'static str, reason: impl Into<String>) -> Error {
    Error::Config {
        field,
        reason: reason.into(),
    }
}
