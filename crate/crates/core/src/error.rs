use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid vergence: left eye {left_deg}° is right of right eye {right_deg}°")]
    InvalidVergence { left_deg: f64, right_deg: f64 },

    #[error("interpupillary distance {ipd_m} m outside the accepted range [0.050, 0.080] m")]
    InvalidIpd { ipd_m: f64 },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("samples are degenerate (zero variance)")]
    DegenerateSamples,

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("condition {condition} has {got} accepted trials, need at least {needed}")]
    UndersizedGroup {
        condition: String,
        got: usize,
        needed: usize,
    },

    #[error("training data underdetermined: {0}")]
    Underdetermined(String),

    #[error("training diverged ({param} loss is not finite) at iteration {iteration}")]
    Diverged {
        param: &'static str,
        iteration: usize,
    },

    #[error("displacement (Δv={dv_deg}°, Δs={ds_deg}°) outside the model domain")]
    OutOfDomain { dv_deg: f64, ds_deg: f64 },

    #[error("sample rate {rate_hz} Hz must exceed twice the {cutoff_hz} Hz cutoff")]
    SampleRate { rate_hz: f64, cutoff_hz: f64 },

    #[error("histogram is empty")]
    EmptyHistogram,

    #[error("distribution is not normalized (total mass {0})")]
    Unnormalized(f64),

    #[error("movement support {0}° exceeds the model vergence domain")]
    SupportViolation(f64),

    #[error("leave-one-subject-out split needs subject labels on every trial")]
    MissingSubjects,

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("schema mismatch in {path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// True for failures of a numerical procedure, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::FitFailed(_) | Error::Diverged { .. } | Error::DegenerateSamples
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
