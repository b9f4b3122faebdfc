use thiserror::Error;

/// Errors surfaced by the scoring, training, and dataset modules.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated a documented precondition (shape mismatch,
    /// empty input, out-of-range index, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A non-finite value appeared inside a flow step.
    #[error("numeric overflow in flow step {step}: {detail}")]
    NumericOverflow { step: usize, detail: String },

    /// A non-finite value appeared outside a specific flow step.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training produced a non-finite loss or gradient.
    #[error("training diverged at iteration {iteration}: {detail}")]
    TrainingDiverged { iteration: usize, detail: String },

    /// A metric was requested on an accumulator that cannot define it
    /// (e.g. average precision with zero positives).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Logistic fitting received only one class.
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    /// Object placement kept colliding with the ego mask or image border.
    #[error("placement infeasible after {attempts} rejected attempts")]
    PlacementInfeasible { attempts: usize },

    /// Histogram accumulation saw scores outside the declared range and
    /// clamping was not enabled.
    #[error("{count} scores outside histogram range [{lo}, {hi}]")]
    ScoreOutOfRange { count: u64, lo: f64, hi: f64 },

    /// Invalid or inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed file contents (bad magic, truncated payload, ...).
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
