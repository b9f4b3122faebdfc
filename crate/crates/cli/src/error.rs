use std::fmt;

/// Command errors mapped onto the documented exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Exit 2: a required input (config path, dataset, backgrounds) is absent.
    MissingInput(String),
    /// Exit 3: a required model artifact (encoder, flow, combiner, embeddings) is absent.
    MissingModel(String),
    /// Exit 4: unknown scoring method.
    UnknownMethod(String),
    /// Exit 5: score/mask shape mismatch during evaluation.
    ShapeMismatch(String),
    /// Exit 1: any other failure bubbling up from the library.
    Other(fishy_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingInput(_) => 2,
            CliError::MissingModel(_) => 3,
            CliError::UnknownMethod(_) => 4,
            CliError::ShapeMismatch(_) => 5,
            CliError::Other(_) => 1,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::MissingInput(_) => "MISSING_INPUT",
            CliError::MissingModel(_) => "MISSING_MODEL",
            CliError::UnknownMethod(_) => "UNKNOWN_METHOD",
            CliError::ShapeMismatch(_) => "SHAPE_MISMATCH",
            CliError::Other(_) => "ERROR",
        }
    }

    /// Machine-readable error payload printed to stderr on failure.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.code(), "message": self.to_string() }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::MissingInput(m) => write!(f, "missing input: {m}"),
            CliError::MissingModel(m) => write!(f, "missing model: {m}"),
            CliError::UnknownMethod(m) => write!(f, "unknown method: {m}"),
            CliError::ShapeMismatch(m) => write!(f, "shape mismatch: {m}"),
            CliError::Other(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<fishy_core::Error> for CliError {
    fn from(e: fishy_core::Error) -> Self {
        CliError::Other(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;
