use std::path::PathBuf;

pub type Result<T, E = LabError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error(transparent)]
    Core(#[from] icl_core::Error),

    #[error(transparent)]
    Config(#[from] icl_core::config::ConfigError),

    #[error("ridge problem has non-finite {0}")]
    NonFinite(&'static str),

    #[error("ridge solve failed: {0}")]
    Solver(String),

    #[error("{0}")]
    Invalid(String),

    #[error("feature matrix checksum {found:#018x} does not match the model's {expected:#018x}")]
    FeatureMismatch { expected: u64, found: u64 },

    #[error("unknown preset `{0}` (expected fig1_relu, fig1_tanh, fig2a, fig2b or fig2c)")]
    UnknownPreset(String),

    #[error("no successful runs for sweep value {value} and model {model}")]
    EmptyGroup { value: f64, model: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl LabError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        LabError::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
