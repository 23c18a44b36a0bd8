use alloc::string::String;

use crate::config::ConfigError;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("unknown activation `{0}` (expected relu, tanh or identity)")]
    UnknownActivation(String),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error(
        "degenerate configuration: trace estimate {t:e} is not positive (all attention features vanish)"
    )]
    DegenerateTrace { t: f64 },

    #[error("{what} needs at least {required} samples, got {got}")]
    TooFewSamples {
        what: &'static str,
        required: usize,
        got: usize,
    },

    #[error("invalid argument {what}: {reason}")]
    InvalidArgument {
        what: &'static str,
        reason: &'static str,
    },

    #[error(
        "quadrature rule with {nodes} nodes is too small for degree {degree} (need at least {required})"
    )]
    InsufficientQuadrature {
        nodes: usize,
        degree: usize,
        required: usize,
    },

    #[error("Hermite energy exceeds the second moment by {excess:e}; quadrature is inconsistent")]
    ResidualInconsistent { excess: f64 },
}
