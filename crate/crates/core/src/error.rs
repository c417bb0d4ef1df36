use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of range or inconsistent. `field` names
    /// the offending entry.
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The requested model cannot be built from the given statistics.
    #[error("model not applicable: {0}")]
    ModelInapplicable(String),

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    /// Propagation lost too much power through the absorbing boundary.
    #[error("propagation diagnostic at sample {sample:?}: {reason}")]
    Propagation { sample: Option<u64>, reason: String },

    #[error("unsupported sample file version {found} (reader supports {supported})")]
    Version { found: u16, supported: u16 },

    #[error("checksum mismatch (stored {stored:#018x}, computed {computed:#018x})")]
    Checksum { stored: u64, computed: u64 },

    #[error("malformed sample file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
