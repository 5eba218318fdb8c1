use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("missing channel gain for link {tx} -> {rx} at slot {slot}")]
    MissingGain { tx: String, rx: String, slot: usize },

    #[error("invalid channel index {channel} (have {num_channels} channels)")]
    InvalidChannel { channel: usize, num_channels: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("reservoir initialization failed: {0}")]
    Reservoir(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("value iteration did not converge after {0} sweeps")]
    NonConvergence(usize),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code for the CLI: 1 for configuration problems, 2 for
    /// runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Geometry(_) => 1,
            _ => 2,
        }
    }
}
