use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value or combination of values is invalid. The message
    /// names the offending key or check.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("infeasible: {what} needs {needed} subchannels but the grid has {available}")]
    Infeasible {
        what: String,
        needed: u32,
        available: u32,
    },

    #[error("measurement window not filled yet ({have} of {need} subframes observed)")]
    WarmUp { have: u64, need: u64 },

    #[error("no decode curve configured for MCS {0}")]
    MissingCurve(u8),

    #[error("{0}")]
    Runtime(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors that stem from the inputs rather than from execution.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Infeasible { .. } | Error::MissingCurve(_)
        )
    }
}
