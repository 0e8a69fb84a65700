use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Cached activations do not belong to the network they are replayed through.
    #[error("stale or mismatched forward cache: {0}")]
    Consistency(String),

    #[error("non-finite gradient in parameter slot {slot}")]
    NonFiniteGradient { slot: usize },

    #[error("value outside domain: {0}")]
    Domain(String),

    #[error("rank {rank} out of range 1..={max}")]
    Rank { rank: usize, max: usize },

    #[error("numerical failure: {msg} (residual {residual:e})")]
    Numerical { msg: String, residual: f64 },

    #[error("environment protocol violation: {0}")]
    Protocol(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Replay buffer holds fewer entries than the requested batch.
    #[error("replay buffer not ready: have {have}, need {need}")]
    NotReady { have: usize, need: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("unsupported checkpoint format: {0}")]
    UnsupportedFormat(String),

    #[error("corrupt checkpoint at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// True for errors caused by bad user configuration rather than runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InvalidArchitecture(_) | Error::InvalidInput(_) | Error::Rank { .. }
        )
    }
}
