//! Error type shared by all modules.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown preset '{0}' (expected A, B, C or D)")]
    UnknownPreset(String),
    #[error("malformed config line {line}: '{text}'")]
    MalformedLine { line: usize, text: String },
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("invalid value for '{key}': {reason}")]
    InvalidValue { key: String, reason: String },
    #[error("parameter invariant violated: {0}")]
    Invariant(String),
    #[error("radial partition: {0} domains cannot each own {1} rings of {2}")]
    TooManyDomains(usize, usize, usize),
    #[error("coordinate out of domain: r = {0}")]
    OutOfDomain(f64),
    #[error("transport: message size mismatch (expected {expected}, got {got})")]
    SizeMismatch { expected: usize, got: usize },
    #[error("transport: {0}")]
    Topology(String),
    #[error("particle store capacity {0} exceeded")]
    CapacityOverflow(usize),
    #[error("shift did not settle after {0} iterations")]
    ShiftDiverged(usize),
    #[error("non-finite {what} at particle {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("bad snapshot or message encoding: {0}")]
    Encoding(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
