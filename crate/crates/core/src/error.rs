use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what} needs at least {needed} samples, got {got}")]
    TooFewSamples {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("event cap of {cap} reached before the stop condition")]
    Truncated { cap: u64 },

    #[error("time {time} outside the simulated range [0, {end}]")]
    OutOfRange { time: f64, end: f64 },

    #[error("trajectory was simulated without an event log")]
    NoEventLog,

    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("coupling invariant violated at t={time}: {detail}")]
    CouplingViolation { time: f64, detail: String },
}
