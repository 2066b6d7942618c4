use thiserror::Error;

/// Everything that can go wrong inside the core library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A caller broke the contract of an operation (wrong tuple length,
    /// repeated index, time running backwards, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Parameters that cannot describe a valid model.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A numeric parameter is outside the domain of a formula.
    #[error("{name} = {value} is out of range: {reason}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    /// The configuration has zero spread so a ratio against V is undefined.
    #[error("degenerate configuration: V(x) = 0, ratio undefined")]
    Degenerate,

    /// Brute-force enumeration would exceed the tuple cap.
    #[error("enumeration of {count} tuples exceeds the cap of {cap}")]
    TooManyTuples { count: u128, cap: u64 },

    /// A regime label disagrees with the time scale it was asked about.
    #[error("regime mismatch: {0}")]
    RegimeMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;
