use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("vector norm {norm:e} is at or below the normalization epsilon")]
    ZeroVector { norm: f64 },
    #[error("empty sample set")]
    EmptySet,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid dimension {0}: need at least 2")]
    InvalidDimension(usize),
    #[error("value {value} for `{name}` is outside its domain: {reason}")]
    OutOfDomain {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("class {0} has no samples")]
    EmptyClass(usize),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("class population {n} exceeds the maximum population {max}")]
    PopulationExceedsMax { n: usize, max: usize },
    #[error("row {row} has norm {norm}, expected a unit vector")]
    NonUnitInput { row: usize, norm: f64 },
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("cached activations do not match the network: {0}")]
    StaleCache(String),
    #[error("invalid synthetic dataset spec: {0}")]
    SpecInvalid(String),
    #[error("cannot draw {requested} {kind} pairs, only {available} exist")]
    InsufficientPairs {
        kind: &'static str,
        requested: usize,
        available: usize,
    },
    #[error("pair list needs at least one positive and one negative pair")]
    DegeneratePairs,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
}
