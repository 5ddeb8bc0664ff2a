use thiserror::Error;

/// Errors raised by the numerical operations of this crate.
///
/// Verdict failures are not errors: a hyperbolicity test that does not hold
/// produces a failing certificate. Errors are reserved for invalid input and
/// for numerical breakdown (blow-up, step underflow, degenerate bundles).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown vector field `{0}`")]
    UnknownField(String),
    #[error("vector field `{field}` is missing parameter `{param}`")]
    MissingParameter { field: String, param: String },
    #[error("vector field `{field}` does not take parameter `{param}`")]
    UnexpectedParameter { field: String, param: String },
    #[error("invalid parameter `{param}`: {reason}")]
    InvalidParameter { param: String, reason: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite input")]
    NonFinite,
    #[error("trajectory escaped the guard ball (norm > {guard:e}) at t = {time}")]
    BlowUp { time: f64, guard: f64 },
    #[error("step size underflow at t = {time}")]
    StepUnderflow { time: f64 },
    #[error("degenerate normal bundle: |X| = {speed:e} at the endpoint")]
    DegenerateNormalBundle { speed: f64 },
    #[error("no numerical gap at index {index} (log-gap rate {gap:e})")]
    NoGap { index: usize, gap: f64 },
    #[error("index {index} is not admissible in dimension {dim}")]
    InvalidIndex { index: usize, dim: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("radius too large: seeded disk does not contract at the block rate ({0})")]
    RadiusTooLarge(String),
    #[error("family is not subadditive: violation {violation:e} at s = {s}, t = {t}")]
    NotSubadditive { s: f64, t: f64, violation: f64 },
    #[error("isolating neighbourhood rejected: {0}")]
    NotIsolating(String),
    #[error("orbit leaves the integration record at sample {0}")]
    OutsideRecord(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
