use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A model (rewards, kernel, initial state) violates a type invariant.
    #[error("model validation failed: {0}")]
    ModelValidation(String),

    /// Two objects that must agree on dimensions do not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Exhaustive policy enumeration was refused by the size guard.
    #[error("instance too large to enumerate: {policies} policies exceeds the guard of {limit}")]
    TooLarge { policies: f64, limit: u64 },

    /// An argument lies outside the domain of a formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// A transition row carried too little probability mass to sample from.
    #[error("kernel row (h={h}, s={s}, a={a}) is numerically degenerate: cumulative mass {mass}")]
    Sampling { h: usize, s: usize, a: usize, mass: f64 },

    /// The rejection sampler for gap-controlled instances ran out of attempts.
    #[error("instance generation failed after {attempts} attempts (best gap seen {best_gap})")]
    Generation { attempts: u32, best_gap: f64 },

    /// The gap is the infinite sentinel, so the visit threshold does not exist.
    #[error("gap is infinite (every policy is optimal); the visit threshold is undefined, skip it")]
    DegenerateGap,

    /// A caller handed in data that breaks an operation's contract.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
