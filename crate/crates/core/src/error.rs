use thiserror::Error;

/// Errors raised by the gradinfo library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("modulus {0} is not prime")]
    NotPrime(u64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{what} count {count} exceeds the configured cap of {cap}")]
    CapExceeded { what: &'static str, count: String, cap: u64 },

    #[error("output value {0} has zero probability under the reference distribution")]
    ZeroProbability(u32),

    #[error("loss derivative is not finite at p = {p}, target = {target}")]
    NonFiniteDerivative { p: f64, target: f64 },

    #[error("loss {0} needs floating-point mode")]
    NeedsFloat(&'static str),

    #[error("design matrix is rank deficient (rank {rank} < {cols} columns)")]
    SingularDesign { rank: usize, cols: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("wrap truncation K = {given} leaves mass {mass:e} > {tol:e}; K = {required} is required")]
    Truncation { given: usize, required: usize, mass: f64, tol: f64 },

    #[error("quadrature did not reach tolerance; residual estimate {residual:e}")]
    Quadrature { residual: f64 },

    #[error("integer overflow while accumulating {0}")]
    Overflow(&'static str),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
