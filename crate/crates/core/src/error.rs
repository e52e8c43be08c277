use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("subsonic regime required: |U| = {0} must be < 1")]
    Supersonic(f64),

    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape { what: &'static str, expected: usize, got: usize },

    #[error("usage error: {0}")]
    Usage(&'static str),

    #[error("linear solver breakdown at row {row} (pivot {pivot:e})")]
    Singular { row: usize, pivot: f64 },

    #[error("stage solver did not converge in {iterations} iterations (residual {residual:e})")]
    StageSolve { iterations: usize, residual: f64 },

    #[error("explicit step violates the stability bound: dt = {dt} > {limit}")]
    Cfl { dt: f64, limit: f64 },

    #[error("non-finite values detected at t = {t}")]
    Divergence { t: f64 },

    #[error("fixed-point iteration did not converge in {iterations} iterations (contraction estimate {q})")]
    FixedPoint { iterations: usize, q: f64 },

    #[error("slab map is not contractive: q = {q} on window {window}")]
    NonContractive { q: f64, window: f64 },

    #[error("iterate left the invariant ball: {value} >= {radius}")]
    BallExit { value: f64, radius: f64 },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape { what, expected, got })
    }
}
