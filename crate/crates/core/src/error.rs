use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum MasoError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("enumeration budget exceeded: {needed} configurations > {budget}")]
    BudgetExceeded { needed: String, budget: u64 },
    #[error("inconsistent linear system, max residual {residual:e}")]
    Inconsistent { residual: f64 },
    #[error("did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("network fingerprint mismatch: {0:016x} vs {1:016x}")]
    FingerprintMismatch(u64, u64),
    #[error("wrong mode: {0}")]
    WrongMode(&'static str),
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, MasoError>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(MasoError::DimMismatch {
            context,
            expected,
            got,
        });
    }
    Ok(())
}
