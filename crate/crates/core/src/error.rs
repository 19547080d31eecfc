use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("domain error at node {node}: {message}")]
    GraphDomain { node: usize, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at iteration {iter} in {loss} (clamp count {clamp_count}): {detail}")]
    Diverged {
        iter: usize,
        loss: String,
        clamp_count: u64,
        detail: String,
    },

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Rejects empty batches with a usage error naming the argument.
pub(crate) fn require_nonempty(values: &[f64], what: &str) -> Result<()> {
    if values.is_empty() {
        Err(Error::Usage(format!("{what} batch is empty")))
    } else {
        Ok(())
    }
}

pub(crate) fn require_positive(values: &[f64], what: &str) -> Result<()> {
    require_nonempty(values, what)?;
    match values.iter().position(|&v| !(v > 0.0)) {
        Some(i) => Err(Error::Domain(format!(
            "{what}[{i}] = {} is not strictly positive",
            values[i]
        ))),
        None => Ok(()),
    }
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}
