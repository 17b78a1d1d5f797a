use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter outside the support of a distribution or model.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid policy history: {0}")]
    InvalidHistory(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Count-support truncation could not reach the requested tail bound.
    #[error("truncation failed after {terms} terms: tail bound {achieved:e} exceeds target {target:e}")]
    Truncation { achieved: f64, target: f64, terms: u64 },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("{}", DataIssues(.0))]
    Data(Vec<DataIssue>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

/// One row-level problem found while loading or validating a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataIssue {
    pub file: String,
    /// 1-based line number in the source file, when the issue has one.
    pub line: Option<u64>,
    pub message: String,
}

impl fmt::Display for DataIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{}: {}", self.file, line, self.message),
            None => write!(f, "{}: {}", self.file, self.message),
        }
    }
}

struct DataIssues<'a>(&'a [DataIssue]);

impl fmt::Display for DataIssues<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} data issue(s)", self.0.len())?;
        for issue in self.0 {
            write!(f, "\n  {issue}")?;
        }
        Ok(())
    }
}
