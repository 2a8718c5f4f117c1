use thiserror::Error;

use crate::diagnose::DiagnosticReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The penalized normal matrix is singular: the kernel of `D_s^T D_s`
    /// overlaps the kernel of the marginal s-penalty.
    #[error("non-identifiable: {message}")]
    NonIdentifiable {
        message: String,
        report: Option<Box<DiagnosticReport>>,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("linear algebra failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn non_identifiable(msg: impl Into<String>) -> Self {
        Error::NonIdentifiable {
            message: msg.into(),
            report: None,
        }
    }

    /// Attaches a diagnostic report to a non-identifiability error; other
    /// variants pass through untouched.
    pub fn with_report(self, report: DiagnosticReport) -> Self {
        match self {
            Error::NonIdentifiable { message, .. } => Error::NonIdentifiable {
                message,
                report: Some(Box::new(report)),
            },
            other => other,
        }
    }

    pub fn is_non_identifiable(&self) -> bool {
        matches!(self, Error::NonIdentifiable { .. })
    }
}
