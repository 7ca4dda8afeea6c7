use driftscope_core::{CohortError, HierarchyError, LayoutError, MetricsError};
use thiserror::Error;

use crate::source::SourceError;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown session '{0}'")]
    UnknownSession(String),

    #[error("session is at version {actual}, request expected {expected}")]
    VersionConflict { expected: u64, actual: u64 },

    #[error("{0}")]
    BadRequest(String),

    #[error("missing or invalid API token")]
    Unauthorized,

    #[error(transparent)]
    Cohort(#[from] CohortError),

    #[error(transparent)]
    Metrics(#[from] MetricsError),

    #[error(transparent)]
    Layout(#[from] LayoutError),

    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),

    #[error(transparent)]
    Source(#[from] SourceError),

    #[error("session storage: {0}")]
    Storage(#[from] std::io::Error),

    #[error("corrupt session file {path}: {message}")]
    Corrupt { path: String, message: String },
}

/// Coarse classification used for HTTP status codes and CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    NotFound,
    Invalid,
    Conflict,
    Unauthorized,
    Internal,
}

impl ServiceError {
    pub fn class(&self) -> ErrorClass {
        match self {
            Self::UnknownSession(_) => ErrorClass::NotFound,
            Self::VersionConflict { .. } => ErrorClass::Conflict,
            Self::BadRequest(_) | Self::Source(_) => ErrorClass::Invalid,
            Self::Unauthorized => ErrorClass::Unauthorized,
            Self::Cohort(e) => cohort_class(e),
            Self::Metrics(e) => metrics_class(e),
            Self::Layout(e) => match e {
                LayoutError::UnknownGroup(_) | LayoutError::UnknownSystem(_) => ErrorClass::NotFound,
                LayoutError::Metrics(m) => metrics_class(m),
                LayoutError::EmptyHierarchy | LayoutError::ProfileMismatch { .. } => ErrorClass::Invalid,
            },
            Self::Hierarchy(e) => hierarchy_class(e),
            Self::Storage(_) | Self::Corrupt { .. } => ErrorClass::Internal,
        }
    }
}

fn cohort_class(e: &CohortError) -> ErrorClass {
    match e {
        CohortError::UnknownCohort(_) | CohortError::UnknownEdge(_) => ErrorClass::NotFound,
        _ => ErrorClass::Invalid,
    }
}

fn metrics_class(e: &MetricsError) -> ErrorClass {
    match e {
        MetricsError::UnknownDimension(_) => ErrorClass::NotFound,
        MetricsError::Cohort(c) => cohort_class(c),
        _ => ErrorClass::Invalid,
    }
}

fn hierarchy_class(e: &HierarchyError) -> ErrorClass {
    match e {
        HierarchyError::UnknownDimension(_) => ErrorClass::NotFound,
        _ => ErrorClass::Invalid,
    }
}
