//! Reading, writing, validating and generating datasets.

pub mod patients;
pub mod synthetic;
pub mod validate;

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::hierarchy::{DimensionId, HierarchyError};

pub use patients::{parse_patients, write_patients, UnknownCodePolicy};
pub use synthetic::{generate_synthetic, synthetic_hierarchy, PlantedCorrelation, SyntheticSpec, SystemShape};
pub use validate::{validate_dataset, validate_sources, Diagnostic, DiagnosticKind, ValidationReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("malformed patient record at line {line}: {message}")]
    Malformed { line: u64, message: String },

    #[error("unknown code {code} at line {line}")]
    UnknownCode { line: u64, code: DimensionId },

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("infeasible correlation: {0}")]
    InfeasibleCorrelation(String),

    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),

    #[error(transparent)]
    Dataset(#[from] DatasetError),
}
