//! Where a session's dataset comes from.

use std::path::{Path, PathBuf};

use driftscope_core::{
    generate_synthetic, load_hierarchy, parse_patients, Dataset, DatasetError, HierarchyError, IngestError,
    SyntheticSpec, UnknownCodePolicy,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),

    #[error(transparent)]
    Ingest(#[from] IngestError),

    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// A dataset reference. Sessions store this rather than the data itself, so
/// a session can be rebuilt from its log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DatasetSource {
    /// Hierarchy CSV and patient JSONL files.
    Files {
        hierarchy: PathBuf,
        patients: PathBuf,
        #[serde(default)]
        unknown_codes: UnknownCodePolicy,
    },
    /// File contents passed in the request body.
    Inline {
        hierarchy: String,
        patients: String,
        #[serde(default)]
        unknown_codes: UnknownCodePolicy,
    },
    Synthetic { spec: SyntheticSpec },
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset, SourceError> {
        match self {
            Self::Files {
                hierarchy,
                patients,
                unknown_codes,
            } => load_files(hierarchy, patients, *unknown_codes),
            Self::Inline {
                hierarchy,
                patients,
                unknown_codes,
            } => load_text(hierarchy, patients, *unknown_codes),
            Self::Synthetic { spec } => {
                let (h, table) = generate_synthetic(spec)?;
                Ok(Dataset::assemble(h, table)?)
            }
        }
    }

    /// Stable text key used to share one loaded dataset between sessions.
    pub fn cache_key(&self) -> String {
        serde_json::to_string(self).expect("dataset sources serialize")
    }
}

fn read(path: &Path) -> Result<String, SourceError> {
    std::fs::read_to_string(path).map_err(|source| SourceError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a hierarchy CSV and a patient JSONL file into a dataset.
pub fn load_files(hierarchy: &Path, patients: &Path, policy: UnknownCodePolicy) -> Result<Dataset, SourceError> {
    load_text(&read(hierarchy)?, &read(patients)?, policy)
}

pub fn load_text(hierarchy: &str, patients: &str, policy: UnknownCodePolicy) -> Result<Dataset, SourceError> {
    let h = load_hierarchy(hierarchy)?;
    let table = parse_patients(patients, &h, policy)?;
    Ok(Dataset::assemble(h, table)?)
}
