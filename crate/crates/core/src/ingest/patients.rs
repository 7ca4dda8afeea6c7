//! Newline-delimited JSON patient records.

use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::dataset::{Patient, PatientTable};
use crate::hierarchy::CodeHierarchy;

/// What to do with event codes the hierarchy does not define.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnknownCodePolicy {
    #[default]
    Strict,
    /// Keep the record and list the code in [`PatientTable::unknown_codes`].
    Collect,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    #[serde(default)]
    attributes: std::collections::BTreeMap<String, crate::dataset::AttributeValue>,
    #[serde(default)]
    events: Vec<String>,
}

/// Parses one patient per non-blank line: `{"id", "attributes", "events"}`
/// with events written as `system:code`.
pub fn parse_patients(
    content: &str,
    h: &CodeHierarchy,
    policy: UnknownCodePolicy,
) -> Result<PatientTable, IngestError> {
    let mut table = PatientTable::default();
    for (i, line) in content.lines().enumerate() {
        let line_no = i as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(line).map_err(|e| IngestError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if record.id.is_empty() {
            return Err(IngestError::Malformed {
                line: line_no,
                message: "empty patient id".into(),
            });
        }
        let mut patient = Patient {
            id: record.id,
            attributes: record.attributes,
            events: Default::default(),
        };
        for raw in record.events {
            let code = raw.parse().map_err(|e| IngestError::Malformed {
                line: line_no,
                message: format!("{e}"),
            })?;
            if !h.index_of(&code).is_some_and(|d| h.is_code(d)) {
                match policy {
                    UnknownCodePolicy::Strict => return Err(IngestError::UnknownCode { line: line_no, code }),
                    UnknownCodePolicy::Collect => {
                        table.unknown_codes.insert(code.clone());
                    }
                }
            }
            patient.events.insert(code);
        }
        table.patients.push(patient);
    }
    Ok(table)
}

/// Writes patients in the format read by [`parse_patients`], one per line.
pub fn write_patients(patients: &[Patient]) -> String {
    let mut out = String::new();
    for p in patients {
        out.push_str(&serde_json::to_string(p).expect("patients serialize"));
        out.push('\n');
    }
    out
}
