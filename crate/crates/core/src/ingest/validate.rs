//! Report-only dataset checks.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::Serialize;

use super::patients::{parse_patients, UnknownCodePolicy};
use crate::dataset::{infer_attribute_specs, Patient};
use crate::hierarchy::{load_hierarchy, CodeHierarchy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagnosticKind {
    Hierarchy,
    MalformedRecord,
    DuplicatePatient,
    UnknownCode,
    MixedAttribute,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Default)]
pub struct SystemCounts {
    /// Codes defined by the hierarchy.
    pub hierarchy_codes: usize,
    /// Distinct codes recorded on at least one patient.
    pub distinct_event_types: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Default)]
pub struct ValidationReport {
    pub patients: usize,
    pub systems: BTreeMap<String, SystemCounts>,
    pub diagnostics: Vec<Diagnostic>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.diagnostics.is_empty()
    }

    fn push(&mut self, kind: DiagnosticKind, message: String) {
        self.diagnostics.push(Diagnostic { kind, message });
    }
}

/// Checks parsed patients against a hierarchy. Never fails; problems are
/// listed in the report.
pub fn validate_dataset(h: &CodeHierarchy, patients: &[Patient]) -> ValidationReport {
    let mut report = ValidationReport {
        patients: patients.len(),
        ..Default::default()
    };
    for d in h.indices().filter(|&d| h.is_code(d)) {
        report
            .systems
            .entry(h.id(d).system().to_string())
            .or_default()
            .hierarchy_codes += 1;
    }
    let mut seen_ids = HashSet::new();
    let mut recorded: BTreeSet<_> = BTreeSet::new();
    let mut unknown = BTreeSet::new();
    for p in patients {
        if !seen_ids.insert(p.id.as_str()) {
            report.push(DiagnosticKind::DuplicatePatient, format!("patient id '{}' appears more than once", p.id));
        }
        for e in &p.events {
            if h.index_of(e).is_some_and(|d| h.is_code(d)) {
                recorded.insert(e);
            } else {
                unknown.insert(e);
            }
        }
    }
    for e in &recorded {
        report
            .systems
            .entry(e.system().to_string())
            .or_default()
            .distinct_event_types += 1;
    }
    for e in unknown {
        report.push(DiagnosticKind::UnknownCode, format!("code {e} is not in the hierarchy"));
    }
    if let Err(e) = infer_attribute_specs(patients) {
        report.push(DiagnosticKind::MixedAttribute, e.to_string());
    }
    report
}

/// Validates raw file contents, turning load failures into diagnostics.
pub fn validate_sources(hierarchy: &str, patients: &str) -> ValidationReport {
    let h = match load_hierarchy(hierarchy) {
        Ok(h) => h,
        Err(e) => {
            let mut r = ValidationReport::default();
            r.push(DiagnosticKind::Hierarchy, e.to_string());
            return r;
        }
    };
    let mut parsed = Vec::new();
    let mut malformed = Vec::new();
    for (i, line) in patients.lines().enumerate() {
        match parse_patients(line, &h, UnknownCodePolicy::Collect) {
            Ok(mut t) => parsed.append(&mut t.patients),
            Err(e) => malformed.push(format!("line {}: {e}", i + 1)),
        }
    }
    let mut report = validate_dataset(&h, &parsed);
    for m in malformed {
        report.push(DiagnosticKind::MalformedRecord, m);
    }
    report.diagnostics.sort_by(|a, b| a.kind.cmp(&b.kind).then_with(|| a.message.cmp(&b.message)));
    report
}
