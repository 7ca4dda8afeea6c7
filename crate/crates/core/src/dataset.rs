//! Patient records and the indexed dataset every analysis runs against.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{AttributeKind, AttributeSpec, CodeHierarchy, DimIndex, DimensionId, HierarchyError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("duplicate patient id '{0}'")]
    DuplicatePatient(String),

    #[error("patient '{patient}' records unknown code {code}")]
    UnknownCode { patient: String, code: DimensionId },

    #[error("patient '{patient}' has undeclared attribute '{attribute}'")]
    UnknownAttribute { patient: String, attribute: String },

    #[error("patient '{patient}': attribute '{attribute}' value {value} does not match its declaration")]
    AttributeMismatch {
        patient: String,
        attribute: String,
        value: String,
    },

    #[error("attribute '{0}' mixes numeric and categorical values")]
    MixedAttribute(String),

    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
}

/// A categorical label or a number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttributeValue {
    Number(f64),
    Category(String),
}

impl AttributeValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Self::Number(v) => Some(*v),
            Self::Category(_) => None,
        }
    }

    pub fn as_category(&self) -> Option<&str> {
        match self {
            Self::Category(c) => Some(c),
            Self::Number(_) => None,
        }
    }
}

impl fmt::Display for AttributeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Number(v) => write!(f, "{v}"),
            Self::Category(c) => write!(f, "{c:?}"),
        }
    }
}

/// One patient: attributes plus the raw (pre-closure) recorded codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patient {
    pub id: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, AttributeValue>,
    #[serde(default)]
    pub events: BTreeSet<DimensionId>,
}

/// Parsed patient records plus any codes that were missing from the
/// hierarchy (only populated when ingest tolerates unknown codes).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PatientTable {
    pub patients: Vec<Patient>,
    pub unknown_codes: BTreeSet<DimensionId>,
}

impl PatientTable {
    pub fn new(patients: Vec<Patient>) -> Self {
        Self {
            patients,
            unknown_codes: BTreeSet::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }
}

/// Declarations for every attribute seen in `patients`: strings become
/// categorical (categories sorted), numbers become numeric with the observed
/// range.
pub fn infer_attribute_specs(patients: &[Patient]) -> Result<Vec<AttributeSpec>, DatasetError> {
    enum Seen {
        Cats(BTreeSet<String>),
        Range(f64, f64),
    }
    let mut seen: BTreeMap<&str, Seen> = BTreeMap::new();
    for p in patients {
        for (name, value) in &p.attributes {
            let entry = seen.entry(name.as_str());
            match (value, entry) {
                (AttributeValue::Category(c), std::collections::btree_map::Entry::Vacant(v)) => {
                    v.insert(Seen::Cats(BTreeSet::from([c.clone()])));
                }
                (AttributeValue::Number(x), std::collections::btree_map::Entry::Vacant(v)) => {
                    v.insert(Seen::Range(*x, *x));
                }
                (AttributeValue::Category(c), std::collections::btree_map::Entry::Occupied(mut o)) => {
                    match o.get_mut() {
                        Seen::Cats(set) => {
                            set.insert(c.clone());
                        }
                        Seen::Range(..) => return Err(DatasetError::MixedAttribute(name.clone())),
                    }
                }
                (AttributeValue::Number(x), std::collections::btree_map::Entry::Occupied(mut o)) => {
                    match o.get_mut() {
                        Seen::Range(lo, hi) => {
                            *lo = lo.min(*x);
                            *hi = hi.max(*x);
                        }
                        Seen::Cats(_) => return Err(DatasetError::MixedAttribute(name.clone())),
                    }
                }
            }
        }
    }
    Ok(seen
        .into_iter()
        .map(|(name, s)| match s {
            Seen::Cats(c) => AttributeSpec::categorical(name, c.into_iter().collect()),
            Seen::Range(lo, hi) => AttributeSpec::numeric(name, lo, hi),
        })
        .collect())
}

/// Hierarchy plus patients, with every patient's ancestor closure
/// precomputed. Immutable once built.
#[derive(Debug, Clone)]
pub struct Dataset {
    hierarchy: CodeHierarchy,
    patients: Vec<Patient>,
    closures: Vec<Vec<DimIndex>>,
    by_id: HashMap<String, u32>,
}

impl Dataset {
    /// Validates `patients` against `hierarchy`, which must already carry the
    /// attribute declarations.
    pub fn new(hierarchy: CodeHierarchy, patients: Vec<Patient>) -> Result<Self, DatasetError> {
        let mut by_id = HashMap::with_capacity(patients.len());
        let mut closures = Vec::with_capacity(patients.len());
        let mut scratch = Vec::new();
        for (row, p) in patients.iter().enumerate() {
            if by_id.insert(p.id.clone(), row as u32).is_some() {
                return Err(DatasetError::DuplicatePatient(p.id.clone()));
            }
            for (name, value) in &p.attributes {
                let spec = hierarchy.attribute(name).ok_or_else(|| DatasetError::UnknownAttribute {
                    patient: p.id.clone(),
                    attribute: name.clone(),
                })?;
                let ok = match (&spec.kind, value) {
                    (AttributeKind::Categorical { categories }, AttributeValue::Category(c)) => {
                        categories.iter().any(|k| k == c)
                    }
                    (AttributeKind::Numeric { .. }, AttributeValue::Number(x)) => x.is_finite(),
                    _ => false,
                };
                if !ok {
                    return Err(DatasetError::AttributeMismatch {
                        patient: p.id.clone(),
                        attribute: name.clone(),
                        value: value.to_string(),
                    });
                }
            }
            scratch.clear();
            for code in &p.events {
                match hierarchy.index_of(code) {
                    Some(i) if hierarchy.is_code(i) => scratch.push(i),
                    _ => {
                        return Err(DatasetError::UnknownCode {
                            patient: p.id.clone(),
                            code: code.clone(),
                        })
                    }
                }
            }
            closures.push(hierarchy.closure_indices(&scratch));
        }
        Ok(Self {
            hierarchy,
            patients,
            closures,
            by_id,
        })
    }

    /// Builds a dataset from a code-only hierarchy: attaches codes the table
    /// flagged as unknown, infers attribute declarations, then validates.
    pub fn assemble(hierarchy: CodeHierarchy, table: PatientTable) -> Result<Self, DatasetError> {
        let specs = infer_attribute_specs(&table.patients)?;
        let hierarchy = hierarchy
            .with_unknown_codes(&table.unknown_codes)?
            .with_attributes(specs)?;
        Self::new(hierarchy, table.patients)
    }

    pub fn hierarchy(&self) -> &CodeHierarchy {
        &self.hierarchy
    }

    pub fn patients(&self) -> &[Patient] {
        &self.patients
    }

    pub fn patient(&self, row: u32) -> &Patient {
        &self.patients[row as usize]
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn row_of(&self, id: &str) -> Option<u32> {
        self.by_id.get(id).copied()
    }

    /// Sorted ancestor closure of the patient's recorded codes.
    pub fn closure(&self, row: u32) -> &[DimIndex] {
        &self.closures[row as usize]
    }

    /// Whether `code` is present for the patient once ancestors are implied.
    pub fn has_code(&self, row: u32, code: DimIndex) -> bool {
        self.closures[row as usize].binary_search(&code).is_ok()
    }

    pub fn attribute(&self, row: u32, name: &str) -> Option<&AttributeValue> {
        self.patients[row as usize].attributes.get(name)
    }
}
