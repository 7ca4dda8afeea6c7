//! Filter operators and the cohort provenance tree.
//!
//! Every filter applied to a cohort produces two children: the patients that
//! match (included) and those that do not (excluded). Excluded cohorts start
//! hidden. The tree also carries the baseline and focus markers used by
//! every comparison view.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{AttributeValue, Dataset};
use crate::hierarchy::{AttributeKind, CodeHierarchy, DimIndex, DimensionId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CohortError {
    #[error("unknown cohort {0}")]
    UnknownCohort(CohortId),

    #[error("unknown filter edge {0}")]
    UnknownEdge(EdgeId),

    #[error("cohort {0} is the root and has no filter edge")]
    RootHasNoEdge(CohortId),

    #[error("cohort {0} is hidden; show it before filtering it")]
    HiddenCohort(CohortId),

    #[error("filter target {0} is not in the hierarchy")]
    UnknownTarget(String),

    #[error("invalid filter: {0}")]
    InvalidFilter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CohortId(pub u64);

impl fmt::Display for CohortId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeId(pub u64);

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "edge {}", self.0)
    }
}

/// Closed numeric interval `[lo, hi]`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl From<[f64; 2]> for Interval {
    fn from([lo, hi]: [f64; 2]) -> Self {
        Self { lo, hi }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// A single filter step. Serializes as `{kind, target, value}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FilterOperator {
    AttributeEquals { target: String, value: String },
    AttributeRange { target: String, value: Interval },
    EventPresent { target: DimensionId },
    EventAbsent { target: DimensionId },
}

impl FilterOperator {
    /// The dimension this filter constrains.
    pub fn target(&self) -> DimensionId {
        match self {
            Self::AttributeEquals { target, .. } | Self::AttributeRange { target, .. } => {
                DimensionId::attribute(target)
            }
            Self::EventPresent { target } | Self::EventAbsent { target } => target.clone(),
        }
    }

    fn validate(&self, h: &CodeHierarchy) -> Result<(), CohortError> {
        match self {
            Self::AttributeEquals { target, value } => match h.attribute(target).map(|a| &a.kind) {
                Some(AttributeKind::Categorical { .. }) => Ok(()),
                Some(_) => Err(CohortError::InvalidFilter(format!(
                    "attribute '{target}' is numeric; use attribute-range (value '{value}')"
                ))),
                None => Err(CohortError::UnknownTarget(target.clone())),
            },
            Self::AttributeRange { target, value } => {
                match h.attribute(target).map(|a| &a.kind) {
                    Some(AttributeKind::Numeric { .. }) => {}
                    Some(_) => {
                        return Err(CohortError::InvalidFilter(format!(
                            "attribute '{target}' is categorical; use attribute-equals"
                        )))
                    }
                    None => return Err(CohortError::UnknownTarget(target.clone())),
                }
                if !(value.lo.is_finite() && value.hi.is_finite() && value.lo <= value.hi) {
                    return Err(CohortError::InvalidFilter(format!(
                        "empty interval [{}, {}]",
                        value.lo, value.hi
                    )));
                }
                Ok(())
            }
            Self::EventPresent { target } | Self::EventAbsent { target } => {
                match h.index_of(target) {
                    Some(i) if h.is_code(i) => Ok(()),
                    _ => Err(CohortError::UnknownTarget(target.to_string())),
                }
            }
        }
    }

    /// Builds the per-patient predicate. Event matching is closure based: a
    /// patient has code X when X or any descendant of X was recorded.
    fn matcher<'a>(&'a self, ds: &'a Dataset) -> Box<dyn Fn(u32) -> bool + 'a> {
        match self {
            Self::AttributeEquals { target, value } => Box::new(move |p| {
                matches!(ds.attribute(p, target), Some(AttributeValue::Category(c)) if c == value)
            }),
            Self::AttributeRange { target, value } => Box::new(move |p| {
                matches!(ds.attribute(p, target), Some(AttributeValue::Number(x)) if value.contains(*x))
            }),
            Self::EventPresent { target } => {
                let idx = ds.hierarchy().index_of(target).expect("validated target");
                Box::new(move |p| ds.has_code(p, idx))
            }
            Self::EventAbsent { target } => {
                let idx = ds.hierarchy().index_of(target).expect("validated target");
                Box::new(move |p| !ds.has_code(p, idx))
            }
        }
    }
}

impl fmt::Display for FilterOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::AttributeEquals { target, value } => write!(f, "{target} = {value}"),
            Self::AttributeRange { target, value } => {
                write!(f, "{target} in [{}, {}]", value.lo, value.hi)
            }
            Self::EventPresent { target } => write!(f, "has {target}"),
            Self::EventAbsent { target } => write!(f, "lacks {target}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Included,
    Excluded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub id: CohortId,
    /// Sorted dataset row numbers.
    pub members: Vec<u32>,
    pub parent: Option<CohortId>,
    pub edge: Option<EdgeId>,
    pub operator: Option<FilterOperator>,
    pub polarity: Polarity,
    pub visible: bool,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn is_root(&self) -> bool {
        self.parent.is_none()
    }

    pub fn patient_ids<'a>(&'a self, ds: &'a Dataset) -> impl Iterator<Item = &'a str> + 'a {
        self.members.iter().map(|&r| ds.patient(r).id.as_str())
    }
}

/// One filter application: the parent and its included/excluded children.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterEdge {
    pub id: EdgeId,
    pub parent: CohortId,
    pub operator: FilterOperator,
    pub included: CohortId,
    pub excluded: CohortId,
}

/// Constraint bookkeeping for one cohort.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstrainedDims {
    /// Filter targets on the root-to-cohort path.
    pub explicit: BTreeSet<DimIndex>,
    /// `explicit` plus every hierarchy descendant of each explicit code.
    pub with_descendants: BTreeSet<DimIndex>,
}

impl ConstrainedDims {
    pub fn union(&self, other: &Self) -> Self {
        Self {
            explicit: self.explicit.union(&other.explicit).copied().collect(),
            with_descendants: self
                .with_descendants
                .union(&other.with_descendants)
                .copied()
                .collect(),
        }
    }

    pub fn explicit_ids(&self, h: &CodeHierarchy) -> BTreeSet<DimensionId> {
        self.explicit.iter().map(|&i| h.id(i).clone()).collect()
    }

    pub fn with_descendant_ids(&self, h: &CodeHierarchy) -> BTreeSet<DimensionId> {
        self.with_descendants.iter().map(|&i| h.id(i).clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProvenanceTree {
    cohorts: BTreeMap<CohortId, Cohort>,
    edges: BTreeMap<EdgeId, FilterEdge>,
    root: CohortId,
    baseline: CohortId,
    focus: CohortId,
    next_cohort: u64,
    next_edge: u64,
}

impl ProvenanceTree {
    /// A tree holding only the root cohort (every patient in `ds`), which is
    /// both baseline and focus.
    pub fn new(ds: &Dataset) -> Self {
        let root = CohortId(0);
        let cohort = Cohort {
            id: root,
            members: (0..ds.len() as u32).collect(),
            parent: None,
            edge: None,
            operator: None,
            polarity: Polarity::Included,
            visible: true,
        };
        Self {
            cohorts: BTreeMap::from([(root, cohort)]),
            edges: BTreeMap::new(),
            root,
            baseline: root,
            focus: root,
            next_cohort: 1,
            next_edge: 0,
        }
    }

    pub fn root(&self) -> CohortId {
        self.root
    }

    pub fn baseline(&self) -> CohortId {
        self.baseline
    }

    pub fn focus(&self) -> CohortId {
        self.focus
    }

    pub fn cohort(&self, id: CohortId) -> Result<&Cohort, CohortError> {
        self.cohorts.get(&id).ok_or(CohortError::UnknownCohort(id))
    }

    pub fn cohorts(&self) -> impl Iterator<Item = &Cohort> {
        self.cohorts.values()
    }

    pub fn edge(&self, id: EdgeId) -> Result<&FilterEdge, CohortError> {
        self.edges.get(&id).ok_or(CohortError::UnknownEdge(id))
    }

    pub fn edges(&self) -> impl Iterator<Item = &FilterEdge> {
        self.edges.values()
    }

    pub fn len(&self) -> usize {
        self.cohorts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cohorts.is_empty()
    }

    /// Splits `parent` by `op`. Returns `(included, excluded)`; the focus
    /// moves to the included cohort.
    pub fn apply_filter(
        &mut self,
        parent: CohortId,
        op: FilterOperator,
        ds: &Dataset,
    ) -> Result<(CohortId, CohortId), CohortError> {
        let parent_cohort = self.cohort(parent)?;
        if !parent_cohort.visible {
            return Err(CohortError::HiddenCohort(parent));
        }
        op.validate(ds.hierarchy())?;
        let matcher = op.matcher(ds);
        let (included, excluded): (Vec<u32>, Vec<u32>) =
            parent_cohort.members.iter().partition(|&&p| matcher(p));
        drop(matcher);

        let edge = EdgeId(self.next_edge);
        let inc = CohortId(self.next_cohort);
        let exc = CohortId(self.next_cohort + 1);
        self.next_edge += 1;
        self.next_cohort += 2;
        for (id, members, polarity) in [
            (inc, included, Polarity::Included),
            (exc, excluded, Polarity::Excluded),
        ] {
            self.cohorts.insert(
                id,
                Cohort {
                    id,
                    members,
                    parent: Some(parent),
                    edge: Some(edge),
                    operator: Some(op.clone()),
                    polarity,
                    visible: polarity == Polarity::Included,
                },
            );
        }
        self.edges.insert(
            edge,
            FilterEdge {
                id: edge,
                parent,
                operator: op,
                included: inc,
                excluded: exc,
            },
        );
        self.focus = inc;
        Ok((inc, exc))
    }

    pub fn set_baseline(&mut self, id: CohortId) -> Result<(), CohortError> {
        self.cohort(id)?;
        self.baseline = id;
        Ok(())
    }

    pub fn set_focus(&mut self, id: CohortId) -> Result<(), CohortError> {
        self.cohort(id)?;
        self.focus = id;
        Ok(())
    }

    pub fn set_excluded_visible(&mut self, edge: EdgeId, visible: bool) -> Result<(), CohortError> {
        let excluded = self.edge(edge)?.excluded;
        self.cohorts
            .get_mut(&excluded)
            .expect("edge cohorts exist")
            .visible = visible;
        Ok(())
    }

    /// Edge that produced `cohort`; errors for the root.
    pub fn edge_of(&self, cohort: CohortId) -> Result<EdgeId, CohortError> {
        self.cohort(cohort)?.edge.ok_or(CohortError::RootHasNoEdge(cohort))
    }

    /// Cohort ids from the root down to `id`, inclusive.
    pub fn path(&self, id: CohortId) -> Result<Vec<CohortId>, CohortError> {
        let mut path = vec![id];
        let mut cur = self.cohort(id)?;
        while let Some(p) = cur.parent {
            path.push(p);
            cur = self.cohort(p)?;
        }
        path.reverse();
        Ok(path)
    }

    pub fn constrained_dimensions(
        &self,
        id: CohortId,
        h: &CodeHierarchy,
    ) -> Result<ConstrainedDims, CohortError> {
        let mut out = ConstrainedDims::default();
        for cid in self.path(id)? {
            if let Some(op) = &self.cohort(cid)?.operator {
                if let Some(idx) = h.index_of(&op.target()) {
                    out.explicit.insert(idx);
                }
            }
        }
        for &idx in &out.explicit {
            out.with_descendants.insert(idx);
            out.with_descendants.extend(h.descendants(idx));
        }
        Ok(out)
    }
}
