//! Per-cohort glyph data for the provenance tree view.

use std::collections::BTreeMap;

use serde::Serialize;

use super::profile::{avg_hellinger, drift_values_from_counts, CohortCounts};
use super::MetricsError;
use crate::cohort::{CohortId, EdgeId, FilterOperator, Polarity, ProvenanceTree};
use crate::dataset::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortSummary {
    pub id: CohortId,
    pub parent: Option<CohortId>,
    pub edge: Option<EdgeId>,
    pub polarity: Polarity,
    pub visible: bool,
    pub size: usize,
    /// Average drift against the current baseline; absent for an empty cohort.
    pub h_avg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeSummary {
    pub id: EdgeId,
    pub parent: CohortId,
    pub operator: FilterOperator,
    /// Human-readable form of the operator.
    pub description: String,
    pub included: CohortId,
    pub excluded: CohortId,
    /// `h_avg(included) - h_avg(parent)`.
    pub delta_h_avg_included: Option<f64>,
    /// `h_avg(excluded) - h_avg(parent)`.
    pub delta_h_avg_excluded: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeSummary {
    pub root: CohortId,
    pub baseline: CohortId,
    pub focus: CohortId,
    pub cohorts: Vec<CohortSummary>,
    pub edges: Vec<EdgeSummary>,
}

/// Sizes and average drift of every cohort against the tree's baseline.
pub fn tree_summary(tree: &ProvenanceTree, ds: &Dataset) -> Result<TreeSummary, MetricsError> {
    let h = ds.hierarchy();
    let baseline = tree.cohort(tree.baseline())?;
    let base_counts = CohortCounts::tally(ds, &baseline.members);
    let base_constraints = tree.constrained_dimensions(baseline.id, h)?;

    let mut h_avg: BTreeMap<CohortId, Option<f64>> = BTreeMap::new();
    for c in tree.cohorts() {
        let value = if c.is_empty() || baseline.is_empty() {
            None
        } else {
            let counts = CohortCounts::tally(ds, &c.members);
            let values = drift_values_from_counts(ds, &baseline.members, &c.members, &base_counts, &counts)?;
            let constrained = base_constraints.union(&tree.constrained_dimensions(c.id, h)?);
            let mut excluded = vec![false; h.len()];
            for d in &constrained.with_descendants {
                excluded[d.get()] = true;
            }
            Some(avg_hellinger(&values, &excluded))
        };
        h_avg.insert(c.id, value);
    }
    let delta = |child: CohortId, parent: CohortId| match (h_avg[&child], h_avg[&parent]) {
        (Some(a), Some(b)) => Some(a - b),
        _ => None,
    };
    Ok(TreeSummary {
        root: tree.root(),
        baseline: tree.baseline(),
        focus: tree.focus(),
        cohorts: tree
            .cohorts()
            .map(|c| CohortSummary {
                id: c.id,
                parent: c.parent,
                edge: c.edge,
                polarity: c.polarity,
                visible: c.visible,
                size: c.len(),
                h_avg: h_avg[&c.id],
            })
            .collect(),
        edges: tree
            .edges()
            .map(|e| EdgeSummary {
                id: e.id,
                parent: e.parent,
                operator: e.operator.clone(),
                description: e.operator.to_string(),
                included: e.included,
                excluded: e.excluded,
                delta_h_avg_included: delta(e.included, e.parent),
                delta_h_avg_excluded: delta(e.excluded, e.parent),
            })
            .collect(),
    })
}
