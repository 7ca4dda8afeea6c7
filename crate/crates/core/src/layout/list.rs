//! Flat list of dimensions ordered by drift.

use serde::Serialize;

use crate::hierarchy::{CodeHierarchy, DimIndex, DimensionId};
use crate::metrics::DriftProfile;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ListRow {
    pub dim: DimensionId,
    pub label: String,
    pub value: f64,
    pub constrained: bool,
    pub salient: bool,
}

/// Every dimension, drift descending, ties by id.
pub fn list_rows(profile: &DriftProfile, h: &CodeHierarchy) -> Vec<ListRow> {
    let mut order: Vec<DimIndex> = h.indices().collect();
    order.sort_by(|&a, &b| {
        profile
            .value(b)
            .total_cmp(&profile.value(a))
            .then_with(|| h.id(a).cmp(h.id(b)))
    });
    order
        .into_iter()
        .map(|d| ListRow {
            dim: h.id(d).clone(),
            label: h.label(d).to_string(),
            value: profile.value(d),
            constrained: profile.is_constrained(d),
            salient: profile.is_salient(d),
        })
        .collect()
}
