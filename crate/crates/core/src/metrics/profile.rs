//! Drift profiles: per-dimension Hellinger distance between a baseline and a
//! focus cohort, with gradients, saliency and constraint bookkeeping.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::distribution::{paired_distributions, DEFAULT_NUMERIC_BINS};
use super::hellinger::{hellinger, hellinger_binary};
use super::MetricsError;
use crate::cohort::{CohortId, ConstrainedDims, ProvenanceTree};
use crate::dataset::Dataset;
use crate::hierarchy::{CodeHierarchy, DimIndex, DimensionId, HierarchyError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationMethod {
    #[default]
    #[serde(alias = "breadth-first")]
    Breadth,
    #[serde(alias = "depth-first")]
    Depth,
}

pub const DEFAULT_SALIENCY_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationSettings {
    pub t_s: f64,
    #[serde(default)]
    pub method: AggregationMethod,
    #[serde(default)]
    pub manual_salient: BTreeSet<DimensionId>,
}

impl Default for AggregationSettings {
    fn default() -> Self {
        Self {
            t_s: DEFAULT_SALIENCY_THRESHOLD,
            method: AggregationMethod::Breadth,
            manual_salient: BTreeSet::new(),
        }
    }
}

impl AggregationSettings {
    pub fn new(t_s: f64, method: AggregationMethod) -> Result<Self, MetricsError> {
        check_threshold(t_s)?;
        Ok(Self {
            t_s,
            method,
            manual_salient: BTreeSet::new(),
        })
    }

    pub fn validate(&self, h: &CodeHierarchy) -> Result<(), MetricsError> {
        check_threshold(self.t_s)?;
        for d in &self.manual_salient {
            h.require(d)?;
        }
        Ok(())
    }

    /// Marks `dim` salient regardless of the threshold.
    pub fn promote(&mut self, dim: DimensionId, h: &CodeHierarchy) -> Result<(), MetricsError> {
        h.require(&dim)?;
        self.manual_salient.insert(dim);
        Ok(())
    }
}

fn check_threshold(t_s: f64) -> Result<(), MetricsError> {
    if (0.0..=1.0).contains(&t_s) {
        Ok(())
    } else {
        Err(MetricsError::InvalidThreshold(t_s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintMark {
    #[default]
    None,
    /// Named by a filter on the path to baseline or focus.
    Explicit,
    /// Hierarchy descendant of an explicit constraint.
    Descendant,
}

impl ConstraintMark {
    pub fn is_constrained(self) -> bool {
        self != Self::None
    }
}

/// Presence counts of every dimension within one cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortCounts {
    pub size: u32,
    /// Indexed by [`DimIndex`]; attribute dimensions count members with a value.
    pub present: Vec<u32>,
}

impl CohortCounts {
    pub fn tally(ds: &Dataset, members: &[u32]) -> Self {
        let h = ds.hierarchy();
        let mut present = vec![0u32; h.len()];
        for &p in members {
            for &d in ds.closure(p) {
                present[d.get()] += 1;
            }
        }
        if let Some(root) = h.attribute_root() {
            present[root.get()] = members.len() as u32;
            for spec in h.attributes() {
                let idx = h.index_of(&DimensionId::attribute(&spec.name)).expect("attribute dim");
                present[idx.get()] = members
                    .iter()
                    .filter(|&&p| ds.attribute(p, &spec.name).is_some())
                    .count() as u32;
            }
        }
        Self {
            size: members.len() as u32,
            present,
        }
    }
}

/// Per-dimension drift between two non-empty cohorts, indexed by
/// [`DimIndex`].
pub fn drift_values(
    ds: &Dataset,
    baseline: &[u32],
    focus: &[u32],
) -> Result<Vec<f64>, MetricsError> {
    if baseline.is_empty() || focus.is_empty() {
        return Err(MetricsError::EmptyCohort);
    }
    let a = CohortCounts::tally(ds, baseline);
    let b = CohortCounts::tally(ds, focus);
    drift_values_from_counts(ds, baseline, focus, &a, &b)
}

/// As [`drift_values`] with presence counts supplied by the caller (the
/// service caches them per cohort).
pub fn drift_values_from_counts(
    ds: &Dataset,
    baseline: &[u32],
    focus: &[u32],
    a: &CohortCounts,
    b: &CohortCounts,
) -> Result<Vec<f64>, MetricsError> {
    if a.size == 0 || b.size == 0 {
        return Err(MetricsError::EmptyCohort);
    }
    let h = ds.hierarchy();
    let (na, nb) = (a.size as f64, b.size as f64);
    let mut values: Vec<f64> = (0..h.code_node_count())
        .map(|i| hellinger_binary(a.present[i] as f64 / na, b.present[i] as f64 / nb))
        .collect();
    for idx in (h.code_node_count()..h.len()).map(|i| DimIndex(i as u32)) {
        if Some(idx) == h.attribute_root() {
            values.push(0.0);
            continue;
        }
        let (p, q) = paired_distributions(ds, baseline, focus, idx, DEFAULT_NUMERIC_BINS)?;
        values.push(hellinger(&p, &q)?);
    }
    Ok(values)
}

/// Mean drift over the dimensions not marked in `excluded`.
///
/// When every dimension is excluded the average is defined as 0.
pub fn avg_hellinger(values: &[f64], excluded: &[bool]) -> f64 {
    let (sum, m) = values
        .iter()
        .zip(excluded)
        .filter(|(_, &x)| !x)
        .fold((0.0, 0usize), |(s, m), (v, _)| (s + v, m + 1));
    if m == 0 {
        log::warn!("every dimension is constrained; average drift defined as 0");
        0.0
    } else {
        sum / m as f64
    }
}

/// Gradient-based saliency.
///
/// A dimension is salient when its drift rose by at least `t_s` over its
/// parent, or when one of its children's drift fell by at least `t_s` below
/// it. Roots only use the child clause, leaves only the parent clause.
pub fn salient_mask(h: &CodeHierarchy, values: &[f64], t_s: f64) -> Vec<bool> {
    let mut salient = vec![false; h.len()];
    for child in h.indices() {
        if let Some(parent) = h.parent(child) {
            let delta = values[child.get()] - values[parent.get()];
            if delta >= t_s {
                salient[child.get()] = true;
            }
            if delta <= -t_s {
                salient[parent.get()] = true;
            }
        }
    }
    salient
}

/// Set form of [`salient_mask`] over a finished profile (manual promotions
/// not included).
pub fn salient_set(h: &CodeHierarchy, profile: &DriftProfile, t_s: f64) -> BTreeSet<DimensionId> {
    salient_mask(h, &profile.values, t_s)
        .iter()
        .enumerate()
        .filter(|(_, &s)| s)
        .map(|(i, _)| h.id(DimIndex(i as u32)).clone())
        .collect()
}

/// Everything the comparison views need about one baseline/focus pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftProfile {
    pub baseline: CohortId,
    pub focus: CohortId,
    pub t_s: f64,
    pub h_avg: f64,
    pub color_max: f64,
    values: Vec<f64>,
    constraint: Vec<ConstraintMark>,
    salient: Vec<bool>,
}

impl DriftProfile {
    /// Assembles a profile from precomputed drift values.
    pub fn from_values(
        h: &CodeHierarchy,
        baseline: CohortId,
        focus: CohortId,
        values: Vec<f64>,
        constrained: &ConstrainedDims,
        settings: &AggregationSettings,
    ) -> Result<Self, MetricsError> {
        settings.validate(h)?;
        assert_eq!(values.len(), h.len(), "drift values must cover the hierarchy");
        let mut constraint = vec![ConstraintMark::None; h.len()];
        for &d in &constrained.with_descendants {
            constraint[d.get()] = ConstraintMark::Descendant;
        }
        for &d in &constrained.explicit {
            constraint[d.get()] = ConstraintMark::Explicit;
        }
        let excluded: Vec<bool> = constraint.iter().map(|c| c.is_constrained()).collect();
        let h_avg = avg_hellinger(&values, &excluded);
        let color_max = values
            .iter()
            .zip(&excluded)
            .filter(|(_, &x)| !x)
            .map(|(v, _)| *v)
            .fold(0.0, f64::max);
        let mut profile = Self {
            baseline,
            focus,
            t_s: settings.t_s,
            h_avg,
            color_max,
            values,
            constraint,
            salient: Vec::new(),
        };
        profile.apply_settings(h, settings)?;
        Ok(profile)
    }

    /// Recomputes the salient set for new settings; drift values are reused.
    pub fn apply_settings(
        &mut self,
        h: &CodeHierarchy,
        settings: &AggregationSettings,
    ) -> Result<(), MetricsError> {
        settings.validate(h)?;
        self.t_s = settings.t_s;
        self.salient = salient_mask(h, &self.values, settings.t_s);
        for d in &settings.manual_salient {
            self.salient[h.require(d)?.get()] = true;
        }
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, d: DimIndex) -> f64 {
        self.values[d.get()]
    }

    pub fn constraint(&self, d: DimIndex) -> ConstraintMark {
        self.constraint[d.get()]
    }

    pub fn is_constrained(&self, d: DimIndex) -> bool {
        self.constraint[d.get()].is_constrained()
    }

    pub fn is_salient(&self, d: DimIndex) -> bool {
        self.salient[d.get()]
    }

    pub fn salient_mask(&self) -> &[bool] {
        &self.salient
    }

    pub fn salient_dims(&self) -> impl Iterator<Item = DimIndex> + '_ {
        self.salient
            .iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .map(|(i, _)| DimIndex(i as u32))
    }

    /// Drift with respect to `color_max`, clamped to `[0, 1]`. A zero
    /// `color_max` maps everything to 0.
    pub fn color_fraction(&self, value: f64) -> f64 {
        color_fraction(value, self.color_max)
    }

    /// `H(child) - H(parent)` for every non-root dimension.
    pub fn gradients<'a>(
        &'a self,
        h: &'a CodeHierarchy,
    ) -> impl Iterator<Item = (DimIndex, DimIndex, f64)> + 'a {
        h.indices().filter_map(move |c| {
            h.parent(c)
                .map(|p| (c, p, self.values[c.get()] - self.values[p.get()]))
        })
    }

    pub fn to_document(&self, h: &CodeHierarchy) -> ProfileDocument {
        let ids = |pred: &dyn Fn(ConstraintMark) -> bool| -> Vec<DimensionId> {
            let mut v: Vec<DimensionId> = h
                .indices()
                .filter(|&d| pred(self.constraint(d)))
                .map(|d| h.id(d).clone())
                .collect();
            v.sort();
            v
        };
        let mut salient: Vec<DimensionId> = self.salient_dims().map(|d| h.id(d).clone()).collect();
        salient.sort();
        let mut gradients: Vec<GradientEntry> = self
            .gradients(h)
            .map(|(c, p, delta)| GradientEntry {
                child: h.id(c).clone(),
                parent: h.id(p).clone(),
                delta,
            })
            .collect();
        gradients.sort_by(|a, b| a.child.cmp(&b.child));
        ProfileDocument {
            baseline: self.baseline,
            focus: self.focus,
            t_s: self.t_s,
            h_avg: Some(self.h_avg),
            color_max: self.color_max,
            per_dim: h
                .indices()
                .map(|d| (h.id(d).clone(), self.value(d)))
                .collect(),
            gradients,
            salient,
            constrained_explicit: ids(&|c| c == ConstraintMark::Explicit),
            constrained_descendants: ids(&|c| c == ConstraintMark::Descendant),
        }
    }
}

pub fn color_fraction(value: f64, color_max: f64) -> f64 {
    if color_max <= 0.0 {
        0.0
    } else {
        (value / color_max).clamp(0.0, 1.0)
    }
}

/// `H(child) - H(parent)`; `parent` must be the hierarchy parent of `child`.
pub fn drift_gradient(
    h: &CodeHierarchy,
    profile: &DriftProfile,
    child: &DimensionId,
    parent: &DimensionId,
) -> Result<f64, MetricsError> {
    let c = h.require(child)?;
    let p = h.require(parent)?;
    if h.parent(c) != Some(p) {
        return Err(MetricsError::NotAdjacent {
            child: child.clone(),
            parent: parent.clone(),
        });
    }
    Ok(profile.value(c) - profile.value(p))
}

/// Computes the full profile for `baseline` vs `focus`.
///
/// Constraints are the union of the filter targets on both cohorts' root
/// paths, with hierarchy descendants.
pub fn drift_profile(
    tree: &ProvenanceTree,
    baseline: CohortId,
    focus: CohortId,
    ds: &Dataset,
    settings: &AggregationSettings,
) -> Result<DriftProfile, MetricsError> {
    let h = ds.hierarchy();
    let a = tree.cohort(baseline)?;
    let b = tree.cohort(focus)?;
    let values = drift_values(ds, &a.members, &b.members)?;
    let constrained = tree
        .constrained_dimensions(baseline, h)?
        .union(&tree.constrained_dimensions(focus, h)?);
    DriftProfile::from_values(h, baseline, focus, values, &constrained, settings)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientEntry {
    pub child: DimensionId,
    pub parent: DimensionId,
    pub delta: f64,
}

/// JSON shape of a drift profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileDocument {
    pub baseline: CohortId,
    pub focus: CohortId,
    pub t_s: f64,
    /// Absent when there is nothing to compare (a report over the root only).
    pub h_avg: Option<f64>,
    pub color_max: f64,
    pub per_dim: BTreeMap<DimensionId, f64>,
    pub gradients: Vec<GradientEntry>,
    pub salient: Vec<DimensionId>,
    pub constrained_explicit: Vec<DimensionId>,
    pub constrained_descendants: Vec<DimensionId>,
}

impl From<HierarchyError> for MetricsError {
    fn from(e: HierarchyError) -> Self {
        match e {
            HierarchyError::UnknownDimension(d) => MetricsError::UnknownDimension(d.to_string()),
            other => MetricsError::UnknownDimension(other.to_string()),
        }
    }
}
