//! Per-dimension value distributions of a cohort.

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::dataset::{AttributeValue, Dataset};
use crate::hierarchy::{AttributeKind, DimIndex};

/// Default number of equal-width bins for numeric attributes.
pub const DEFAULT_NUMERIC_BINS: usize = 10;

/// Support label for patients that lack an attribute value.
pub const MISSING_LABEL: &str = "(missing)";

pub const PRESENT_LABEL: &str = "present";
pub const ABSENT_LABEL: &str = "absent";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistributionKind {
    Binary,
    Categorical,
    NumericBinned,
}

/// A discrete distribution over an ordered support, with the raw counts
/// kept alongside the proportions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub kind: DistributionKind,
    pub support: Vec<String>,
    pub counts: Vec<u64>,
    pub probs: Vec<f64>,
    pub total: u64,
}

impl Distribution {
    fn from_counts(kind: DistributionKind, support: Vec<String>, counts: Vec<u64>) -> Self {
        let total: u64 = counts.iter().sum();
        let probs = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Self {
            kind,
            support,
            counts,
            probs,
            total,
        }
    }

    /// Binary presence distribution `(present, absent)`.
    pub fn binary(present: u64, total: u64) -> Self {
        Self::from_counts(
            DistributionKind::Binary,
            vec![PRESENT_LABEL.into(), ABSENT_LABEL.into()],
            vec![present, total - present],
        )
    }

    pub fn same_support(&self, other: &Self) -> bool {
        self.kind == other.kind && self.support == other.support
    }
}

/// Binning for numeric attributes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Binning {
    pub bins: usize,
    /// Fixed `[min, max]`; `None` uses the cohort's own range.
    pub range: Option<(f64, f64)>,
    /// Adds a trailing [`MISSING_LABEL`] entry. Forced on when a member has
    /// no value.
    pub include_missing: bool,
}

impl Default for Binning {
    fn default() -> Self {
        Self {
            bins: DEFAULT_NUMERIC_BINS,
            range: None,
            include_missing: false,
        }
    }
}

/// Equal-width bin index of `x` over `[min, max]`; the top edge is closed.
fn bin_of(x: f64, min: f64, max: f64, bins: usize) -> usize {
    if max <= min {
        return 0;
    }
    let width = (max - min) / bins as f64;
    (((x - min) / width).floor().max(0.0) as usize).min(bins - 1)
}

fn bin_labels(min: f64, max: f64, bins: usize) -> Vec<String> {
    if max <= min {
        return vec![format!("[{min}, {max}]")];
    }
    let width = (max - min) / bins as f64;
    (0..bins)
        .map(|i| {
            let lo = min + width * i as f64;
            let hi = if i + 1 == bins { max } else { min + width * (i + 1) as f64 };
            let close = if i + 1 == bins { ']' } else { ')' };
            format!("[{lo}, {hi}{close}")
        })
        .collect()
}

/// Distribution of dimension `dim` over `members`.
///
/// Event codes give a binary presence distribution using each patient's
/// ancestor closure. Categorical attributes give per-category proportions in
/// declaration order; numeric attributes are binned per `binning`.
pub fn dimension_distribution(
    ds: &Dataset,
    members: &[u32],
    dim: DimIndex,
    binning: &Binning,
) -> Result<Distribution, MetricsError> {
    let h = ds.hierarchy();
    if dim.get() >= h.len() {
        return Err(MetricsError::UnknownDimension(format!("index {}", dim.0)));
    }
    if members.is_empty() {
        return Err(MetricsError::EmptyCohort);
    }
    let total = members.len() as u64;
    if h.is_code(dim) {
        let present = members.iter().filter(|&&p| ds.has_code(p, dim)).count() as u64;
        return Ok(Distribution::binary(present, total));
    }
    if Some(dim) == h.attribute_root() {
        // every patient carries the attribute block
        return Ok(Distribution::binary(total, total));
    }
    let name = h.id(dim).code();
    let spec = h
        .attribute(name)
        .ok_or_else(|| MetricsError::UnknownDimension(h.id(dim).to_string()))?;
    let missing = members
        .iter()
        .filter(|&&p| ds.attribute(p, name).is_none())
        .count() as u64;
    let with_missing = binning.include_missing || missing > 0;

    let (kind, mut support, mut counts) = match &spec.kind {
        AttributeKind::Categorical { categories } => {
            let mut counts = vec![0u64; categories.len()];
            for &p in members {
                if let Some(AttributeValue::Category(c)) = ds.attribute(p, name) {
                    if let Some(k) = categories.iter().position(|x| x == c) {
                        counts[k] += 1;
                    }
                }
            }
            (DistributionKind::Categorical, categories.clone(), counts)
        }
        AttributeKind::Numeric { .. } => {
            let values: Vec<f64> = members
                .iter()
                .filter_map(|&p| ds.attribute(p, name).and_then(AttributeValue::as_number))
                .collect();
            let (min, max) = binning.range.unwrap_or_else(|| numeric_range(&values));
            let bins = if max > min { binning.bins.max(1) } else { 1 };
            let mut counts = vec![0u64; bins];
            for x in values {
                counts[bin_of(x, min, max, bins)] += 1;
            }
            (DistributionKind::NumericBinned, bin_labels(min, max, bins), counts)
        }
    };
    if with_missing {
        support.push(MISSING_LABEL.into());
        counts.push(missing);
    }
    Ok(Distribution::from_counts(kind, support, counts))
}

fn numeric_range(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold(None, |acc: Option<(f64, f64)>, &x| match acc {
            None => Some((x, x)),
            Some((lo, hi)) => Some((lo.min(x), hi.max(x))),
        })
        .unwrap_or((0.0, 0.0))
}

/// Distributions of `dim` for two cohorts over one shared support: numeric
/// bins span the combined min–max of both cohorts and a missing-value entry
/// appears on both sides if either side needs it.
pub fn paired_distributions(
    ds: &Dataset,
    a: &[u32],
    b: &[u32],
    dim: DimIndex,
    bins: usize,
) -> Result<(Distribution, Distribution), MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::EmptyCohort);
    }
    let h = ds.hierarchy();
    let mut binning = Binning {
        bins,
        ..Binning::default()
    };
    if !h.is_code(dim) && Some(dim) != h.attribute_root() && dim.get() < h.len() {
        let name = h.id(dim).code();
        let mut values = Vec::new();
        for &p in a.iter().chain(b) {
            match ds.attribute(p, name) {
                None => binning.include_missing = true,
                Some(v) => values.extend(v.as_number()),
            }
        }
        if h.attribute(name).is_some_and(|s| s.is_numeric()) {
            binning.range = Some(numeric_range(&values));
        }
    }
    Ok((
        dimension_distribution(ds, a, dim, &binning)?,
        dimension_distribution(ds, b, dim, &binning)?,
    ))
}

#[cfg(test)]
mod tests {
    use std::collections::{BTreeMap, BTreeSet};

    use super::*;
    use crate::dataset::fixtures::h1_population;
    use crate::dataset::Patient;
    use crate::hierarchy::fixtures::{h1, id};
    use crate::hierarchy::{AttributeSpec, DimensionId};

    fn age_dataset(ages: &[Option<f64>]) -> Dataset {
        let patients = ages
            .iter()
            .enumerate()
            .map(|(i, a)| Patient {
                id: format!("p{i}"),
                attributes: a
                    .map(|x| BTreeMap::from([("Age".to_string(), AttributeValue::Number(x))]))
                    .unwrap_or_default(),
                events: BTreeSet::new(),
            })
            .collect();
        let h = h1()
            .with_attributes(vec![AttributeSpec::numeric("Age", 0.0, 100.0)])
            .unwrap();
        Dataset::new(h, patients).unwrap()
    }

    #[test]
    fn binary_presence_counts() {
        let ds = h1_population();
        let all: Vec<u32> = (0..10).collect();
        let b1 = ds.hierarchy().index_of(&id("B1")).unwrap();
        let d = dimension_distribution(&ds, &all, b1, &Binning::default()).unwrap();
        assert_eq!(d.kind, DistributionKind::Binary);
        assert_eq!(d.probs, vec![0.5, 0.5]);
        let r = ds.hierarchy().index_of(&id("R")).unwrap();
        let d = dimension_distribution(&ds, &all, r, &Binning::default()).unwrap();
        assert_eq!(d.probs, vec![1.0, 0.0]);
    }

    #[test]
    fn two_bin_age_split() {
        let ds = age_dataset(&[Some(20.0), Some(20.0), Some(80.0), Some(80.0)]);
        let age = ds.hierarchy().index_of(&DimensionId::attribute("Age")).unwrap();
        let binning = Binning {
            bins: 2,
            range: Some((20.0, 80.0)),
            include_missing: false,
        };
        let d = dimension_distribution(&ds, &[0, 1, 2, 3], age, &binning).unwrap();
        // counting oracle: values below the 50 midpoint vs at or above it
        let low = [20.0, 20.0, 80.0, 80.0].iter().filter(|&&x| x < 50.0).count() as f64;
        assert_eq!(d.probs, vec![low / 4.0, 1.0 - low / 4.0]);
        assert_eq!(d.probs, vec![0.5, 0.5]);
        assert_eq!(d.support, vec!["[20, 50)", "[50, 80]"]);
    }

    #[test]
    fn paired_bins_share_edges() {
        let ds = age_dataset(&[Some(20.0), Some(30.0), Some(70.0), Some(80.0)]);
        let age = ds.hierarchy().index_of(&DimensionId::attribute("Age")).unwrap();
        let (a, b) = paired_distributions(&ds, &[0, 1], &[2, 3], age, 2).unwrap();
        assert!(a.same_support(&b));
        assert_eq!(a.probs, vec![1.0, 0.0]);
        assert_eq!(b.probs, vec![0.0, 1.0]);
    }

    #[test]
    fn missing_values_get_a_shared_bucket() {
        let ds = age_dataset(&[Some(20.0), None, Some(80.0), Some(40.0)]);
        let age = ds.hierarchy().index_of(&DimensionId::attribute("Age")).unwrap();
        let (a, b) = paired_distributions(&ds, &[0, 1], &[2, 3], age, 2).unwrap();
        assert!(a.same_support(&b));
        assert_eq!(a.support.last().unwrap(), MISSING_LABEL);
        assert_eq!(a.counts, vec![1, 0, 1]);
        assert_eq!(b.counts, vec![1, 1, 0]);
    }

    #[test]
    fn categorical_and_degenerate() {
        let ds = h1_population();
        let g = ds.hierarchy().index_of(&DimensionId::attribute("Gender")).unwrap();
        let d = dimension_distribution(&ds, &[0, 1], g, &Binning::default()).unwrap();
        assert_eq!(d.support, vec!["F", "M"]);
        assert_eq!(d.probs, vec![0.0, 1.0]);
        assert_eq!(
            dimension_distribution(&ds, &[], g, &Binning::default()),
            Err(MetricsError::EmptyCohort)
        );
        assert!(dimension_distribution(&ds, &[0], DimIndex(999), &Binning::default()).is_err());
    }

    #[test]
    fn constant_numeric_collapses_to_one_bin() {
        let ds = age_dataset(&[Some(40.0), Some(40.0)]);
        let age = ds.hierarchy().index_of(&DimensionId::attribute("Age")).unwrap();
        let (a, b) = paired_distributions(&ds, &[0], &[1], age, 10).unwrap();
        assert_eq!(a.probs, vec![1.0]);
        assert_eq!(a, b);
    }
}
