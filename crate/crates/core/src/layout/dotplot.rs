//! Hierarchical dot plot: salient dimensions as points over a heat map of
//! the rest.

use serde::Serialize;

use crate::hierarchy::{CodeHierarchy, DimIndex, DimensionId};
use crate::metrics::DriftProfile;

pub const DEFAULT_DEPTH_BINS: usize = 10;
pub const DEFAULT_DRIFT_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct HeatGrid {
    pub depth_bins: usize,
    pub drift_bins: usize,
}

impl Default for HeatGrid {
    fn default() -> Self {
        Self {
            depth_bins: DEFAULT_DEPTH_BINS,
            drift_bins: DEFAULT_DRIFT_BINS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientSign {
    Positive,
    Negative,
    Zero,
}

impl GradientSign {
    fn of(x: f64) -> Self {
        if x > 0.0 {
            Self::Positive
        } else if x < 0.0 {
            Self::Negative
        } else {
            Self::Zero
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DotPoint {
    pub dim: DimensionId,
    pub label: String,
    /// Depth in the hierarchy.
    pub x: u32,
    /// Drift.
    pub y: f64,
    /// `|H(dim) - H(parent)|`; 0 for roots.
    pub size: f64,
    /// Signed gradient for diverging colour.
    pub gradient: f64,
    pub sign: GradientSign,
    pub constrained: bool,
    /// Salient ancestors, nearest first.
    pub ancestors: Vec<DimensionId>,
    /// Salient descendants, in hierarchy pre-order.
    pub descendants: Vec<DimensionId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatCell {
    pub depth_bin: usize,
    pub drift_bin: usize,
    /// Half-open depth range `[lo, hi)` covered by the bin.
    pub depth_range: (u32, u32),
    /// Drift range of the bin; the last bin includes 1.
    pub drift_range: (f64, f64),
    pub count: usize,
    pub dims: Vec<DimensionId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DotPlotLayout {
    pub points: Vec<DotPoint>,
    pub heat_cells: Vec<HeatCell>,
    pub grid: HeatGrid,
    pub max_depth: u32,
    pub color_max: f64,
}

/// Lays out the dot plot using the profile's salient set.
pub fn dot_plot(h: &CodeHierarchy, profile: &DriftProfile, grid: HeatGrid) -> DotPlotLayout {
    let grid = HeatGrid {
        depth_bins: grid.depth_bins.max(1),
        drift_bins: grid.drift_bins.max(1),
    };
    let max_depth = h.max_depth();
    let depth_span = max_depth as usize + 1;
    let depth_bin = |d: u32| (d as usize * grid.depth_bins / depth_span).min(grid.depth_bins - 1);
    let drift_bin = |v: f64| ((v * grid.drift_bins as f64).floor().max(0.0) as usize).min(grid.drift_bins - 1);

    let mut points = Vec::new();
    let mut cells: Vec<Vec<DimIndex>> = vec![Vec::new(); grid.depth_bins * grid.drift_bins];
    for d in h.indices() {
        if !profile.is_salient(d) {
            cells[depth_bin(h.depth(d)) * grid.drift_bins + drift_bin(profile.value(d))].push(d);
            continue;
        }
        let gradient = h.parent(d).map_or(0.0, |p| profile.value(d) - profile.value(p));
        points.push(DotPoint {
            dim: h.id(d).clone(),
            label: h.label(d).to_string(),
            x: h.depth(d),
            y: profile.value(d),
            size: gradient.abs(),
            gradient,
            sign: GradientSign::of(gradient),
            constrained: profile.is_constrained(d),
            ancestors: h
                .ancestor_indices(d)
                .filter(|&a| profile.is_salient(a))
                .map(|a| h.id(a).clone())
                .collect(),
            descendants: h
                .descendants(d)
                .into_iter()
                .filter(|&c| profile.is_salient(c))
                .map(|c| h.id(c).clone())
                .collect(),
        });
    }
    points.sort_by(|a, b| a.dim.cmp(&b.dim));

    let depth_lo = |bin: usize| ((bin * depth_span).div_ceil(grid.depth_bins)) as u32;
    let heat_cells = cells
        .into_iter()
        .enumerate()
        .filter(|(_, dims)| !dims.is_empty())
        .map(|(i, dims)| {
            let (db, hb) = (i / grid.drift_bins, i % grid.drift_bins);
            let mut dims: Vec<DimensionId> = dims.into_iter().map(|d| h.id(d).clone()).collect();
            dims.sort();
            HeatCell {
                depth_bin: db,
                drift_bin: hb,
                depth_range: (depth_lo(db), depth_lo(db + 1)),
                drift_range: (hb as f64 / grid.drift_bins as f64, (hb + 1) as f64 / grid.drift_bins as f64),
                count: dims.len(),
                dims,
            }
        })
        .collect();

    DotPlotLayout {
        points,
        heat_cells,
        grid,
        max_depth,
        color_max: profile.color_max,
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::layout::icicle::tests::{profile_with, random_case, tree};

    #[test]
    fn root_point_and_direct_encoding() {
        let h = tree(&[
            ("R", None),
            ("A", Some("R")),
            ("B", Some("A")),
            ("C", Some("B")),
        ]);
        let p = profile_with(&h, &[("R", 0.1), ("B", 0.2), ("C", 0.4)], &["R", "C"]);
        let l = dot_plot(&h, &p, HeatGrid::default());
        let r = l.points.iter().find(|x| x.dim.code() == "R").unwrap();
        assert_eq!((r.size, r.sign), (0.0, GradientSign::Zero));
        let c = l.points.iter().find(|x| x.dim.code() == "C").unwrap();
        assert_eq!((c.x, c.y), (3, 0.4));
        assert!((c.size - 0.2).abs() < 1e-15);
        assert_eq!(c.sign, GradientSign::Positive);
        assert_eq!(c.ancestors, vec![DimensionId::new("T", "R")]);
        assert_eq!(r.descendants, vec![DimensionId::new("T", "C")]);
    }

    #[test]
    fn heat_cells_conserve_non_salient_dims() {
        let (h, mut p) = random_case(3, 101);
        let mut settings = crate::metrics::AggregationSettings::new(1.0, Default::default()).unwrap();
        settings.promote(h.id(DimIndex(0)).clone(), &h).unwrap();
        p.apply_settings(&h, &settings).unwrap();
        let l = dot_plot(&h, &p, HeatGrid { depth_bins: 10, drift_bins: 10 });
        assert_eq!(l.points.len(), 1);
        assert_eq!(l.heat_cells.iter().map(|c| c.count).sum::<usize>(), 100);
        let mut seen = BTreeSet::new();
        for c in &l.heat_cells {
            for d in &c.dims {
                assert!(seen.insert(d.clone()));
            }
            assert!(c.depth_bin < 10 && c.drift_bin < 10);
        }
    }

    #[test]
    fn points_are_exactly_the_salient_dims() {
        let (h, p) = random_case(8, 300);
        let l = dot_plot(&h, &p, HeatGrid::default());
        let salient: BTreeSet<_> = p.salient_dims().map(|d| h.id(d).clone()).collect();
        let points: BTreeSet<_> = l.points.iter().map(|x| x.dim.clone()).collect();
        assert_eq!(salient, points);
        let heat: usize = l.heat_cells.iter().map(|c| c.count).sum();
        assert_eq!(heat + points.len(), h.len());
    }
}
