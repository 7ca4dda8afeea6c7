//! Session state: one provenance tree over one dataset, changed only by
//! logged mutations.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use driftscope_core::layout::{dot_plot, expand_group, list_rows, split_icicle_scoped, ExpandedGroup, HeatGrid};
use driftscope_core::metrics::distribution::DEFAULT_NUMERIC_BINS;
use driftscope_core::metrics::{
    drift_values_from_counts, overlap, paired_distributions, tree_summary, CohortCounts, Distribution,
    ProfileDocument, TreeSummary,
};
use driftscope_core::{
    aggregate, AggregationMethod, AggregationSettings, CohortId, Dataset, DimensionId, DotPlotLayout, DriftProfile,
    EdgeId, FilterOperator, ListRow, OverlapSummary, ProvenanceTree, SplitIcicleLayout,
};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

/// A state change. The log of these is the session's persistent record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum Mutation {
    ApplyFilter { parent: CohortId, operator: FilterOperator },
    SetBaseline { cohort: CohortId },
    SetFocus { cohort: CohortId },
    SetSettings { settings: AggregationSettings },
    PromoteSalient { dim: DimensionId },
    SetExcludedVisible { edge: EdgeId, visible: bool },
}

/// Outcome of a successful mutation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Applied {
    pub version: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub included: Option<CohortId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub excluded: Option<CohortId>,
}

/// Per-request view parameters. Unset fields fall back to the session's
/// baseline, focus and settings; none of them change session state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ViewParams {
    pub baseline: Option<CohortId>,
    pub focus: Option<CohortId>,
    pub t_s: Option<f64>,
    pub method: Option<AggregationMethod>,
    /// Restricts the icicle to one coding system.
    pub system: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ListDocument {
    pub baseline: CohortId,
    pub focus: CohortId,
    pub t_s: f64,
    pub color_max: f64,
    pub rows: Vec<ListRow>,
}

/// Both cohorts' distributions for one dimension, on a shared support.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimensionView {
    pub dim: DimensionId,
    pub label: String,
    pub depth: u32,
    pub baseline: CohortId,
    pub focus: CohortId,
    pub baseline_distribution: Distribution,
    pub focus_distribution: Distribution,
    pub drift: f64,
    pub constrained: bool,
    pub salient: bool,
}

type IcicleKey = (CohortId, CohortId, Option<String>);

#[derive(Default)]
struct Cache {
    counts: HashMap<CohortId, Arc<CohortCounts>>,
    profiles: HashMap<(CohortId, CohortId), Arc<DriftProfile>>,
    icicles: HashMap<IcicleKey, Arc<SplitIcicleLayout>>,
}

/// Cohort members never change once created, so cached counts, profiles
/// and unaggregated icicles stay valid for the life of the session.
pub struct Session {
    dataset: Arc<Dataset>,
    tree: ProvenanceTree,
    settings: AggregationSettings,
    log: Vec<Mutation>,
    cache: Mutex<Cache>,
}

impl Session {
    pub fn new(dataset: Arc<Dataset>) -> Self {
        let tree = ProvenanceTree::new(&dataset);
        Self {
            dataset,
            tree,
            settings: AggregationSettings::default(),
            log: Vec::new(),
            cache: Mutex::new(Cache::default()),
        }
    }

    /// Rebuilds a session by applying `log` to a fresh tree.
    pub fn replay(dataset: Arc<Dataset>, log: impl IntoIterator<Item = Mutation>) -> Result<Self, ServiceError> {
        let mut s = Self::new(dataset);
        for m in log {
            s.apply(m)?;
        }
        Ok(s)
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.dataset
    }

    pub fn tree(&self) -> &ProvenanceTree {
        &self.tree
    }

    pub fn settings(&self) -> &AggregationSettings {
        &self.settings
    }

    pub fn log(&self) -> &[Mutation] {
        &self.log
    }

    /// Number of mutations applied so far.
    pub fn version(&self) -> u64 {
        self.log.len() as u64
    }

    /// Applies `m`; on error the session is unchanged and nothing is logged.
    pub fn apply(&mut self, m: Mutation) -> Result<Applied, ServiceError> {
        let h = self.dataset.hierarchy();
        let mut out = Applied {
            version: 0,
            included: None,
            excluded: None,
        };
        match &m {
            Mutation::ApplyFilter { parent, operator } => {
                let (inc, exc) = self.tree.apply_filter(*parent, operator.clone(), &self.dataset)?;
                out.included = Some(inc);
                out.excluded = Some(exc);
            }
            Mutation::SetBaseline { cohort } => self.tree.set_baseline(*cohort)?,
            Mutation::SetFocus { cohort } => self.tree.set_focus(*cohort)?,
            Mutation::SetSettings { settings } => {
                settings.validate(h)?;
                self.settings = settings.clone();
            }
            Mutation::PromoteSalient { dim } => self.settings.promote(dim.clone(), h)?,
            Mutation::SetExcludedVisible { edge, visible } => self.tree.set_excluded_visible(*edge, *visible)?,
        }
        self.log.push(m);
        out.version = self.version();
        Ok(out)
    }

    /// Settings after applying the overrides in `view`.
    pub fn effective_settings(&self, view: &ViewParams) -> Result<AggregationSettings, ServiceError> {
        let mut s = self.settings.clone();
        if let Some(t) = view.t_s {
            s.t_s = t;
        }
        if let Some(m) = view.method {
            s.method = m;
        }
        s.validate(self.dataset.hierarchy())?;
        Ok(s)
    }

    fn pair(&self, view: &ViewParams) -> Result<(CohortId, CohortId), ServiceError> {
        let b = view.baseline.unwrap_or(self.tree.baseline());
        let f = view.focus.unwrap_or(self.tree.focus());
        self.tree.cohort(b)?;
        self.tree.cohort(f)?;
        Ok((b, f))
    }

    fn counts(&self, id: CohortId) -> Result<Arc<CohortCounts>, ServiceError> {
        if let Some(c) = self.cache.lock().expect("cache lock").counts.get(&id) {
            return Ok(c.clone());
        }
        let c = Arc::new(CohortCounts::tally(&self.dataset, &self.tree.cohort(id)?.members));
        self.cache.lock().expect("cache lock").counts.insert(id, c.clone());
        Ok(c)
    }

    fn base_profile(&self, b: CohortId, f: CohortId) -> Result<Arc<DriftProfile>, ServiceError> {
        if let Some(p) = self.cache.lock().expect("cache lock").profiles.get(&(b, f)) {
            return Ok(p.clone());
        }
        let h = self.dataset.hierarchy();
        let (cb, cf) = (self.counts(b)?, self.counts(f)?);
        let values = drift_values_from_counts(
            &self.dataset,
            &self.tree.cohort(b)?.members,
            &self.tree.cohort(f)?.members,
            &cb,
            &cf,
        )?;
        let constrained = self
            .tree
            .constrained_dimensions(b, h)?
            .union(&self.tree.constrained_dimensions(f, h)?);
        let p = Arc::new(DriftProfile::from_values(
            h,
            b,
            f,
            values,
            &constrained,
            &AggregationSettings::default(),
        )?);
        log::debug!("computed drift profile {b} vs {f}");
        self.cache.lock().expect("cache lock").profiles.insert((b, f), p.clone());
        Ok(p)
    }

    /// Drift profile for the view's cohort pair under its settings.
    pub fn profile(&self, view: &ViewParams) -> Result<DriftProfile, ServiceError> {
        let settings = self.effective_settings(view)?;
        let (b, f) = self.pair(view)?;
        let mut p = (*self.base_profile(b, f)?).clone();
        p.apply_settings(self.dataset.hierarchy(), &settings)?;
        Ok(p)
    }

    pub fn profile_document(&self, view: &ViewParams) -> Result<ProfileDocument, ServiceError> {
        Ok(self.profile(view)?.to_document(self.dataset.hierarchy()))
    }

    fn base_icicle(&self, view: &ViewParams, profile: &DriftProfile) -> Result<Arc<SplitIcicleLayout>, ServiceError> {
        let key = (profile.baseline, profile.focus, view.system.clone());
        if let Some(l) = self.cache.lock().expect("cache lock").icicles.get(&key) {
            return Ok(l.clone());
        }
        let l = Arc::new(split_icicle_scoped(
            self.dataset.hierarchy(),
            profile,
            view.system.as_deref(),
        )?);
        self.cache.lock().expect("cache lock").icicles.insert(key, l.clone());
        Ok(l)
    }

    /// Aggregated split icicle.
    pub fn icicle(&self, view: &ViewParams) -> Result<SplitIcicleLayout, ServiceError> {
        let settings = self.effective_settings(view)?;
        let profile = self.profile(view)?;
        let base = self.base_icicle(view, &profile)?;
        Ok(aggregate(&base, self.dataset.hierarchy(), &profile, settings.method))
    }

    /// Standard icicle of one group of the aggregated icicle.
    pub fn expand(&self, view: &ViewParams, group: usize) -> Result<ExpandedGroup, ServiceError> {
        let profile = self.profile(view)?;
        let layout = self.icicle(view)?;
        Ok(expand_group(&layout, self.dataset.hierarchy(), &profile, group)?)
    }

    pub fn dotplot(&self, view: &ViewParams, grid: HeatGrid) -> Result<DotPlotLayout, ServiceError> {
        let profile = self.profile(view)?;
        Ok(dot_plot(self.dataset.hierarchy(), &profile, grid))
    }

    pub fn list(&self, view: &ViewParams) -> Result<ListDocument, ServiceError> {
        let profile = self.profile(view)?;
        Ok(ListDocument {
            baseline: profile.baseline,
            focus: profile.focus,
            t_s: profile.t_s,
            color_max: profile.color_max,
            rows: list_rows(&profile, self.dataset.hierarchy()),
        })
    }

    pub fn tree_summary(&self) -> Result<TreeSummary, ServiceError> {
        Ok(tree_summary(&self.tree, &self.dataset)?)
    }

    pub fn overlap(&self, a: CohortId, b: CohortId) -> Result<OverlapSummary, ServiceError> {
        Ok(overlap(&self.tree.cohort(a)?.members, &self.tree.cohort(b)?.members))
    }

    pub fn dimension(&self, dim: &DimensionId, view: &ViewParams) -> Result<DimensionView, ServiceError> {
        let h = self.dataset.hierarchy();
        let idx = h.require(dim)?;
        let profile = self.profile(view)?;
        let (b, f) = (profile.baseline, profile.focus);
        let (bd, fd) = paired_distributions(
            &self.dataset,
            &self.tree.cohort(b)?.members,
            &self.tree.cohort(f)?.members,
            idx,
            DEFAULT_NUMERIC_BINS,
        )?;
        Ok(DimensionView {
            dim: dim.clone(),
            label: h.label(idx).to_string(),
            depth: h.depth(idx),
            baseline: b,
            focus: f,
            baseline_distribution: bd,
            focus_distribution: fd,
            drift: profile.value(idx),
            constrained: profile.is_constrained(idx),
            salient: profile.is_salient(idx),
        })
    }
}
