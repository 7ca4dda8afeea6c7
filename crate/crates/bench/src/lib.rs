//! Shared fixtures for the benchmarks.

use driftscope_core::{
    drift_profile, generate_synthetic, AggregationSettings, Dataset, DriftProfile, FilterOperator, ProvenanceTree,
    SyntheticSpec,
};

/// Table-scale dataset with one filter applied on the planted code.
pub struct Scenario {
    pub dataset: Dataset,
    pub tree: ProvenanceTree,
    pub focus: driftscope_core::CohortId,
}

impl Scenario {
    pub fn table_scale(seed: u64) -> Self {
        let spec = SyntheticSpec::table_scale(seed);
        let (h, table) = generate_synthetic(&spec).expect("preset generates");
        let dataset = Dataset::assemble(h, table).expect("preset assembles");
        let mut tree = ProvenanceTree::new(&dataset);
        let target = spec.correlations[0].dim_a.clone();
        let (focus, _) = tree
            .apply_filter(tree.root(), FilterOperator::EventPresent { target }, &dataset)
            .expect("planted code exists");
        Self { dataset, tree, focus }
    }

    pub fn profile(&self, settings: &AggregationSettings) -> DriftProfile {
        drift_profile(&self.tree, self.tree.root(), self.focus, &self.dataset, settings).expect("cohorts exist")
    }
}
