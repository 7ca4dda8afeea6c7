//! Selection-bias tracking over hierarchically coded patient cohorts.
//!
//! A [`Dataset`] pairs patients with a [`CodeHierarchy`]; a
//! [`ProvenanceTree`] records the filters that carve cohorts out of it; a
//! [`DriftProfile`] compares two cohorts dimension by dimension; the
//! [`layout`] module turns a profile into icicle, dot-plot and list views.

pub mod cohort;
pub mod dataset;
pub mod hierarchy;
pub mod ingest;
pub mod layout;
pub mod metrics;
pub mod render;

pub use cohort::{
    Cohort, CohortError, CohortId, ConstrainedDims, EdgeId, FilterEdge, FilterOperator, Interval, Polarity,
    ProvenanceTree,
};
pub use dataset::{AttributeValue, Dataset, DatasetError, Patient, PatientTable};
pub use hierarchy::{
    load_hierarchy, write_hierarchy, AttributeKind, AttributeSpec, CodeHierarchy, CodeNode, DimIndex, DimensionId,
    HierarchyError, HierarchyRow,
};
pub use metrics::{
    drift_profile, hellinger, AggregationMethod, AggregationSettings, DriftProfile, MetricsError, OverlapSummary,
};
pub use layout::{
    aggregate, dot_plot, expand_group, list_rows, promote_salient, split_icicle, DotPlotLayout, LayoutError,
    ListRow, SplitIcicleLayout,
};
pub use ingest::{generate_synthetic, parse_patients, write_patients, IngestError, SyntheticSpec, UnknownCodePolicy};
