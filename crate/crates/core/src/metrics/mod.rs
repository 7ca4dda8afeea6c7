//! Distribution comparison between cohorts.

pub mod distribution;
pub mod hellinger;
pub mod overlap;
pub mod profile;
pub mod summary;

use thiserror::Error;

use crate::cohort::CohortError;
use crate::hierarchy::DimensionId;

pub use distribution::{dimension_distribution, paired_distributions, Binning, Distribution, DistributionKind};
pub use hellinger::{hellinger, hellinger_binary, hellinger_probs};
pub use overlap::{overlap, OverlapRelationship, OverlapSummary};
pub use profile::{
    avg_hellinger, color_fraction, drift_gradient, drift_profile, drift_values, drift_values_from_counts, salient_mask,
    salient_set,
    AggregationMethod, AggregationSettings, CohortCounts, ConstraintMark, DriftProfile, GradientEntry,
    ProfileDocument, DEFAULT_SALIENCY_THRESHOLD,
};
pub use summary::{tree_summary, CohortSummary, EdgeSummary, TreeSummary};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("unknown dimension {0}")]
    UnknownDimension(String),

    #[error("cohort is empty; drift is undefined")]
    EmptyCohort,

    #[error("distributions have different supports: {0}")]
    SupportMismatch(String),

    #[error("{child} is not a child of {parent}")]
    NotAdjacent { child: DimensionId, parent: DimensionId },

    #[error("saliency threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),

    #[error(transparent)]
    Cohort(#[from] CohortError),
}
