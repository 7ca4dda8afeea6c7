//! Renderer-agnostic geometry for the comparison views.

pub mod aggregate;
pub mod dotplot;
pub mod icicle;
pub mod list;

use thiserror::Error;

use crate::hierarchy::HierarchyError;
use crate::metrics::MetricsError;

pub use aggregate::{
    aggregate, aggregate_breadth_first, aggregate_depth_first, expand_group, promote_salient, ExpandedGroup,
    IcicleCell,
};
pub use dotplot::{dot_plot, DotPlotLayout, DotPoint, GradientSign, HeatCell, HeatGrid};
pub use icicle::{
    split_icicle, split_icicle_scoped, Fragment, Group, PathEntry, SplitIcicleLayout, SystemBlock,
    REDUCED_HEIGHT_RATIO,
};
pub use list::{list_rows, ListRow};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayoutError {
    #[error("hierarchy is empty")]
    EmptyHierarchy,

    #[error("profile covers {actual} dimensions, hierarchy has {expected}")]
    ProfileMismatch { expected: usize, actual: usize },

    #[error("unknown group {0}")]
    UnknownGroup(usize),

    #[error("unknown coding system '{0}'")]
    UnknownSystem(String),

    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl From<HierarchyError> for LayoutError {
    fn from(e: HierarchyError) -> Self {
        Self::Metrics(e.into())
    }
}
