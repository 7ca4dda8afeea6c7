//! Batch drift reports.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use driftscope_core::layout::HeatGrid;
use driftscope_core::metrics::{ProfileDocument, TreeSummary};
use driftscope_core::render::{dotplot_svg, icicle_svg, list_svg};
use driftscope_core::{
    AggregationMethod, AggregationSettings, Dataset, DimensionId, DotPlotLayout, OverlapSummary, SplitIcicleLayout,
};
use driftscope_service::{DimensionView, ListDocument, Mutation, Session, ViewParams};
use serde::Serialize;

use crate::script::{replay_steps, CohortRef, FilterScript};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
    Svg,
}

/// Command-line overrides applied on top of the script.
#[derive(Debug, Clone, Default)]
pub struct ReportOptions {
    pub t_s: Option<f64>,
    pub method: Option<AggregationMethod>,
    pub baseline: Option<CohortRef>,
    pub focus: Option<CohortRef>,
    pub dims: Vec<DimensionId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub tree: TreeSummary,
    pub profile: ProfileDocument,
    pub list: ListDocument,
    pub icicle: SplitIcicleLayout,
    pub dotplot: DotPlotLayout,
    pub overlap: OverlapSummary,
    pub dimensions: Vec<DimensionView>,
}

/// Replays `script` on a fresh session and collects every view.
///
/// Returns the session too, so callers can compare against it.
pub fn build_report(
    dataset: Arc<Dataset>,
    script: &FilterScript,
    opts: &ReportOptions,
) -> Result<(Report, Session), CliError> {
    let mut session = Session::new(dataset);
    let replayed = replay_steps(&mut session, script)?;

    let mut settings = AggregationSettings::default();
    if let Some(t) = opts.t_s.or(script.settings.t_s) {
        settings.t_s = t;
    }
    if let Some(m) = opts.method.or(script.settings.method) {
        settings.method = m;
    }
    settings.manual_salient = script.settings.manual_salient.iter().cloned().collect();
    if settings != *session.settings() {
        session
            .apply(Mutation::SetSettings { settings })
            .map_err(|e| CliError::Validation(format!("settings: {e}")))?;
    }

    let baseline = opts.baseline.or(script.baseline).unwrap_or(CohortRef::Root);
    let focus = opts.focus.or(script.focus).unwrap_or(match replayed.len() {
        0 => CohortRef::Root,
        n => CohortRef::Step {
            index: n - 1,
            excluded: false,
        },
    });
    let (b, f) = (replayed.resolve(&session, baseline)?, replayed.resolve(&session, focus)?);
    let invalid = |e: driftscope_service::ServiceError| CliError::Validation(e.to_string());
    session.apply(Mutation::SetBaseline { cohort: b }).map_err(invalid)?;
    session.apply(Mutation::SetFocus { cohort: f }).map_err(invalid)?;

    let view = ViewParams::default();
    let mut profile = session.profile_document(&view).map_err(invalid)?;
    if replayed.is_empty() {
        // Only the root exists; there is no comparison to average.
        profile.h_avg = None;
    }
    let mut dims = script.dims.clone();
    dims.extend(opts.dims.iter().cloned());
    dims.sort();
    dims.dedup();
    let dimensions = dims
        .iter()
        .map(|d| session.dimension(d, &view))
        .collect::<Result<Vec<_>, _>>()
        .map_err(invalid)?;
    let report = Report {
        tree: session.tree_summary().map_err(invalid)?,
        profile,
        list: session.list(&view).map_err(invalid)?,
        icicle: session.icicle(&view).map_err(invalid)?,
        dotplot: session.dotplot(&view, HeatGrid::default()).map_err(invalid)?,
        overlap: session.overlap(b, f).map_err(invalid)?,
        dimensions,
    };
    Ok((report, session))
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("report serializes");
    out.push(b'\n');
    out
}

fn csv_bytes<R: Serialize>(records: impl IntoIterator<Item = R>) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

#[derive(Serialize)]
struct CohortRecord {
    id: u64,
    parent: Option<u64>,
    edge: Option<u64>,
    polarity: &'static str,
    visible: bool,
    size: usize,
    h_avg: Option<f64>,
}

#[derive(Serialize)]
struct EdgeRecord<'a> {
    id: u64,
    parent: u64,
    filter: &'a str,
    included: u64,
    excluded: u64,
    delta_h_avg_included: Option<f64>,
    delta_h_avg_excluded: Option<f64>,
}

#[derive(Serialize)]
struct ProfileRecord<'a> {
    dim: &'a DimensionId,
    value: f64,
    constraint: &'static str,
    salient: bool,
}

#[derive(Serialize)]
struct ListRecord<'a> {
    rank: usize,
    dim: &'a DimensionId,
    label: &'a str,
    value: f64,
    constrained: bool,
    salient: bool,
}

#[derive(Serialize)]
struct FragmentRecord<'a> {
    id: usize,
    dim: &'a DimensionId,
    depth: u32,
    row_start: usize,
    row_span: usize,
    value: f64,
    split_group: Option<usize>,
    constrained: bool,
    salient: bool,
    group: Option<usize>,
}

#[derive(Serialize)]
struct GroupRecord {
    id: usize,
    fragments: usize,
    value: f64,
    reduced_height: bool,
    constrained: bool,
    depth_start: u32,
    depth_end: u32,
    row_start: usize,
    row_span: usize,
}

#[derive(Serialize)]
struct DotRecord<'a> {
    dim: &'a DimensionId,
    label: &'a str,
    depth: u32,
    drift: f64,
    size: f64,
    gradient: f64,
    constrained: bool,
}

#[derive(Serialize)]
struct DistributionRecord<'a> {
    dim: &'a DimensionId,
    cohort: &'static str,
    value: &'a str,
    count: u64,
    proportion: f64,
}

/// File name and contents for every output of `format`.
pub fn render(report: &Report, format: OutputFormat) -> Result<Vec<(String, Vec<u8>)>, CliError> {
    let mut files = Vec::new();
    match format {
        OutputFormat::Json => {
            files.push(("tree.json".into(), json_bytes(&report.tree)));
            files.push(("profile.json".into(), json_bytes(&report.profile)));
            files.push(("list.json".into(), json_bytes(&report.list)));
            files.push(("icicle.json".into(), json_bytes(&report.icicle)));
            files.push(("dotplot.json".into(), json_bytes(&report.dotplot)));
            files.push(("overlap.json".into(), json_bytes(&report.overlap)));
            files.push(("dimensions.json".into(), json_bytes(&report.dimensions)));
        }
        OutputFormat::Csv => {
            let polarity = |p| match p {
                driftscope_core::Polarity::Included => "included",
                driftscope_core::Polarity::Excluded => "excluded",
            };
            files.push((
                "cohorts.csv".into(),
                csv_bytes(report.tree.cohorts.iter().map(|c| CohortRecord {
                    id: c.id.0,
                    parent: c.parent.map(|p| p.0),
                    edge: c.edge.map(|e| e.0),
                    polarity: polarity(c.polarity),
                    visible: c.visible,
                    size: c.size,
                    h_avg: c.h_avg,
                }))?,
            ));
            files.push((
                "edges.csv".into(),
                csv_bytes(report.tree.edges.iter().map(|e| EdgeRecord {
                    id: e.id.0,
                    parent: e.parent.0,
                    filter: &e.description,
                    included: e.included.0,
                    excluded: e.excluded.0,
                    delta_h_avg_included: e.delta_h_avg_included,
                    delta_h_avg_excluded: e.delta_h_avg_excluded,
                }))?,
            ));
            let p = &report.profile;
            files.push((
                "profile.csv".into(),
                csv_bytes(p.per_dim.iter().map(|(dim, &value)| ProfileRecord {
                    dim,
                    value,
                    constraint: if p.constrained_explicit.binary_search(dim).is_ok() {
                        "explicit"
                    } else if p.constrained_descendants.binary_search(dim).is_ok() {
                        "descendant"
                    } else {
                        "none"
                    },
                    salient: p.salient.binary_search(dim).is_ok(),
                }))?,
            ));
            files.push((
                "list.csv".into(),
                csv_bytes(report.list.rows.iter().enumerate().map(|(i, r)| ListRecord {
                    rank: i + 1,
                    dim: &r.dim,
                    label: &r.label,
                    value: r.value,
                    constrained: r.constrained,
                    salient: r.salient,
                }))?,
            ));
            files.push((
                "icicle.csv".into(),
                csv_bytes(report.icicle.fragments.iter().map(|f| FragmentRecord {
                    id: f.id,
                    dim: &f.dim,
                    depth: f.depth,
                    row_start: f.row_start,
                    row_span: f.row_span,
                    value: f.value,
                    split_group: f.split_group,
                    constrained: f.constrained,
                    salient: f.salient,
                    group: f.group,
                }))?,
            ));
            files.push((
                "groups.csv".into(),
                csv_bytes(report.icicle.groups.iter().map(|g| GroupRecord {
                    id: g.id,
                    fragments: g.members.len(),
                    value: g.value,
                    reduced_height: g.reduced_height,
                    constrained: g.constrained,
                    depth_start: g.depth_start,
                    depth_end: g.depth_end,
                    row_start: g.row_start,
                    row_span: g.row_span,
                }))?,
            ));
            files.push((
                "dotplot.csv".into(),
                csv_bytes(report.dotplot.points.iter().map(|d| DotRecord {
                    dim: &d.dim,
                    label: &d.label,
                    depth: d.x,
                    drift: d.y,
                    size: d.size,
                    gradient: d.gradient,
                    constrained: d.constrained,
                }))?,
            ));
            files.push(("overlap.csv".into(), csv_bytes([report.overlap])?));
            let mut dist = Vec::new();
            for v in &report.dimensions {
                for (cohort, d) in [("baseline", &v.baseline_distribution), ("focus", &v.focus_distribution)] {
                    for i in 0..d.support.len() {
                        dist.push(DistributionRecord {
                            dim: &v.dim,
                            cohort,
                            value: &d.support[i],
                            count: d.counts[i],
                            proportion: d.probs[i],
                        });
                    }
                }
            }
            files.push(("dimensions.csv".into(), csv_bytes(dist)?));
        }
        OutputFormat::Svg => {
            files.push(("icicle.svg".into(), icicle_svg(&report.icicle).into_bytes()));
            files.push(("dotplot.svg".into(), dotplot_svg(&report.dotplot).into_bytes()));
            files.push((
                "list.svg".into(),
                list_svg(&report.list.rows, report.list.color_max).into_bytes(),
            ));
        }
    }
    Ok(files)
}

/// Writes the report to `out`, or as one JSON document to stdout when no
/// directory is given.
pub fn write_report(report: &Report, format: OutputFormat, out: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    let Some(dir) = out else {
        if format != OutputFormat::Json {
            return Err(CliError::Usage("--out is required for csv and svg output".into()));
        }
        std::io::stdout()
            .write_all(&json_bytes(report))
            .map_err(|e| CliError::Io(e.to_string()))?;
        return Ok(Vec::new());
    };
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut written = Vec::new();
    for (name, bytes) in render(report, format)? {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}
