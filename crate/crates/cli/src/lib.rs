//! Command-line front end: dataset generation and validation, batch
//! reports, and the HTTP service.

pub mod report;
pub mod script;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use driftscope_core::ingest::validate_sources;
use driftscope_core::{
    generate_synthetic, write_hierarchy, write_patients, AggregationMethod, DimensionId, SyntheticSpec,
    UnknownCodePolicy,
};
use driftscope_service::{load_files, SessionStore};
use thiserror::Error;

pub use report::{build_report, render, write_report, OutputFormat, Report, ReportOptions};
pub use script::{CohortRef, FilterScript, ScriptStep};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Validation(String),

    #[error("{0}")]
    Io(String),
}

impl CliError {
    /// 2 for usage errors, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Validation(_) | Self::Io(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "driftscope", version, about = "Track selection bias while building cohorts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic hierarchy and patient file.
    Generate(GenerateArgs),
    /// Check a hierarchy and patient file for problems.
    Validate(ValidateArgs),
    /// Replay a filter script and write drift views.
    Report(ReportArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Table-scale dataset: 8,360 patients, 15,376 dimensions.
    Table,
    /// Small dataset with one planted correlated pair.
    Planted,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Preset::Table)]
    pub preset: Preset,
    /// JSON generator spec; replaces the preset (its seed is overridden by --seed).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ValidateFormat {
    Json,
    Text,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Patient records, one JSON object per line.
    #[arg(long)]
    pub data: PathBuf,
    /// Hierarchy CSV with columns system,code,parent,label.
    #[arg(long)]
    pub hierarchy: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub input: DataArgs,
    #[arg(long, value_enum, default_value_t = ValidateFormat::Text)]
    pub format: ValidateFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Breadth,
    Depth,
}

impl From<MethodArg> for AggregationMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Breadth => Self::Breadth,
            MethodArg::Depth => Self::Depth,
        }
    }
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub input: DataArgs,
    /// Filter script (JSON). Without one the report covers the root only.
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Saliency threshold [default: 0.05, or the script's value].
    #[arg(long)]
    pub ts: Option<f64>,
    /// Aggregation method [default: breadth, or the script's value].
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Baseline cohort: root, N, N/included or N/excluded [default: root].
    #[arg(long)]
    pub baseline: Option<CohortRef>,
    /// Focus cohort [default: the last step's included cohort].
    #[arg(long)]
    pub focus: Option<CohortRef>,
    /// Extra dimensions to report distributions for, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub dims: Vec<DimensionId>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    pub format: OutputFormat,
    /// Output directory; JSON goes to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Attach codes missing from the hierarchy under an "Unknown" root
    /// instead of failing.
    #[arg(long)]
    pub allow_unknown_codes: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Directory for session files; sessions are memory-only without it.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Require `Authorization: Bearer <token>` on session routes.
    #[arg(long, env = "DRIFTSCOPE_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(a) => generate(&a),
        Command::Validate(a) => validate(&a),
        Command::Report(a) => report(&a),
        Command::Serve(a) => serve(a),
    }
}

fn generate(a: &GenerateArgs) -> Result<(), CliError> {
    let mut spec = match (&a.spec, a.preset) {
        (Some(path), _) => serde_json::from_str::<SyntheticSpec>(&read(path)?)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?,
        (None, Preset::Table) => SyntheticSpec::table_scale(a.seed),
        (None, Preset::Planted) => SyntheticSpec::planted_pair(a.seed),
    };
    spec.seed = a.seed;
    let (h, table) = generate_synthetic(&spec).map_err(|e| CliError::Validation(e.to_string()))?;
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::Io(format!("{}: {e}", a.out.display())))?;
    let files = [
        ("hierarchy.csv", write_hierarchy(&h)),
        ("patients.jsonl", write_patients(&table.patients)),
        (
            "spec.json",
            serde_json::to_string_pretty(&spec).expect("specs serialize") + "\n",
        ),
    ];
    for (name, text) in files {
        let path = a.out.join(name);
        std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    log::info!("wrote {} patients over {} dimensions to {}", table.len(), h.len(), a.out.display());
    Ok(())
}

fn validate(a: &ValidateArgs) -> Result<(), CliError> {
    let report = validate_sources(&read(&a.input.hierarchy)?, &read(&a.input.data)?);
    match a.format {
        ValidateFormat::Json => println!("{}", serde_json::to_string_pretty(&report).expect("reports serialize")),
        ValidateFormat::Text => {
            println!("patients: {}", report.patients);
            for (system, c) in &report.systems {
                println!(
                    "{system}: {} codes in hierarchy, {} distinct codes recorded",
                    c.hierarchy_codes, c.distinct_event_types
                );
            }
            for d in &report.diagnostics {
                println!("{:?}: {}", d.kind, d.message);
            }
        }
    }
    if report.is_clean() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{} problem(s) found", report.diagnostics.len())))
    }
}

fn report(a: &ReportArgs) -> Result<(), CliError> {
    if a.out.is_none() && a.format != OutputFormat::Json {
        return Err(CliError::Usage("--out is required for csv and svg output".into()));
    }
    let policy = if a.allow_unknown_codes {
        UnknownCodePolicy::Collect
    } else {
        UnknownCodePolicy::Strict
    };
    let dataset = load_files(&a.input.hierarchy, &a.input.data, policy)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let script = match &a.script {
        Some(p) => FilterScript::parse(&read(p)?)?,
        None => FilterScript::default(),
    };
    let opts = ReportOptions {
        t_s: a.ts,
        method: a.method.map(Into::into),
        baseline: a.baseline,
        focus: a.focus,
        dims: a.dims.clone(),
    };
    let (report, _) = build_report(Arc::new(dataset), &script, &opts)?;
    for path in write_report(&report, a.format, a.out.as_deref())? {
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| CliError::Usage(format!("bad listen address: {e}")))?;
    let store = match &a.store {
        Some(dir) => SessionStore::open(dir).map_err(|e| CliError::Validation(e.to_string()))?,
        None => SessionStore::in_memory(),
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
    rt.block_on(driftscope_service::serve(addr, Arc::new(store), a.token))
        .map_err(|e| CliError::Io(e.to_string()))
}
