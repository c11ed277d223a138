//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for data or model errors
//! (reported on stderr as a JSON object with `error` and `message` keys).

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::balance::{balance_report, Moment};
use crate::data::{ingest_csv, ObservationalDataset};
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_dr_ipw, estimate_dr_mw, estimate_ipw, estimate_matched, estimate_mw,
    estimate_outcome_regression, estimate_stratified, EffectEstimate, PropensityModel,
};
use crate::histogram::{mirror_histogram, mirror_svg, MirrorLabels};
use crate::json::to_json_string;
use crate::propensity::{matching_weights, smooth_coefficients, DEFAULT_DELTA};
use crate::simulation::{render_table1, render_table2, render_table3, run_table1, run_table2, run_table3};

/// Environment variable holding the simulation worker count.
pub const WORKERS_ENV: &str = "MATCHWEIGHT_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "matchweight", version, about = "Matching-weight propensity score analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Estimate a treatment effect from a CSV file.
    Estimate(EstimateArgs),
    /// Test covariate balance under matching weights.
    Balance(BalanceArgs),
    /// Mirror histogram of propensity scores or a covariate.
    MirrorHist(MirrorArgs),
    /// Reproduce the simulation tables.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub outcome: String,
    #[arg(long)]
    pub treatment: String,
    /// Covariate columns to load, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "")]
    pub covariates: Vec<String>,
    /// Propensity model covariates; defaults to all loaded covariates.
    /// `none` gives an intercept-only model.
    #[arg(long, value_delimiter = ',')]
    pub ps_covariates: Option<Vec<String>>,
    /// Do not add an intercept column.
    #[arg(long)]
    pub no_intercept: bool,
    /// Half-width of the smoothing patch around e = 0.5.
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
    /// Write results here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorTag {
    Mw,
    DrMw,
    Ipw,
    IpwHt,
    DrIpw,
    Matched,
    Stratified,
    Ols,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "mw")]
    pub estimator: EstimatorTag,
    /// Outcome model covariates for augmented estimators and OLS; defaults
    /// to all loaded covariates.
    #[arg(long, value_delimiter = ',')]
    pub outcome_covariates: Option<Vec<String>>,
    /// Caliper as a multiple of the SD of logit(e).
    #[arg(long, default_value_t = 0.2)]
    pub caliper: f64,
    #[arg(long, default_value_t = 5)]
    pub strata: usize,
}

#[derive(Args, Debug)]
pub struct BalanceArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Moments to test: `x1` (mean), `x1^2` or `x1*x2`. Defaults to the mean
    /// of every non-intercept covariate.
    #[arg(long, value_delimiter = ',')]
    pub targets: Option<Vec<String>>,
}

#[derive(Args, Debug)]
pub struct MirrorArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    /// Histogram this covariate instead of the propensity score.
    #[arg(long)]
    pub variable: Option<String>,
    /// Also render an SVG chart to this path.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Text,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub table: u8,
    /// Scenarios for tables 1 and 2.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub scenario: Vec<u8>,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    /// Sample size for tables 1 and 2.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Effect scales for table 3.
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5")]
    pub theta: Vec<f64>,
    /// Sample sizes for table 3.
    #[arg(long = "sizes", value_delimiter = ',', default_value = "200,600")]
    pub sizes: Vec<usize>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
}

/// Worker count from the environment, else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn load(args: &DataArgs) -> Result<(ObservationalDataset, PropensityModel)> {
    let covs: Vec<&str> = args
        .covariates
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .collect();
    let d = ingest_csv(&args.data, &args.outcome, &args.treatment, &covs, !args.no_intercept)?;
    let ps = model_columns(&d, args.ps_covariates.as_deref(), &covs)?;
    if ps.is_empty() {
        return Err(Error::InvalidArgument("propensity model has no columns".into()));
    }
    Ok((d, PropensityModel::Logistic(ps)))
}

/// Intercept (when present) plus the named covariates.
fn model_columns(d: &ObservationalDataset, names: Option<&[String]>, default: &[&str]) -> Result<Vec<usize>> {
    let names: Vec<&str> = match names {
        Some(list) => list
            .iter()
            .map(|s| s.trim())
            .filter(|s| !s.is_empty() && *s != "none")
            .collect(),
        None => default.to_vec(),
    };
    let mut cols = Vec::new();
    if d.has_intercept() {
        cols.push(0);
    }
    cols.extend(d.column_indices(&names)?);
    Ok(cols)
}

fn emit(out: &mut dyn Write, path: Option<&PathBuf>, body: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, body)?,
        None => out.write_all(body.as_bytes())?,
    }
    Ok(())
}

fn estimate(args: &EstimateArgs) -> Result<EffectEstimate> {
    let (d, ps) = load(&args.data)?;
    let covs: Vec<&str> = args.data.covariates.iter().map(|s| s.trim()).filter(|s| !s.is_empty()).collect();
    let outcome_cols = model_columns(&d, args.outcome_covariates.as_deref(), &covs)?;
    let cfg = smooth_coefficients(args.data.delta)?;
    match args.estimator {
        EstimatorTag::Mw => estimate_mw(&d, &ps, &cfg),
        EstimatorTag::DrMw => estimate_dr_mw(&d, &ps, &outcome_cols, &cfg),
        EstimatorTag::Ipw => estimate_ipw(&d, &ps, true),
        EstimatorTag::IpwHt => estimate_ipw(&d, &ps, false),
        EstimatorTag::DrIpw => estimate_dr_ipw(&d, &ps, &outcome_cols),
        EstimatorTag::Matched => estimate_matched(&d, &ps, args.caliper),
        EstimatorTag::Stratified => estimate_stratified(&d, &ps, args.strata),
        EstimatorTag::Ols => estimate_outcome_regression(&d, &outcome_cols),
    }
}

fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Estimate(args) => {
            let est = estimate(args)?;
            for w in &est.warnings {
                let _ = writeln!(err, "warning: {w}");
            }
            emit(out, args.data.output.as_ref(), &(to_json_string(&est) + "\n"))
        }
        Command::Balance(args) => {
            let (d, ps) = load(&args.data)?;
            let cfg = smooth_coefficients(args.data.delta)?;
            let moments = match &args.targets {
                Some(t) => t.iter().map(|s| Moment::parse(s)).collect::<Result<Vec<_>>>()?,
                None => d
                    .covariate_names()
                    .iter()
                    .skip(usize::from(d.has_intercept()))
                    .map(|n| Moment::Mean(n.clone()))
                    .collect(),
            };
            let (results, warning) = balance_report(&d, &ps, &moments, &cfg)?;
            if let Some(w) = warning {
                let _ = writeln!(err, "warning: {w}");
            }
            emit(out, args.data.output.as_ref(), &(to_json_string(&results) + "\n"))
        }
        Command::MirrorHist(args) => {
            let (d, ps) = load(&args.data)?;
            let cfg = smooth_coefficients(args.data.delta)?;
            let (_, scores) = ps.fit(&d)?;
            let weights = matching_weights(&d, &scores, &cfg)?;
            let (values, range, label) = match &args.variable {
                Some(name) => (d.column(d.column_index(name)?), None, name.clone()),
                None => (scores, Some((0.0, 1.0)), "propensity score".to_string()),
            };
            let h = mirror_histogram(&d, &values, &weights, args.bins, range)?;
            if let Some(svg) = &args.svg {
                let labels = MirrorLabels {
                    x_label: label,
                    ..MirrorLabels::default()
                };
                std::fs::write(svg, mirror_svg(&h, &labels))?;
            }
            emit(out, args.data.output.as_ref(), &(to_json_string(&h) + "\n"))
        }
        Command::Simulate(args) => {
            let workers = worker_count();
            let (summaries, text) = match args.table {
                1 => {
                    let s = run_table1(&args.scenario, args.n, args.reps, args.seed, workers)?;
                    let t = render_table1(&s);
                    (s, t)
                }
                2 => {
                    let s = run_table2(&args.scenario, args.n, args.reps, args.seed, workers)?;
                    let t = render_table2(&s);
                    (s, t)
                }
                _ => {
                    let s = run_table3(&args.theta, &args.sizes, args.reps, args.seed, workers)?;
                    let t = render_table3(&s);
                    (s, t)
                }
            };
            let body = match args.format {
                Format::Json => to_json_string(&summaries) + "\n",
                Format::Text => text,
            };
            emit(out, args.output.as_ref(), &body)
        }
    }
}

fn is_usage_error(e: &Error) -> bool {
    matches!(e, Error::InvalidArgument(_))
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = out.write_all(text.as_bytes());
            } else {
                let _ = err.write_all(text.as_bytes());
            }
            return code;
        }
    };
    match execute(&cli, out, err) {
        Ok(()) => 0,
        Err(e) if is_usage_error(&e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
        Err(e) => {
            let report = ErrorReport {
                error: e.kind(),
                message: e.to_string(),
            };
            let _ = writeln!(err, "{}", serde_json::to_string(&report).unwrap_or_default());
            2
        }
    }
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}
