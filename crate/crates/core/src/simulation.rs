//! Monte Carlo harness: the three-scenario data-generating process, the
//! thirteen-method comparison, coverage and power studies.
//!
//! Every replicate draws from its own ChaCha8 stream keyed by
//! `(seed, replicate_index)`, and summaries are reduced in replicate order,
//! so results do not depend on the number of worker threads.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{ObservationalDataset, INTERCEPT_NAME};
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_dr_ipw, estimate_dr_mw, estimate_ipw, estimate_matched, estimate_mw,
    estimate_outcome_regression, estimate_stratified, EffectEstimate, PropensityModel,
};
use crate::propensity::{expit, SmoothWeightConfig};

pub const ALPHA_TRUE: [f64; 5] = [1.0, 2.0, -1.0, -2.0, 1.0];
pub const DELTA_TRUE: f64 = 2.0;
/// Replicates with failed estimators above this share abort a run.
pub const MAX_FAILURE_RATE: f64 = 0.02;

const ALL_COLUMNS: [usize; 5] = [0, 1, 2, 3, 4];
/// Propensity model with `X1` and `X2` only.
const BAD_PS_COLUMNS: [usize; 3] = [0, 1, 2];
/// Outcome model with `X1` and `X3` only.
const BAD_OUTCOME_COLUMNS: [usize; 3] = [0, 1, 3];

pub fn scenario_beta(scenario_id: u8) -> Result<[f64; 5]> {
    match scenario_id {
        1 => Ok([-1.0, 0.4, 0.2, 0.4, 0.2]),
        2 => Ok([-2.0, 0.8, 0.4, 0.8, 0.4]),
        3 => Ok([-3.0, 1.5, 0.75, 1.5, 0.75]),
        s => Err(Error::InvalidArgument(format!("unknown scenario {s}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Effect {
    /// Constant effect `delta`.
    Homogeneous { delta: f64 },
    /// `Δ_i = θ (2.5 + 0.5 X1 - 0.5 X3)`.
    Heterogeneous { theta: f64 },
}

impl Effect {
    fn individual(&self, x1: f64, x3: f64) -> f64 {
        match *self {
            Effect::Homogeneous { delta } => delta,
            Effect::Heterogeneous { theta } => theta * (2.5 + 0.5 * x1 - 0.5 * x3),
        }
    }

    /// Population average effect (`E[X1] = 0`, `E[X3] = 1`).
    pub fn average(&self) -> f64 {
        match *self {
            Effect::Homogeneous { delta } => delta,
            Effect::Heterogeneous { theta } => 2.0 * theta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSpec {
    pub scenario_id: u8,
    pub beta_true: [f64; 5],
    pub alpha_true: [f64; 5],
    pub effect: Effect,
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Homogeneous effect `Δ = 2`.
    pub fn new(scenario_id: u8, n: usize, replicates: usize, seed: u64) -> Result<Self> {
        if n < 10 {
            return Err(Error::InvalidArgument(format!("n = {n} is too small")));
        }
        Ok(Self {
            scenario_id,
            beta_true: scenario_beta(scenario_id)?,
            alpha_true: ALPHA_TRUE,
            effect: Effect::Homogeneous { delta: DELTA_TRUE },
            n,
            replicates,
            seed,
        })
    }

    /// Scenario 2 with the heterogeneous effect scaled by `theta`.
    pub fn heterogeneous(theta: f64, n: usize, replicates: usize, seed: u64) -> Result<Self> {
        let mut spec = Self::new(2, n, replicates, seed)?;
        spec.effect = Effect::Heterogeneous { theta };
        Ok(spec)
    }
}

pub fn covariate_names() -> Vec<String> {
    let mut names = vec![INTERCEPT_NAME.to_string()];
    names.extend((1..=4).map(|j| format!("x{j}")));
    names
}

/// Draws one replicate. The stream depends only on `spec.seed` and
/// `replicate_index`.
pub fn generate_dataset(spec: &ScenarioSpec, replicate_index: usize) -> Result<ObservationalDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(replicate_index as u64);
    let mut rows = Vec::with_capacity(spec.n);
    let mut z = Vec::with_capacity(spec.n);
    let mut y = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let x1: f64 = rng.sample(StandardNormal);
        let x2: f64 = rng.sample(StandardNormal);
        let x3 = if rng.random_bool(0.5) { 2.0 } else { 0.0 };
        let x4 = if rng.random_bool(0.5) { 2.0 } else { 0.0 };
        let x = [1.0, x1, x2, x3, x4];
        let dot = |c: &[f64; 5]| x.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
        let e = expit(dot(&spec.beta_true));
        let zi = u8::from(rng.random::<f64>() < e);
        let eps: f64 = 2.0 * rng.sample::<f64, _>(StandardNormal);
        y.push(spec.effect.individual(x1, x3) * zi as f64 + dot(&spec.alpha_true) + eps);
        z.push(zi);
        rows.push(x.to_vec());
    }
    ObservationalDataset::new(y, z, rows, covariate_names())
}

/// The thirteen compared methods, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// OLS with the true outcome model; the variance reference.
    Best,
    Stratified,
    Matched01,
    Matched02,
    Matched03,
    Ipw,
    DrIpw,
    Mw,
    MwBadPs,
    DrMw,
    DrMwBadPs,
    DrMwBadOutcome,
    DrMwBothBad,
}

impl Method {
    pub const ALL: [Method; 13] = [
        Method::Best,
        Method::Stratified,
        Method::Matched01,
        Method::Matched02,
        Method::Matched03,
        Method::Ipw,
        Method::DrIpw,
        Method::Mw,
        Method::MwBadPs,
        Method::DrMw,
        Method::DrMwBadPs,
        Method::DrMwBadOutcome,
        Method::DrMwBothBad,
    ];

    /// Methods in the coverage study.
    pub const COVERAGE: [Method; 6] = [
        Method::Mw,
        Method::MwBadPs,
        Method::DrMw,
        Method::DrMwBadPs,
        Method::DrMwBadOutcome,
        Method::DrMwBothBad,
    ];

    /// Methods in the heterogeneous-effect power study.
    pub const POWER: [Method; 3] = [Method::Mw, Method::DrMw, Method::DrIpw];

    pub fn label(&self) -> &'static str {
        match self {
            Method::Best => "1:best",
            Method::Stratified => "2:strt",
            Method::Matched01 => "3:M0.1",
            Method::Matched02 => "4:Mopt",
            Method::Matched03 => "5:M0.3",
            Method::Ipw => "6:IPW",
            Method::DrIpw => "7:DR IPW",
            Method::Mw => "8:MW",
            Method::MwBadPs => "9:MW p",
            Method::DrMw => "10:DR MW",
            Method::DrMwBadPs => "11:DR MW p",
            Method::DrMwBadOutcome => "12:DR MW y",
            Method::DrMwBothBad => "13:DR MW py",
        }
    }

    pub fn from_label(label: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.label() == label)
    }

    pub fn estimate(&self, d: &ObservationalDataset) -> Result<EffectEstimate> {
        let good = PropensityModel::Logistic(ALL_COLUMNS.to_vec());
        let bad = PropensityModel::Logistic(BAD_PS_COLUMNS.to_vec());
        let cfg = SmoothWeightConfig::default();
        match self {
            Method::Best => estimate_outcome_regression(d, &ALL_COLUMNS),
            Method::Stratified => estimate_stratified(d, &good, 5),
            Method::Matched01 => estimate_matched(d, &good, 0.1),
            Method::Matched02 => estimate_matched(d, &good, 0.2),
            Method::Matched03 => estimate_matched(d, &good, 0.3),
            Method::Ipw => estimate_ipw(d, &good, true),
            Method::DrIpw => estimate_dr_ipw(d, &good, &ALL_COLUMNS),
            Method::Mw => estimate_mw(d, &good, &cfg),
            Method::MwBadPs => estimate_mw(d, &bad, &cfg),
            Method::DrMw => estimate_dr_mw(d, &good, &ALL_COLUMNS, &cfg),
            Method::DrMwBadPs => estimate_dr_mw(d, &bad, &ALL_COLUMNS, &cfg),
            Method::DrMwBadOutcome => estimate_dr_mw(d, &good, &BAD_OUTCOME_COLUMNS, &cfg),
            Method::DrMwBothBad => estimate_dr_mw(d, &bad, &BAD_OUTCOME_COLUMNS, &cfg),
        }
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

/// Aggregates for one method over the replicates it completed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mean: f64,
    pub bias: f64,
    /// `100 · bias / truth`; absent when the truth is zero.
    pub bias_pct: Option<f64>,
    /// Divisor R, so `mse = variance + bias²`.
    pub variance: f64,
    pub mse: f64,
    /// Percent of the reference method's variance, when it was run.
    pub var_rel: Option<f64>,
    pub mse_rel: Option<f64>,
    pub ess_mean: f64,
    pub ess_treated_mean: f64,
    pub ess_control_mean: f64,
    pub mean_se: f64,
    pub coverage_pct: f64,
    pub rejection_pct: f64,
    pub replicates_used: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloSummary {
    pub spec: ScenarioSpec,
    pub truth: f64,
    pub methods: Vec<MethodSummary>,
}

impl MonteCarloSummary {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }
}

/// Maps `f` over `0..count` on `workers` threads, returning results in index
/// order.
pub fn par_map_ordered<T, F>(count: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if workers <= 1 {
        return Ok((0..count).map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..count).into_par_iter().map(f).collect()))
}

fn summarize(method: Method, truth: f64, results: &[&Result<EffectEstimate>]) -> MethodSummary {
    let ok: Vec<&EffectEstimate> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    let r = ok.len() as f64;
    let avg = |f: &dyn Fn(&EffectEstimate) -> f64| ok.iter().map(|e| f(e)).sum::<f64>() / r;
    let mean = avg(&|e| e.delta_hat);
    let variance = avg(&|e| (e.delta_hat - mean).powi(2));
    let bias = mean - truth;
    MethodSummary {
        method,
        mean,
        bias,
        bias_pct: (truth != 0.0).then(|| 100.0 * bias / truth),
        variance,
        mse: variance + bias * bias,
        var_rel: None,
        mse_rel: None,
        ess_mean: avg(&|e| e.ess_total()),
        ess_treated_mean: avg(&|e| e.ess_treated),
        ess_control_mean: avg(&|e| e.ess_control),
        mean_se: avg(&|e| e.se),
        coverage_pct: 100.0 * avg(&|e| f64::from(u8::from(e.covers(truth)))),
        rejection_pct: 100.0 * avg(&|e| f64::from(u8::from(e.rejects_zero()))),
        replicates_used: ok.len(),
        failures: results.len() - ok.len(),
    }
}

/// Runs `methods` on every replicate of `spec` and aggregates.
pub fn run_methods(spec: &ScenarioSpec, methods: &[Method], workers: usize) -> Result<MonteCarloSummary> {
    if spec.replicates == 0 {
        return Err(Error::InvalidArgument("need at least one replicate".into()));
    }
    let per_rep: Vec<Vec<Result<EffectEstimate>>> = par_map_ordered(spec.replicates, workers, |r| {
        match generate_dataset(spec, r) {
            Ok(d) => methods.iter().map(|m| m.estimate(&d)).collect(),
            Err(e) => methods
                .iter()
                .map(|_| Err(Error::InvalidDataset(e.to_string())))
                .collect(),
        }
    })?;
    let truth = spec.effect.average();
    let mut summaries = Vec::with_capacity(methods.len());
    for (k, &m) in methods.iter().enumerate() {
        let col: Vec<&Result<EffectEstimate>> = per_rep.iter().map(|row| &row[k]).collect();
        let s = summarize(m, truth, &col);
        if s.failures as f64 > MAX_FAILURE_RATE * spec.replicates as f64 {
            return Err(Error::ExcessiveFailures {
                method: m.label().into(),
                failed: s.failures,
                total: spec.replicates,
            });
        }
        summaries.push(s);
    }
    if let Some(reference) = summaries.iter().find(|s| s.method == Method::Best).cloned() {
        for s in &mut summaries {
            s.var_rel = Some(100.0 * s.variance / reference.variance);
            s.mse_rel = Some(100.0 * s.mse / reference.mse);
        }
    }
    Ok(MonteCarloSummary {
        spec: spec.clone(),
        truth,
        methods: summaries,
    })
}

fn check_replicates(replicates: usize) -> Result<()> {
    if replicates < 100 {
        return Err(Error::InvalidArgument(format!(
            "{replicates} replicates; at least 100 are needed for table reproduction"
        )));
    }
    Ok(())
}

/// All thirteen methods for each scenario.
pub fn run_table1(
    scenarios: &[u8],
    n: usize,
    replicates: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<MonteCarloSummary>> {
    check_replicates(replicates)?;
    scenarios
        .iter()
        .map(|&s| run_methods(&ScenarioSpec::new(s, n, replicates, seed)?, &Method::ALL, workers))
        .collect()
}

/// Coverage of the matching-weight methods.
pub fn run_table2(
    scenarios: &[u8],
    n: usize,
    replicates: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<MonteCarloSummary>> {
    check_replicates(replicates)?;
    scenarios
        .iter()
        .map(|&s| run_methods(&ScenarioSpec::new(s, n, replicates, seed)?, &Method::COVERAGE, workers))
        .collect()
}

/// Rejection rates under the heterogeneous Scenario-2 model, one summary per
/// `(theta, n)` pair with `theta` varying slowest.
pub fn run_table3(
    thetas: &[f64],
    ns: &[usize],
    replicates: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<MonteCarloSummary>> {
    check_replicates(replicates)?;
    let mut out = Vec::new();
    for &theta in thetas {
        for &n in ns {
            let spec = ScenarioSpec::heterogeneous(theta, n, replicates, seed)?;
            out.push(run_methods(&spec, &Method::POWER, workers)?);
        }
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.prec$}"))
}

fn scenario_header(summaries: &[MonteCarloSummary], cols: &[&str], width: usize) -> String {
    let mut s = format!("{:<12}", "");
    let span = cols.len() * width;
    for m in summaries {
        s.push_str(&format!("{:^span$}", format!("Scenario {}", m.spec.scenario_id)));
    }
    s.push('\n');
    s.push_str(&format!("{:<12}", "method"));
    for _ in summaries {
        for c in cols {
            s.push_str(&format!("{c:>width$}"));
        }
    }
    s.push('\n');
    s
}

/// Bias %, variance and MSE relative to method 1, and ESS for the matching
/// and matching-weight rows.
pub fn render_table1(summaries: &[MonteCarloSummary]) -> String {
    let mut s = scenario_header(summaries, &["bias", "var", "MSE", "ESS"], 8);
    let methods: Vec<Method> = summaries
        .first()
        .map(|m| m.methods.iter().map(|x| x.method).collect())
        .unwrap_or_default();
    for m in methods {
        let _ = write!(s, "{:<12}", m.label());
        for sum in summaries {
            let Some(r) = sum.method(m) else { continue };
            let show_ess = matches!(
                m,
                Method::Matched01 | Method::Matched02 | Method::Matched03 | Method::Mw | Method::MwBadPs
            );
            let ess = if show_ess { format!("{:.0}", r.ess_mean) } else { "".into() };
            let _ = write!(
                s,
                "{:>8}{:>8}{:>8}{:>8}",
                fmt_opt(r.bias_pct, 1),
                fmt_opt(r.var_rel, 0),
                fmt_opt(r.mse_rel, 0),
                ess
            );
        }
        s.push('\n');
    }
    s
}

/// Coverage percentages of 95% Wald intervals.
pub fn render_table2(summaries: &[MonteCarloSummary]) -> String {
    let mut s = scenario_header(summaries, &["cover"], 12);
    let methods: Vec<Method> = summaries
        .first()
        .map(|m| m.methods.iter().map(|x| x.method).collect())
        .unwrap_or_default();
    for m in methods {
        let _ = write!(s, "{:<12}", m.label());
        for sum in summaries {
            if let Some(r) = sum.method(m) {
                let _ = write!(s, "{:>12.1}", r.coverage_pct);
            }
        }
        s.push('\n');
    }
    s
}

/// Rejection percentages by `theta` (rows) and method by `n` (columns).
pub fn render_table3(summaries: &[MonteCarloSummary]) -> String {
    let mut ns: Vec<usize> = summaries.iter().map(|m| m.spec.n).collect();
    ns.dedup();
    ns.sort_unstable();
    ns.dedup();
    let mut s = format!("{:<8}", "theta");
    for m in Method::POWER {
        for n in &ns {
            s.push_str(&format!("{:>14}", format!("{} n={n}", m.label().split(':').nth(1).unwrap_or(""))));
        }
    }
    s.push('\n');
    let mut thetas: Vec<f64> = Vec::new();
    for m in summaries {
        if let Effect::Heterogeneous { theta } = m.spec.effect {
            if !thetas.contains(&theta) {
                thetas.push(theta);
            }
        }
    }
    for theta in thetas {
        let _ = write!(s, "{theta:<8}");
        for m in Method::POWER {
            for &n in &ns {
                let cell = summaries
                    .iter()
                    .find(|x| x.spec.n == n && x.spec.effect == Effect::Heterogeneous { theta })
                    .and_then(|x| x.method(m))
                    .map_or_else(|| "-".into(), |r| format!("{:.1}", r.rejection_pct));
                let _ = write!(s, "{cell:>14}");
            }
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_stream_same_data() {
        let spec = ScenarioSpec::new(1, 50, 1, 7).unwrap();
        let a = generate_dataset(&spec, 3).unwrap();
        let b = generate_dataset(&spec, 3).unwrap();
        let c = generate_dataset(&spec, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.outcomes(), c.outcomes());
    }

    #[test]
    fn covariate_supports() {
        let spec = ScenarioSpec::new(2, 200, 1, 1).unwrap();
        let d = generate_dataset(&spec, 0).unwrap();
        for i in 0..d.n() {
            let x = d.x(i);
            assert_eq!(x[0], 1.0);
            assert!(x[3] == 0.0 || x[3] == 2.0);
            assert!(x[4] == 0.0 || x[4] == 2.0);
        }
        assert_eq!(d.covariate_names()[1], "x1");
    }

    #[test]
    fn null_heterogeneous_effect_has_no_treatment_term() {
        let spec = ScenarioSpec::heterogeneous(0.0, 100, 1, 5).unwrap();
        let base = ScenarioSpec::new(2, 100, 1, 5).unwrap();
        let a = generate_dataset(&spec, 0).unwrap();
        let b = generate_dataset(&base, 0).unwrap();
        assert_eq!(a.treatments(), b.treatments());
        for i in 0..a.n() {
            let diff = b.outcomes()[i] - a.outcomes()[i];
            assert!((diff - DELTA_TRUE * b.z(i)).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_scenario() {
        assert!(ScenarioSpec::new(4, 100, 1, 0).is_err());
    }

    #[test]
    fn labels_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::from_label(m.label()), Some(m));
        }
    }

    #[test]
    fn reference_normalization_and_mse_identity() {
        let spec = ScenarioSpec::new(1, 300, 20, 11).unwrap();
        let s = run_methods(&spec, &[Method::Best, Method::Mw, Method::Matched02], 1).unwrap();
        let best = s.method(Method::Best).unwrap();
        assert!((best.var_rel.unwrap() - 100.0).abs() < 1e-12);
        assert!((best.mse_rel.unwrap() - 100.0).abs() < 1e-12);
        for m in &s.methods {
            assert!((m.mse - (m.variance + m.bias * m.bias)).abs() < 1e-10);
            assert_eq!(m.replicates_used + m.failures, 20);
        }
        let text = render_table1(std::slice::from_ref(&s));
        assert!(text.contains("8:MW"));
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let spec = ScenarioSpec::new(2, 200, 8, 3).unwrap();
        let a = run_methods(&spec, &Method::POWER, 1).unwrap();
        let b = run_methods(&spec, &Method::POWER, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn table_runs_need_enough_replicates() {
        assert!(run_table1(&[1], 100, 10, 0, 1).is_err());
    }
}
