//! Logistic propensity model and the weight functions built on it.
//!
//! The matching weight of a subject with score `e` is
//! `min(1 - e, e) / P(arm received)`, i.e. `min(1 - e, e) / e` for treated
//! subjects and `min(1 - e, e) / (1 - e)` for controls. Its derivative jumps
//! at `e = 0.5`, so the smoothed version replaces it on
//! `[0.5 - δ, 0.5 + δ]` by the cubic that matches value and slope at both
//! knots. Outside that patch the smoothed and raw weights are computed by the
//! same expression and are bit-identical.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::data::ObservationalDataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::mestimation::{self, EstimatingSystem, SolveOptions};

pub const DEFAULT_DELTA: f64 = 0.002;

/// Fitted scores must lie strictly inside `(SCORE_FLOOR, 1 - SCORE_FLOOR)`.
pub const SCORE_FLOOR: f64 = 1e-12;

/// `‖β̂‖∞` above this is treated as separation.
pub const SEPARATION_BOUND: f64 = 50.0;

pub fn expit(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let u = t.exp();
        u / (1.0 + u)
    }
}

pub fn logit(e: f64) -> f64 {
    (e / (1.0 - e)).ln()
}

pub(crate) fn linear_predictor(x: &[f64], columns: &[usize], beta: &[f64]) -> f64 {
    columns.iter().zip(beta).map(|(&j, b)| x[j] * b).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropensityFit {
    pub beta: Vec<f64>,
    pub fitted: Vec<f64>,
    pub model_columns: Vec<usize>,
    pub iterations: usize,
}

/// Logistic score block `(Z_i - e_i) X_i`.
struct LogisticScore<'a> {
    d: &'a ObservationalDataset,
    columns: &'a [usize],
}

impl EstimatingSystem for LogisticScore<'_> {
    fn dim(&self) -> usize {
        self.columns.len()
    }

    fn n(&self) -> usize {
        self.d.n()
    }

    fn contribution(&self, beta: &[f64], i: usize, out: &mut [f64]) {
        let x = self.d.x(i);
        let r = self.d.z(i) - expit(linear_predictor(x, self.columns, beta));
        for (o, &j) in out.iter_mut().zip(self.columns) {
            *o = r * x[j];
        }
    }
}

pub(crate) fn check_columns(d: &ObservationalDataset, columns: &[usize]) -> Result<()> {
    if let Some(&j) = columns.iter().find(|&&j| j >= d.p()) {
        return Err(Error::InvalidArgument(format!(
            "covariate column {j} out of range (p = {})",
            d.p()
        )));
    }
    Ok(())
}

/// Maximum-likelihood logistic regression of treatment on the given columns.
pub fn fit_logistic(d: &ObservationalDataset, columns: &[usize]) -> Result<PropensityFit> {
    check_columns(d, columns)?;
    if columns.is_empty() {
        return Err(Error::InvalidArgument("propensity model needs at least one column".into()));
    }
    linalg::check_full_rank(
        (0..d.n()).map(|i| columns.iter().map(|&j| d.covariate(i, j)).collect()),
        columns.len(),
    )?;

    let sys = LogisticScore { d, columns };
    let sol = match mestimation::solve_system(&sys, &vec![0.0; columns.len()], &SolveOptions::default())
    {
        Ok(sol) => sol,
        Err(Error::NonConvergence { iterations, .. }) => {
            return Err(Error::Separation(format!(
                "no convergence after {iterations} Newton steps"
            )))
        }
        Err(Error::SingularJacobian) => {
            return Err(Error::Separation("information matrix became singular".into()))
        }
        Err(e) => return Err(e),
    };
    let beta = sol.theta;
    let max_coef = beta.iter().fold(0.0f64, |m, b| m.max(b.abs()));
    if max_coef > SEPARATION_BOUND {
        return Err(Error::Separation(format!("|beta|_inf = {max_coef:.3e}")));
    }
    let fitted: Vec<f64> = (0..d.n())
        .map(|i| expit(linear_predictor(d.x(i), columns, &beta)))
        .collect();
    if let Some(e) = fitted
        .iter()
        .find(|&&e| !(e > SCORE_FLOOR && e < 1.0 - SCORE_FLOOR))
    {
        return Err(Error::Separation(format!("fitted score {e:e} at the boundary")));
    }
    Ok(PropensityFit {
        beta,
        fitted,
        model_columns: columns.to_vec(),
        iterations: sol.iterations,
    })
}

/// Cubic patches for the smoothed matching weight.
///
/// `a` holds the treated-arm coefficients and `b` the control-arm ones, both
/// in increasing powers of `e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmoothWeightConfig {
    pub delta: f64,
    pub a: [f64; 4],
    pub b: [f64; 4],
}

impl Default for SmoothWeightConfig {
    fn default() -> Self {
        smooth_coefficients(DEFAULT_DELTA).expect("default delta is valid")
    }
}

/// Hermite system for a cubic through the knots `0.5 ± δ`: rows are value and
/// slope at the lower knot, then value and slope at the upper knot.
pub fn knot_matrix(delta: f64) -> DMatrix<f64> {
    let lo = 0.5 - delta;
    let hi = 0.5 + delta;
    DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0,
            lo,
            lo * lo,
            lo * lo * lo,
            0.0,
            1.0,
            2.0 * lo,
            3.0 * lo * lo,
            1.0,
            hi,
            hi * hi,
            hi * hi * hi,
            0.0,
            1.0,
            2.0 * hi,
            3.0 * hi * hi,
        ],
    )
}

pub fn smooth_coefficients(delta: f64) -> Result<SmoothWeightConfig> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "delta must lie in (0, 0.5), got {delta}"
        )));
    }
    let d = knot_matrix(delta);
    let ratio = (1.0 - 2.0 * delta) / (1.0 + 2.0 * delta);
    let slope = 4.0 / (1.0 + 2.0 * delta).powi(2);
    let a = linalg::solve(&d, &[1.0, 0.0, ratio, -slope]).ok_or(Error::SingularMatrix)?;
    let b = linalg::solve(&d, &[ratio, slope, 1.0, 0.0]).ok_or(Error::SingularMatrix)?;
    Ok(SmoothWeightConfig {
        delta,
        a: [a[0], a[1], a[2], a[3]],
        b: [b[0], b[1], b[2], b[3]],
    })
}

fn cubic(c: &[f64; 4], e: f64) -> f64 {
    c[0] + e * (c[1] + e * (c[2] + e * c[3]))
}

impl SmoothWeightConfig {
    pub fn in_patch(&self, e: f64) -> bool {
        e >= 0.5 - self.delta && e <= 0.5 + self.delta
    }

    /// Smoothed treated-arm weight.
    pub fn eta1(&self, e: f64) -> f64 {
        if self.in_patch(e) {
            // the cubic peaks at exactly 1 on the flat knot; rounding can overshoot
            cubic(&self.a, e).min(1.0)
        } else {
            raw_weight(e, 1)
        }
    }

    /// Smoothed control-arm weight.
    pub fn eta0(&self, e: f64) -> f64 {
        if self.in_patch(e) {
            cubic(&self.b, e).min(1.0)
        } else {
            raw_weight(e, 0)
        }
    }

    pub fn weight(&self, e: f64, z: u8) -> f64 {
        if z == 1 {
            self.eta1(e)
        } else {
            self.eta0(e)
        }
    }
}

fn check_score(e: f64) -> Result<()> {
    if e > 0.0 && e < 1.0 {
        Ok(())
    } else {
        Err(Error::DomainError(e))
    }
}

#[inline]
pub(crate) fn raw_weight(e: f64, z: u8) -> f64 {
    (1.0 - e).min(e) * inverse_probability(e, z)
}

#[inline]
fn inverse_probability(e: f64, z: u8) -> f64 {
    let z = z as f64;
    z / e + (1.0 - z) / (1.0 - e)
}

/// Matching weight; smoothed when `cfg` is given.
pub fn matching_weight(e: f64, z: u8, cfg: Option<&SmoothWeightConfig>) -> Result<f64> {
    check_score(e)?;
    Ok(match cfg {
        Some(c) => c.weight(e, z),
        None => raw_weight(e, z),
    })
}

/// Weight targeting the treated: `1` for treated, `e / (1 - e)` for controls.
pub fn att_weight(e: f64, z: u8) -> Result<f64> {
    check_score(e)?;
    Ok(if z == 1 { 1.0 } else { e / (1.0 - e) })
}

pub fn ipw_weight(e: f64, z: u8) -> Result<f64> {
    check_score(e)?;
    Ok(inverse_probability(e, z))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffectiveSampleSizes {
    pub treated: f64,
    pub control: f64,
    pub total: f64,
}

/// Per-arm weight totals `Σ W_i Z_i` and `Σ W_i (1 - Z_i)`.
pub fn effective_sample_sizes(
    d: &ObservationalDataset,
    weights: &[f64],
) -> Result<EffectiveSampleSizes> {
    if weights.len() != d.n() {
        return Err(Error::InvalidArgument(format!(
            "{} weights for {} subjects",
            weights.len(),
            d.n()
        )));
    }
    let mut treated = 0.0;
    let mut control = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        if !(w >= 0.0) {
            return Err(Error::NegativeWeight { index: i, value: w });
        }
        if d.is_treated(i) {
            treated += w;
        } else {
            control += w;
        }
    }
    Ok(EffectiveSampleSizes {
        treated,
        control,
        total: treated + control,
    })
}

/// Smoothed matching weights for every subject.
pub fn matching_weights(
    d: &ObservationalDataset,
    scores: &[f64],
    cfg: &SmoothWeightConfig,
) -> Result<Vec<f64>> {
    scores
        .iter()
        .zip(d.treatments())
        .map(|(&e, &z)| matching_weight(e, z, Some(cfg)))
        .collect()
}
