//! Augmented (doubly robust) estimators and the arm-specific outcome models
//! they rely on.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::data::ObservationalDataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::mestimation::{self, EstimatingSystem, DEFAULT_JAC_STEP};
use crate::propensity::{check_columns, SmoothWeightConfig};

use super::{ps_first_order, EffectEstimate, EstimatorId, PropensityModel, PsBlock};

/// Linear outcome models fitted separately in each arm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeModelFit {
    pub alpha1: Vec<f64>,
    pub alpha0: Vec<f64>,
    pub columns: Vec<usize>,
}

impl OutcomeModelFit {
    pub fn predict(&self, d: &ObservationalDataset, i: usize) -> (f64, f64) {
        let x = d.x(i);
        (
            dot(x, &self.columns, &self.alpha1),
            dot(x, &self.columns, &self.alpha0),
        )
    }
}

#[inline]
fn dot(x: &[f64], cols: &[usize], coef: &[f64]) -> f64 {
    cols.iter().zip(coef).map(|(&j, a)| x[j] * a).sum()
}

/// Ordinary least squares of Y on the given columns within each arm.
pub fn fit_outcome_models(d: &ObservationalDataset, columns: &[usize]) -> Result<OutcomeModelFit> {
    check_columns(d, columns)?;
    let k = columns.len();
    let fit_arm = |treated: bool| -> Result<Vec<f64>> {
        let rows: Vec<usize> = (0..d.n()).filter(|&i| d.is_treated(i) == treated).collect();
        if rows.len() <= k {
            return Err(Error::TooFewObservations(format!(
                "{} subjects in arm {} for {k} outcome-model columns",
                rows.len(),
                treated as u8
            )));
        }
        let x = DMatrix::from_fn(rows.len(), k, |r, c| d.covariate(rows[r], columns[c]));
        let y: Vec<f64> = rows.iter().map(|&i| d.outcomes()[i]).collect();
        linalg::least_squares(&x, &y)
    };
    Ok(OutcomeModelFit {
        alpha1: fit_arm(true)?,
        alpha0: fit_arm(false)?,
        columns: columns.to_vec(),
    })
}

/// Writes the two least-squares score blocks at `out[a1..]` and `out[a0..]`
/// and returns the arm predictions `(m1, m0)`.
#[inline]
fn outcome_scores(
    d: &ObservationalDataset,
    cols: &[usize],
    theta: &[f64],
    a1: usize,
    a0: usize,
    i: usize,
    out: &mut [f64],
) -> (f64, f64) {
    let k = cols.len();
    let x = d.x(i);
    let m1 = dot(x, cols, &theta[a1..a1 + k]);
    let m0 = dot(x, cols, &theta[a0..a0 + k]);
    let y = d.outcomes()[i];
    let (r1, r0) = if d.is_treated(i) {
        (y - m1, 0.0)
    } else {
        (0.0, y - m0)
    };
    for (c, &j) in cols.iter().enumerate() {
        out[a1 + c] = r1 * x[j];
        out[a0 + c] = r0 * x[j];
    }
    (m1, m0)
}

/// `θ = (μ1, μ2, μ3, α1, α0, β)`:
///
/// ```text
/// W (m1 - m0 - μ1)
/// W Z (Y - m1 - μ2)
/// W (1 - Z)(Y - m0 - μ3)
/// Z X (Y - X α1)
/// (1 - Z) X (Y - X α0)
/// (Z - e) X
/// ```
///
/// and `Δ = μ1 + μ2 - μ3`.
pub struct DrMwSystem<'a> {
    d: &'a ObservationalDataset,
    ps: PsBlock<'a>,
    outcome_columns: &'a [usize],
    cfg: SmoothWeightConfig,
}

impl<'a> DrMwSystem<'a> {
    pub fn new(
        d: &'a ObservationalDataset,
        model: &'a PropensityModel,
        outcome_columns: &'a [usize],
        cfg: SmoothWeightConfig,
    ) -> Self {
        Self {
            d,
            ps: PsBlock {
                d,
                model,
                offset: 3 + 2 * outcome_columns.len(),
            },
            outcome_columns,
            cfg,
        }
    }

    fn a1(&self) -> usize {
        3
    }

    fn a0(&self) -> usize {
        3 + self.outcome_columns.len()
    }

    /// Closed-form root given fitted nuisance parameters.
    pub fn closed_form(&self, outcome: &OutcomeModelFit, beta: &[f64]) -> Vec<f64> {
        let mut theta = vec![0.0; 3];
        theta.extend_from_slice(&outcome.alpha1);
        theta.extend_from_slice(&outcome.alpha0);
        theta.extend_from_slice(beta);
        let d = self.d;
        let (mut sw, mut sw1, mut sw0) = (0.0, 0.0, 0.0);
        let (mut aug, mut res1, mut res0) = (0.0, 0.0, 0.0);
        for i in 0..d.n() {
            let e = self.ps.score(&theta, i);
            let z = d.treatments()[i];
            let w = self.cfg.weight(e, z);
            let (m1, m0) = outcome.predict(d, i);
            let y = d.outcomes()[i];
            sw += w;
            aug += w * (m1 - m0);
            if z == 1 {
                sw1 += w;
                res1 += w * (y - m1);
            } else {
                sw0 += w;
                res0 += w * (y - m0);
            }
        }
        theta[0] = aug / sw;
        theta[1] = res1 / sw1;
        theta[2] = res0 / sw0;
        theta
    }
}

impl EstimatingSystem for DrMwSystem<'_> {
    fn dim(&self) -> usize {
        3 + 2 * self.outcome_columns.len() + self.ps.dim()
    }

    fn n(&self) -> usize {
        self.d.n()
    }

    fn contribution(&self, theta: &[f64], i: usize, out: &mut [f64]) {
        let d = self.d;
        let (m1, m0) =
            outcome_scores(d, self.outcome_columns, theta, self.a1(), self.a0(), i, out);
        let e = self.ps.score(theta, i);
        let z = d.treatments()[i];
        let w = self.cfg.weight(e, z);
        let y = d.outcomes()[i];
        out[0] = w * (m1 - m0 - theta[0]);
        if z == 1 {
            out[1] = w * (y - m1 - theta[1]);
            out[2] = 0.0;
        } else {
            out[1] = 0.0;
            out[2] = w * (y - m0 - theta[2]);
        }
        self.ps.write_score(e, i, out);
    }

    fn solve_order(&self) -> Option<Vec<Vec<usize>>> {
        let k = self.outcome_columns.len();
        Some(ps_first_order(
            &self.ps,
            vec![
                (self.a1()..self.a1() + k).collect(),
                (self.a0()..self.a0() + k).collect(),
                vec![0],
                vec![1],
                vec![2],
            ],
        ))
    }
}

/// Augmented matching-weight estimator.
pub fn estimate_dr_mw(
    d: &ObservationalDataset,
    model: &PropensityModel,
    outcome_columns: &[usize],
    cfg: &SmoothWeightConfig,
) -> Result<EffectEstimate> {
    let outcome = fit_outcome_models(d, outcome_columns)?;
    let (beta, scores) = model.fit(d)?;
    let sys = DrMwSystem::new(d, model, outcome_columns, *cfg);
    let theta = sys.closed_form(&outcome, &beta);
    let cov = mestimation::sandwich(&sys, &theta, DEFAULT_JAC_STEP)?;
    let se = cov
        .contrast_variance(&[(0, 1.0), (1, 1.0), (2, -1.0)])
        .sqrt();
    let mut ess = (0.0, 0.0);
    for (&e, &z) in scores.iter().zip(d.treatments()) {
        let w = cfg.weight(e, z);
        if z == 1 {
            ess.0 += w;
        } else {
            ess.1 += w;
        }
    }
    Ok(EffectEstimate::new(
        EstimatorId::DrMw,
        theta[0] + theta[1] - theta[2],
        se,
        ess,
        d.n(),
    ))
}

/// `θ = (μ1, μ0, α1, α0, β)` for augmented IPW:
///
/// ```text
/// Z Y / e - (Z - e) m1 / e - μ1
/// (1 - Z) Y / (1 - e) + (Z - e) m0 / (1 - e) - μ0
/// ```
///
/// followed by the outcome and propensity scores.
pub struct DrIpwSystem<'a> {
    d: &'a ObservationalDataset,
    ps: PsBlock<'a>,
    outcome_columns: &'a [usize],
}

impl<'a> DrIpwSystem<'a> {
    pub fn new(
        d: &'a ObservationalDataset,
        model: &'a PropensityModel,
        outcome_columns: &'a [usize],
    ) -> Self {
        Self {
            d,
            ps: PsBlock {
                d,
                model,
                offset: 2 + 2 * outcome_columns.len(),
            },
            outcome_columns,
        }
    }

    fn a1(&self) -> usize {
        2
    }

    fn a0(&self) -> usize {
        2 + self.outcome_columns.len()
    }

    fn terms(e: f64, z: f64, y: f64, m1: f64, m0: f64) -> (f64, f64) {
        (
            z * y / e - (z - e) * m1 / e,
            (1.0 - z) * y / (1.0 - e) + (z - e) * m0 / (1.0 - e),
        )
    }

    pub fn closed_form(&self, outcome: &OutcomeModelFit, beta: &[f64]) -> Vec<f64> {
        let mut theta = vec![0.0; 2];
        theta.extend_from_slice(&outcome.alpha1);
        theta.extend_from_slice(&outcome.alpha0);
        theta.extend_from_slice(beta);
        let d = self.d;
        let (mut s1, mut s0) = (0.0, 0.0);
        for i in 0..d.n() {
            let e = self.ps.score(&theta, i);
            let (m1, m0) = outcome.predict(d, i);
            let (t1, t0) = Self::terms(e, d.z(i), d.outcomes()[i], m1, m0);
            s1 += t1;
            s0 += t0;
        }
        theta[0] = s1 / d.n() as f64;
        theta[1] = s0 / d.n() as f64;
        theta
    }
}

impl EstimatingSystem for DrIpwSystem<'_> {
    fn dim(&self) -> usize {
        2 + 2 * self.outcome_columns.len() + self.ps.dim()
    }

    fn n(&self) -> usize {
        self.d.n()
    }

    fn contribution(&self, theta: &[f64], i: usize, out: &mut [f64]) {
        let d = self.d;
        let (m1, m0) =
            outcome_scores(d, self.outcome_columns, theta, self.a1(), self.a0(), i, out);
        let e = self.ps.score(theta, i);
        let (t1, t0) = Self::terms(e, d.z(i), d.outcomes()[i], m1, m0);
        out[0] = t1 - theta[0];
        out[1] = t0 - theta[1];
        self.ps.write_score(e, i, out);
    }

    fn solve_order(&self) -> Option<Vec<Vec<usize>>> {
        let k = self.outcome_columns.len();
        Some(ps_first_order(
            &self.ps,
            vec![
                (self.a1()..self.a1() + k).collect(),
                (self.a0()..self.a0() + k).collect(),
                vec![0],
                vec![1],
            ],
        ))
    }
}

/// Augmented inverse probability weighting. ESS fields report per-arm
/// inverse-weight totals.
pub fn estimate_dr_ipw(
    d: &ObservationalDataset,
    model: &PropensityModel,
    outcome_columns: &[usize],
) -> Result<EffectEstimate> {
    let outcome = fit_outcome_models(d, outcome_columns)?;
    let (beta, scores) = model.fit(d)?;
    let sys = DrIpwSystem::new(d, model, outcome_columns);
    let theta = sys.closed_form(&outcome, &beta);
    let cov = mestimation::sandwich(&sys, &theta, DEFAULT_JAC_STEP)?;
    let se = cov.contrast_variance(&[(0, 1.0), (1, -1.0)]).sqrt();
    let mut ess = (0.0, 0.0);
    for (&e, &z) in scores.iter().zip(d.treatments()) {
        if z == 1 {
            ess.0 += 1.0 / e;
        } else {
            ess.1 += 1.0 / (1.0 - e);
        }
    }
    Ok(EffectEstimate::new(
        EstimatorId::DrIpw,
        theta[0] - theta[1],
        se,
        ess,
        d.n(),
    ))
}
