//! Treatment-effect estimators.
//!
//! Weighting estimators (matching weights, inverse probability weights and
//! their augmented forms) are written as stacked estimating equations whose
//! last block is the logistic score, so the sandwich covariance carries the
//! propensity-model uncertainty. Propensity parameters are solved first, the
//! remaining blocks in closed form, and the sandwich is taken over the whole
//! stack.

mod augmented;
mod matching;
mod regression;
mod stratified;
mod weighting;

use serde::{Serialize, Serializer};

use crate::data::ObservationalDataset;
use crate::error::{Error, Result};
use crate::propensity::{self, expit, linear_predictor, SCORE_FLOOR};

pub use augmented::{
    estimate_dr_ipw, estimate_dr_mw, fit_outcome_models, DrIpwSystem, DrMwSystem,
    OutcomeModelFit,
};
pub use matching::{estimate_matched, greedy_caliper_match, MatchResult};
pub use regression::estimate_outcome_regression;
pub use stratified::estimate_stratified;
pub use weighting::{
    estimate_ipw, estimate_mw, plug_in_variance_prop2, weighted_mean_difference, ArmWeight,
    WeightedMeansSystem,
};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959964;

/// IPW weights above this produce a warning.
pub const EXTREME_IPW_WEIGHT: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorId {
    OutcomeRegression,
    Stratified,
    Matched,
    Ipw,
    DrIpw,
    Mw,
    DrMw,
}

impl EstimatorId {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorId::OutcomeRegression => "ols",
            EstimatorId::Stratified => "stratified",
            EstimatorId::Matched => "matched",
            EstimatorId::Ipw => "ipw",
            EstimatorId::DrIpw => "dr-ipw",
            EstimatorId::Mw => "mw",
            EstimatorId::DrMw => "dr-mw",
        }
    }
}

impl Serialize for EstimatorId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

/// A point estimate with its standard error and 95% Wald interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectEstimate {
    pub estimator: EstimatorId,
    pub delta_hat: f64,
    pub se: f64,
    pub ci95: [f64; 2],
    pub ess_treated: f64,
    pub ess_control: f64,
    pub n: usize,
    #[serde(skip)]
    pub converged: bool,
    #[serde(skip)]
    pub warnings: Vec<String>,
}

impl EffectEstimate {
    pub(crate) fn new(
        estimator: EstimatorId,
        delta_hat: f64,
        se: f64,
        ess: (f64, f64),
        n: usize,
    ) -> Self {
        Self {
            estimator,
            delta_hat,
            se,
            ci95: [delta_hat - Z_95 * se, delta_hat + Z_95 * se],
            ess_treated: ess.0,
            ess_control: ess.1,
            n,
            converged: true,
            warnings: Vec::new(),
        }
    }

    pub fn ess_total(&self) -> f64 {
        self.ess_treated + self.ess_control
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.ci95[0] <= truth && truth <= self.ci95[1]
    }

    /// Two-sided level-0.05 Wald test of a zero effect.
    pub fn rejects_zero(&self) -> bool {
        self.se > 0.0 && (self.delta_hat / self.se).abs() > Z_95
    }
}

/// How the propensity score is obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum PropensityModel {
    /// Logistic regression on these covariate columns; its score equations
    /// join the stacked system.
    Logistic(Vec<usize>),
    /// Scores treated as known constants.
    Known(Vec<f64>),
}

impl From<Vec<usize>> for PropensityModel {
    fn from(columns: Vec<usize>) -> Self {
        PropensityModel::Logistic(columns)
    }
}

impl From<&[usize]> for PropensityModel {
    fn from(columns: &[usize]) -> Self {
        PropensityModel::Logistic(columns.to_vec())
    }
}

impl PropensityModel {
    /// Number of parameters the model adds to a stacked system.
    pub fn dim(&self) -> usize {
        match self {
            PropensityModel::Logistic(cols) => cols.len(),
            PropensityModel::Known(_) => 0,
        }
    }

    /// Fitted parameters and scores.
    pub fn fit(&self, d: &ObservationalDataset) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            PropensityModel::Logistic(cols) => {
                let fit = propensity::fit_logistic(d, cols)?;
                Ok((fit.beta, fit.fitted))
            }
            PropensityModel::Known(e) => {
                if e.len() != d.n() {
                    return Err(Error::InvalidArgument(format!(
                        "{} known scores for {} subjects",
                        e.len(),
                        d.n()
                    )));
                }
                if let Some(&bad) = e.iter().find(|&&v| !(v > SCORE_FLOOR && v < 1.0 - SCORE_FLOOR))
                {
                    return Err(Error::DomainError(bad));
                }
                Ok((Vec::new(), e.clone()))
            }
        }
    }
}

/// The propensity part of a stacked system, occupying `theta[offset..]`.
#[derive(Clone, Copy)]
pub(crate) struct PsBlock<'a> {
    pub d: &'a ObservationalDataset,
    pub model: &'a PropensityModel,
    pub offset: usize,
}

impl PsBlock<'_> {
    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn score(&self, theta: &[f64], i: usize) -> f64 {
        match self.model {
            PropensityModel::Logistic(cols) => {
                expit(linear_predictor(self.d.x(i), cols, &theta[self.offset..]))
            }
            PropensityModel::Known(e) => e[i],
        }
    }

    /// Writes the logistic score `(Z_i - e_i) X_i` into `out[offset..]`.
    pub fn write_score(&self, e: f64, i: usize, out: &mut [f64]) {
        if let PropensityModel::Logistic(cols) = self.model {
            let x = self.d.x(i);
            let r = self.d.z(i) - e;
            for (o, &j) in out[self.offset..].iter_mut().zip(cols) {
                *o = r * x[j];
            }
        }
    }

    pub fn indices(&self) -> Vec<usize> {
        (self.offset..self.offset + self.dim()).collect()
    }
}

/// Block order with the propensity block first, then the listed blocks.
pub(crate) fn ps_first_order(ps: &PsBlock<'_>, rest: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    let mut order = Vec::with_capacity(rest.len() + 1);
    if ps.dim() > 0 {
        order.push(ps.indices());
    }
    order.extend(rest);
    order
}

pub(crate) fn arm_counts_f64(d: &ObservationalDataset) -> (f64, f64) {
    let (t, c) = d.arm_counts();
    (t as f64, c as f64)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Four subjects: Y = (3, 1, 5, 2), Z = (1, 0, 1, 0), e = (.2, .2, .8, .8).
    pub fn four() -> (ObservationalDataset, Vec<f64>) {
        let d = ObservationalDataset::new(
            vec![3.0, 1.0, 5.0, 2.0],
            vec![1, 0, 1, 0],
            vec![
                vec![1.0, 0.0],
                vec![1.0, 0.0],
                vec![1.0, 1.0],
                vec![1.0, 1.0],
            ],
            vec!["(intercept)".into(), "x".into()],
        )
        .unwrap();
        (d, vec![0.2, 0.2, 0.8, 0.8])
    }
}
