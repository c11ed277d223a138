//! Covariate balance diagnostics under matching weights.

use serde::{Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::ObservationalDataset;
use crate::error::{Error, Result};
use crate::estimators::{ArmWeight, PropensityModel, WeightedMeansSystem};
use crate::mestimation::{self, DEFAULT_JAC_STEP};
use crate::propensity::SmoothWeightConfig;

/// The function `g(X)` whose weighted arm means are compared.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Moment {
    Mean(String),
    SecondMoment(String),
    CrossProduct(String, String),
}

impl Moment {
    /// Parses `x1`, `x1^2` or `x1*x2`.
    pub fn parse(spec: &str) -> Result<Moment> {
        let spec = spec.trim();
        if let Some((a, b)) = spec.split_once('*') {
            return Ok(Moment::CrossProduct(a.trim().into(), b.trim().into()));
        }
        if let Some(a) = spec.strip_suffix("^2") {
            return Ok(Moment::SecondMoment(a.trim().into()));
        }
        if spec.is_empty() {
            return Err(Error::InvalidArgument("empty balance target".into()));
        }
        Ok(Moment::Mean(spec.into()))
    }

    pub fn tag(&self) -> String {
        match self {
            Moment::Mean(_) => "mean".into(),
            Moment::SecondMoment(_) => "second_moment".into(),
            Moment::CrossProduct(a, b) => format!("cross_product({a},{b})"),
        }
    }

    pub fn covariate(&self) -> String {
        match self {
            Moment::Mean(a) | Moment::SecondMoment(a) => a.clone(),
            Moment::CrossProduct(a, b) => format!("{a}*{b}"),
        }
    }

    /// `g(X_i)` for every subject.
    pub fn values(&self, d: &ObservationalDataset) -> Result<Vec<f64>> {
        Ok(match self {
            Moment::Mean(a) => d.column(d.column_index(a)?),
            Moment::SecondMoment(a) => d.column(d.column_index(a)?).iter().map(|v| v * v).collect(),
            Moment::CrossProduct(a, b) => {
                let (ja, jb) = (d.column_index(a)?, d.column_index(b)?);
                (0..d.n()).map(|i| d.covariate(i, ja) * d.covariate(i, jb)).collect()
            }
        })
    }
}

impl Serialize for Moment {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceResult {
    pub covariate: String,
    pub moment: Moment,
    pub b_hat: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
}

impl BalanceResult {
    pub fn rejects(&self, level: f64) -> bool {
        self.p_value < level
    }
}

/// Two-sided normal p-value.
pub fn two_sided_p(z: f64) -> f64 {
    let phi = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * (1.0 - phi.cdf(z.abs()))).clamp(0.0, 1.0)
}

/// Difference in matching-weighted arm means of `g(X)`, with a sandwich SE
/// that accounts for estimating the propensity score.
pub fn balance_test(
    d: &ObservationalDataset,
    model: &PropensityModel,
    moment: &Moment,
    cfg: &SmoothWeightConfig,
) -> Result<BalanceResult> {
    let values = moment.values(d)?;
    let (beta, _) = model.fit(d)?;
    let sys = WeightedMeansSystem::new(d, model, ArmWeight::Matching(*cfg), &values);
    let theta = sys.closed_form(&beta);
    let cov = mestimation::sandwich(&sys, &theta, DEFAULT_JAC_STEP)?;
    let b_hat = theta[0] - theta[1];
    let se = cov.contrast_variance(&[(0, 1.0), (1, -1.0)]).max(0.0).sqrt();
    let z = if se > 0.0 { b_hat / se } else { 0.0 };
    Ok(BalanceResult {
        covariate: moment.covariate(),
        moment: moment.clone(),
        b_hat,
        se,
        z,
        p_value: if se > 0.0 { two_sided_p(z) } else { 1.0 },
    })
}

/// Runs [`balance_test`] for each moment. The second element is a warning
/// when more than one test in twenty rejects at level 0.05.
pub fn balance_report(
    d: &ObservationalDataset,
    model: &PropensityModel,
    moments: &[Moment],
    cfg: &SmoothWeightConfig,
) -> Result<(Vec<BalanceResult>, Option<String>)> {
    let results = moments
        .iter()
        .map(|m| balance_test(d, model, m, cfg))
        .collect::<Result<Vec<_>>>()?;
    let rejected = results.iter().filter(|r| r.rejects(0.05)).count();
    let warning = (rejected * 20 > results.len()).then(|| {
        format!(
            "{rejected} of {} balance tests reject at 0.05; p-values are not adjusted for multiplicity",
            results.len()
        )
    });
    Ok((results, warning))
}

/// `|x̄1 - x̄0| / sqrt((s1² + s0²) / 2)` with weighted means and variances
/// (divisor `ΣW` per arm).
pub fn standardized_difference(
    d: &ObservationalDataset,
    weights: &[f64],
    covariate: &str,
) -> Result<f64> {
    if weights.len() != d.n() {
        return Err(Error::InvalidArgument(format!(
            "{} weights for {} subjects",
            weights.len(),
            d.n()
        )));
    }
    if let Some((i, &w)) = weights.iter().enumerate().find(|(_, &w)| !(w >= 0.0)) {
        return Err(Error::NegativeWeight { index: i, value: w });
    }
    let x = d.column(d.column_index(covariate)?);
    let arm = |t: bool| {
        let idx = || (0..d.n()).filter(move |&i| d.is_treated(i) == t);
        let sw: f64 = idx().map(|i| weights[i]).sum();
        let mean = idx().map(|i| weights[i] * x[i]).sum::<f64>() / sw;
        let var = idx().map(|i| weights[i] * (x[i] - mean).powi(2)).sum::<f64>() / sw;
        (mean, var)
    };
    let (m1, v1) = arm(true);
    let (m0, v0) = arm(false);
    let pooled = ((v1 + v0) / 2.0).sqrt();
    if !(pooled > 0.0) {
        return Err(Error::ZeroVariance(covariate.into()));
    }
    Ok((m1 - m0).abs() / pooled)
}
