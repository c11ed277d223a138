use crate::data::ObservationalDataset;
use crate::error::{Error, Result};
use crate::mestimation::{self, EstimatingSystem, DEFAULT_JAC_STEP};
use crate::propensity::{raw_weight, SmoothWeightConfig};

use super::{
    ps_first_order, EffectEstimate, EstimatorId, PropensityModel, PsBlock, EXTREME_IPW_WEIGHT,
};

/// Weight applied to each subject as a function of its score and arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArmWeight {
    /// Smoothed matching weight.
    Matching(SmoothWeightConfig),
    /// Raw matching weight with the kink at 0.5; not differentiable there.
    RawMatching,
    /// `z / e + (1 - z) / (1 - e)`.
    Inverse,
}

impl ArmWeight {
    #[inline]
    pub fn weight(&self, e: f64, z: u8) -> f64 {
        match self {
            ArmWeight::Matching(cfg) => cfg.weight(e, z),
            ArmWeight::RawMatching => raw_weight(e, z),
            ArmWeight::Inverse => {
                if z == 1 {
                    1.0 / e
                } else {
                    1.0 / (1.0 - e)
                }
            }
        }
    }
}

/// `θ = (μ1, μ0, β)` with
/// `φ_i = (W_i Z_i (v_i - μ1), W_i (1 - Z_i)(v_i - μ0), score_i)`.
///
/// With `normalized = false` the mean rows become the Horvitz-Thompson form
/// `W_i Z_i v_i - μ1` and `W_i (1 - Z_i) v_i - μ0`.
pub struct WeightedMeansSystem<'a> {
    ps: PsBlock<'a>,
    weight: ArmWeight,
    values: &'a [f64],
    normalized: bool,
}

impl<'a> WeightedMeansSystem<'a> {
    pub fn new(
        d: &'a ObservationalDataset,
        model: &'a PropensityModel,
        weight: ArmWeight,
        values: &'a [f64],
    ) -> Self {
        Self {
            ps: PsBlock {
                d,
                model,
                offset: 2,
            },
            weight,
            values,
            normalized: true,
        }
    }

    pub fn unnormalized(mut self) -> Self {
        self.normalized = false;
        self
    }

    /// Closed-form root given fitted propensity parameters.
    pub fn closed_form(&self, beta: &[f64]) -> Vec<f64> {
        let d = self.ps.d;
        let mut theta = vec![0.0, 0.0];
        theta.extend_from_slice(beta);
        let (mut s1, mut w1, mut s0, mut w0) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..d.n() {
            let e = self.ps.score(&theta, i);
            let z = d.treatments()[i];
            let w = self.weight.weight(e, z);
            if z == 1 {
                s1 += w * self.values[i];
                w1 += w;
            } else {
                s0 += w * self.values[i];
                w0 += w;
            }
        }
        if self.normalized {
            theta[0] = s1 / w1;
            theta[1] = s0 / w0;
        } else {
            theta[0] = s1 / d.n() as f64;
            theta[1] = s0 / d.n() as f64;
        }
        theta
    }
}

impl EstimatingSystem for WeightedMeansSystem<'_> {
    fn dim(&self) -> usize {
        2 + self.ps.dim()
    }

    fn n(&self) -> usize {
        self.ps.d.n()
    }

    fn contribution(&self, theta: &[f64], i: usize, out: &mut [f64]) {
        let d = self.ps.d;
        let e = self.ps.score(theta, i);
        let z = d.treatments()[i];
        let w = self.weight.weight(e, z);
        let v = self.values[i];
        let (t, c) = if z == 1 { (1.0, 0.0) } else { (0.0, 1.0) };
        if self.normalized {
            out[0] = w * t * (v - theta[0]);
            out[1] = w * c * (v - theta[1]);
        } else {
            out[0] = w * t * v - theta[0];
            out[1] = w * c * v - theta[1];
        }
        self.ps.write_score(e, i, out);
    }

    fn solve_order(&self) -> Option<Vec<Vec<usize>>> {
        Some(ps_first_order(&self.ps, vec![vec![0], vec![1]]))
    }
}

/// Result of a weighted two-arm comparison before it is labelled.
pub(crate) struct WeightedFit {
    pub theta: Vec<f64>,
    pub se: f64,
    pub weights: Vec<f64>,
    pub ess: (f64, f64),
}

pub(crate) fn fit_weighted_means(
    d: &ObservationalDataset,
    model: &PropensityModel,
    weight: ArmWeight,
    values: &[f64],
    normalized: bool,
) -> Result<WeightedFit> {
    let (beta, scores) = model.fit(d)?;
    let mut sys = WeightedMeansSystem::new(d, model, weight, values);
    if !normalized {
        sys = sys.unnormalized();
    }
    let theta = sys.closed_form(&beta);
    let cov = mestimation::sandwich(&sys, &theta, DEFAULT_JAC_STEP)?;
    let se = cov.contrast_variance(&[(0, 1.0), (1, -1.0)]).sqrt();
    let weights: Vec<f64> = scores
        .iter()
        .zip(d.treatments())
        .map(|(&e, &z)| weight.weight(e, z))
        .collect();
    let mut ess = (0.0, 0.0);
    for (w, &z) in weights.iter().zip(d.treatments()) {
        if z == 1 {
            ess.0 += w;
        } else {
            ess.1 += w;
        }
    }
    Ok(WeightedFit {
        theta,
        se,
        weights,
        ess,
    })
}

/// Matching-weight estimator: difference of matching-weighted arm means with
/// a sandwich SE from the stacked `(μ1, μ0, β)` system.
pub fn estimate_mw(
    d: &ObservationalDataset,
    model: &PropensityModel,
    cfg: &SmoothWeightConfig,
) -> Result<EffectEstimate> {
    let fit = fit_weighted_means(d, model, ArmWeight::Matching(*cfg), d.outcomes(), true)?;
    Ok(EffectEstimate::new(
        EstimatorId::Mw,
        fit.theta[0] - fit.theta[1],
        fit.se,
        fit.ess,
        d.n(),
    ))
}

/// Inverse probability weighting. `normalized` selects the Hájek form (arm
/// weights rescaled to sum to one); otherwise Horvitz-Thompson.
///
/// ESS fields report the per-arm weight totals.
pub fn estimate_ipw(
    d: &ObservationalDataset,
    model: &PropensityModel,
    normalized: bool,
) -> Result<EffectEstimate> {
    let fit = fit_weighted_means(d, model, ArmWeight::Inverse, d.outcomes(), normalized)?;
    let mut est = EffectEstimate::new(
        EstimatorId::Ipw,
        fit.theta[0] - fit.theta[1],
        fit.se,
        fit.ess,
        d.n(),
    );
    let max_w = fit.weights.iter().fold(0.0f64, |m, &w| m.max(w));
    if max_w > EXTREME_IPW_WEIGHT {
        est.warnings
            .push(format!("extreme inverse probability weight {max_w:.1}"));
    }
    Ok(est)
}

/// `Σ W Z Y / Σ W Z - Σ W (1-Z) Y / Σ W (1-Z)` for arbitrary weights.
pub fn weighted_mean_difference(d: &ObservationalDataset, weights: &[f64]) -> Result<f64> {
    if weights.len() != d.n() {
        return Err(Error::InvalidArgument("weight length mismatch".into()));
    }
    let (mut s1, mut w1, mut s0, mut w0) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..d.n() {
        let (w, y) = (weights[i], d.outcomes()[i]);
        if d.is_treated(i) {
            s1 += w * y;
            w1 += w;
        } else {
            s0 += w * y;
            w0 += w;
        }
    }
    Ok(s1 / w1 - s0 / w0)
}

/// Plug-in variance of the matching-weight estimator when the scores are
/// treated as known:
///
/// `n⁻¹ Σ {Z [m (Y - μ1)]² / e² + (1-Z) [m (Y - μ0)]² / (1-e)²} / (n⁻¹ Σ m)²`
/// divided by `n`, with `m = min(1 - e, e)`.
pub fn plug_in_variance_prop2(
    d: &ObservationalDataset,
    scores: &[f64],
    mu1: f64,
    mu0: f64,
) -> Result<f64> {
    if scores.len() != d.n() {
        return Err(Error::InvalidArgument("score length mismatch".into()));
    }
    let n = d.n() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &e) in scores.iter().enumerate() {
        if !(e > 0.0 && e < 1.0) {
            return Err(Error::DomainError(e));
        }
        let m = (1.0 - e).min(e);
        let y = d.outcomes()[i];
        num += if d.is_treated(i) {
            (m * (y - mu1)).powi(2) / (e * e)
        } else {
            (m * (y - mu0)).powi(2) / ((1.0 - e) * (1.0 - e))
        };
        den += m;
    }
    let v = (num / n) / (den / n).powi(2);
    Ok(v / n)
}

#[cfg(test)]
mod tests {
    use super::super::fixtures;
    use super::*;
    use crate::mestimation::{solve_system, SolveOptions};

    #[test]
    fn four_subject_fixture_mw() {
        let (d, e) = fixtures::four();
        let est = estimate_mw(&d, &PropensityModel::Known(e), &SmoothWeightConfig::default())
            .unwrap();
        assert!((est.delta_hat - 1.6).abs() < 1e-12);
        assert!((est.ess_treated - 1.25).abs() < 1e-12);
        assert!((est.ess_control - 1.25).abs() < 1e-12);
        assert!((est.ci95[1] - est.delta_hat - Z_95 * est.se).abs() < 1e-12);
    }

    use super::super::Z_95;

    #[test]
    fn four_subject_fixture_ipw() {
        let (d, e) = fixtures::four();
        let est = estimate_ipw(&d, &PropensityModel::Known(e), true).unwrap();
        assert!((est.delta_hat - 1.6).abs() < 1e-12);
        assert!((est.ess_treated - 6.25).abs() < 1e-12);
    }

    #[test]
    fn solver_matches_closed_form_on_fixture() {
        let (d, e) = fixtures::four();
        let model = PropensityModel::Known(e);
        let sys = WeightedMeansSystem::new(
            &d,
            &model,
            ArmWeight::Matching(SmoothWeightConfig::default()),
            d.outcomes(),
        );
        let sol = solve_system(&sys, &[0.0, 0.0], &SolveOptions::default()).unwrap();
        assert!((sol.theta[0] - 3.4).abs() < 1e-10);
        assert!((sol.theta[1] - 1.8).abs() < 1e-10);
    }

    #[test]
    fn intercept_only_gives_difference_of_means() {
        let (d, _) = fixtures::four();
        let est = estimate_mw(&d, &PropensityModel::Logistic(vec![0]), &Default::default())
            .unwrap();
        assert!((est.delta_hat - (4.0 - 1.5)).abs() < 1e-10);
        let ipw = estimate_ipw(&d, &PropensityModel::Logistic(vec![0]), true).unwrap();
        assert!((ipw.delta_hat - 2.5).abs() < 1e-10);
    }

    #[test]
    fn horvitz_thompson_known_scores() {
        let (d, _) = fixtures::four();
        let e = vec![0.5; 4];
        let ht = estimate_ipw(&d, &PropensityModel::Known(e), false).unwrap();
        // n⁻¹ Σ 2 Z Y - n⁻¹ Σ 2 (1-Z) Y = (16 - 6) / 4
        assert!((ht.delta_hat - 2.5).abs() < 1e-12);
    }

    #[test]
    fn extreme_ipw_weights_warn() {
        let (d, _) = fixtures::four();
        let est = estimate_ipw(&d, &PropensityModel::Known(vec![0.005, 0.2, 0.8, 0.8]), true)
            .unwrap();
        assert_eq!(est.warnings.len(), 1);
    }

    #[test]
    fn plug_in_examples() {
        let (d, _) = fixtures::four();
        let constant = d.map_outcomes(|_| 7.0);
        assert_eq!(
            plug_in_variance_prop2(&constant, &[0.2, 0.3, 0.6, 0.9], 7.0, 7.0).unwrap(),
            0.0
        );
        // e = 0.5 reduces to (4/n) n⁻¹ Σ [Z (Y-μ1)² + (1-Z)(Y-μ0)²]
        let v = plug_in_variance_prop2(&d, &[0.5; 4], 4.0, 1.5).unwrap();
        let ss = 1.0 + 0.25 + 1.0 + 0.25;
        assert!((v - 4.0 / 4.0 * ss / 4.0).abs() < 1e-12);
        assert!(plug_in_variance_prop2(&d, &[0.5, 0.5, 1.0, 0.5], 0.0, 0.0).is_err());
    }
}
