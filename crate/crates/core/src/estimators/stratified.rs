use crate::data::ObservationalDataset;
use crate::error::{Error, Result};

use super::{EffectEstimate, EstimatorId, PropensityModel};

/// Linear-interpolation sample quantile (R's default, type 7) of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// Subclassification on the estimated score.
///
/// Strata are cut at empirical quantiles of `ê` and are right-closed. The
/// estimate is `Σ_s (n_s / n_used)(ȳ1s - ȳ0s)` and the SE combines
/// within-stratum two-sample variances; propensity-model uncertainty is not
/// propagated. A stratum missing either arm is dropped with a warning.
pub fn estimate_stratified(
    d: &ObservationalDataset,
    model: &PropensityModel,
    n_strata: usize,
) -> Result<EffectEstimate> {
    if n_strata == 0 {
        return Err(Error::InvalidArgument("need at least one stratum".into()));
    }
    let (_, scores) = model.fit(d)?;
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    let cuts: Vec<f64> = (1..n_strata)
        .map(|s| quantile_sorted(&sorted, s as f64 / n_strata as f64))
        .collect();

    let mut treated: Vec<Vec<f64>> = vec![Vec::new(); n_strata];
    let mut control: Vec<Vec<f64>> = vec![Vec::new(); n_strata];
    for (i, &e) in scores.iter().enumerate() {
        let s = cuts.iter().filter(|&&c| e > c).count();
        if d.is_treated(i) {
            treated[s].push(d.outcomes()[i]);
        } else {
            control[s].push(d.outcomes()[i]);
        }
    }

    let mut warnings = Vec::new();
    let mut used = Vec::new();
    for s in 0..n_strata {
        if treated[s].is_empty() || control[s].is_empty() {
            if !(treated[s].is_empty() && control[s].is_empty()) {
                warnings.push(format!(
                    "stratum {} dropped: {} treated, {} control",
                    s + 1,
                    treated[s].len(),
                    control[s].len()
                ));
            }
            continue;
        }
        used.push(s);
    }
    if used.is_empty() {
        return Err(Error::AllStrataDropped);
    }
    let n_used: usize = used
        .iter()
        .map(|&s| treated[s].len() + control[s].len())
        .sum();
    let (mut delta, mut var) = (0.0, 0.0);
    let (mut ess_t, mut ess_c) = (0.0, 0.0);
    for &s in &used {
        let share = (treated[s].len() + control[s].len()) as f64 / n_used as f64;
        let (m1, v1) = mean_var(&treated[s]);
        let (m0, v0) = mean_var(&control[s]);
        delta += share * (m1 - m0);
        var += share * share * (v1 / treated[s].len() as f64 + v0 / control[s].len() as f64);
        ess_t += treated[s].len() as f64;
        ess_c += control[s].len() as f64;
    }
    let mut est = EffectEstimate::new(EstimatorId::Stratified, delta, var.sqrt(), (ess_t, ess_c), d.n());
    est.warnings = warnings;
    Ok(est)
}
