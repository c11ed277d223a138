use nalgebra::{DMatrix, DVector};

use crate::data::ObservationalDataset;
use crate::error::Result;
use crate::linalg::{inverse, least_squares};
use crate::propensity::check_columns;

use super::{arm_counts_f64, EffectEstimate, EstimatorId};

/// OLS of `Y` on `(Z, X[outcome_cols])`; the effect is the treatment
/// coefficient. Standard errors are heteroskedasticity-robust (HC0).
pub fn estimate_outcome_regression(
    d: &ObservationalDataset,
    outcome_cols: &[usize],
) -> Result<EffectEstimate> {
    check_columns(d, outcome_cols)?;
    let k = outcome_cols.len() + 1;
    let x = DMatrix::from_fn(d.n(), k, |i, j| {
        if j == 0 {
            d.z(i)
        } else {
            d.covariate(i, outcome_cols[j - 1])
        }
    });
    let coef = least_squares(&x, d.outcomes())?;
    let resid = DVector::from_column_slice(d.outcomes()) - &x * DVector::from_column_slice(&coef);
    let bread = inverse(&(x.transpose() * &x)).ok_or(crate::Error::SingularMatrix)?;
    let mut meat = DMatrix::<f64>::zeros(k, k);
    for i in 0..d.n() {
        let r2 = resid[i] * resid[i];
        for a in 0..k {
            for b in 0..k {
                meat[(a, b)] += r2 * x[(i, a)] * x[(i, b)];
            }
        }
    }
    let cov = &bread * meat * &bread;
    Ok(EffectEstimate::new(
        EstimatorId::OutcomeRegression,
        coef[0],
        cov[(0, 0)].max(0.0).sqrt(),
        arm_counts_f64(d),
        d.n(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mestimation::{fit, FnSystem, SolveOptions};

    #[test]
    fn recovers_exact_linear_effect() {
        let (d, _) = super::super::fixtures::four();
        // Y = 1 + 2x + 3z has no noise
        let y: Vec<f64> = (0..4).map(|i| 1.0 + 2.0 * d.covariate(i, 1) + 3.0 * d.z(i)).collect();
        let rows = (0..4).map(|i| d.x(i).to_vec()).collect();
        let d = ObservationalDataset::new(y, d.treatments().to_vec(), rows, d.covariate_names().to_vec())
            .unwrap();
        let est = estimate_outcome_regression(&d, &[0, 1]).unwrap();
        assert!((est.delta_hat - 3.0).abs() < 1e-10);
        assert!(est.se < 1e-6);
    }

    #[test]
    fn hc0_matches_stacked_sandwich() {
        let d = ObservationalDataset::new(
            vec![2.0, 0.5, 3.1, 1.2, 4.4, 0.9, 2.8, 1.7],
            vec![1, 0, 1, 0, 1, 0, 1, 0],
            (0..8).map(|i| vec![1.0, (i as f64 * 0.7).sin()]).collect(),
            vec!["(intercept)".into(), "x".into()],
        )
        .unwrap();
        let est = estimate_outcome_regression(&d, &[0, 1]).unwrap();
        let sys = FnSystem::new(3, d.n(), |th: &[f64], i: usize, out: &mut [f64]| {
            let row = [d.z(i), 1.0, d.covariate(i, 1)];
            let r = d.outcomes()[i] - (0..3).map(|j| th[j] * row[j]).sum::<f64>();
            for j in 0..3 {
                out[j] = r * row[j];
            }
        });
        let s = fit(&sys, &[0.0; 3], &SolveOptions::default()).unwrap();
        assert!((s.theta_hat[0] - est.delta_hat).abs() < 1e-8);
        assert!((s.variance(0).sqrt() - est.se).abs() < 1e-6 * est.se.max(1.0));
    }

    #[test]
    fn rejects_bad_column() {
        let (d, _) = super::super::fixtures::four();
        assert!(estimate_outcome_regression(&d, &[7]).is_err());
    }
}
