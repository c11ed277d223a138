//! Monte Carlo checks of the data-generating process and of qualitative
//! properties, at replicate counts small enough for the regular test run.

use matchweight::balance::{balance_test, standardized_difference, Moment};
use matchweight::estimators::PropensityModel;
use matchweight::histogram::mirror_histogram;
use matchweight::propensity::{effective_sample_sizes, matching_weights};
use matchweight::simulation::{
    generate_dataset, run_methods, run_table3, Method, ScenarioSpec, DELTA_TRUE,
};
use matchweight::SmoothWeightConfig;

fn full_model() -> PropensityModel {
    PropensityModel::Logistic(vec![0, 1, 2, 3, 4])
}

fn variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

#[test]
fn scenario_2_treated_fraction() {
    let d = generate_dataset(&ScenarioSpec::new(2, 10_000, 1, 1).unwrap(), 0).unwrap();
    let (t, _) = d.arm_counts();
    let frac = t as f64 / d.n() as f64;
    assert!((0.33..=0.42).contains(&frac), "{frac}");
}

#[test]
fn scenario_1_signal_to_noise() {
    let d = generate_dataset(&ScenarioSpec::new(1, 10_000, 1, 2).unwrap(), 0).unwrap();
    let ratio = variance(d.outcomes()) / 4.0;
    assert!((3.2..=4.1).contains(&ratio), "{ratio}");
}

#[test]
fn weighted_arms_are_asymptotically_equal() {
    let cfg = SmoothWeightConfig::default();
    for scenario in 1..=3 {
        let d = generate_dataset(&ScenarioSpec::new(scenario, 10_000, 1, 3).unwrap(), 0).unwrap();
        let (_, e) = full_model().fit(&d).unwrap();
        let ess = effective_sample_sizes(&d, &matching_weights(&d, &e, &cfg).unwrap()).unwrap();
        let ratio = ess.treated / ess.control;
        assert!((ratio - 1.0).abs() < 0.1, "scenario {scenario}: {ratio}");
    }
}

#[test]
fn weighted_score_distributions_mirror() {
    let cfg = SmoothWeightConfig::default();
    let spec = ScenarioSpec::new(2, 1000, 1, 4).unwrap();
    for r in 0..20 {
        let d = generate_dataset(&spec, r).unwrap();
        let (_, e) = full_model().fit(&d).unwrap();
        let w = matching_weights(&d, &e, &cfg).unwrap();
        let ess = effective_sample_sizes(&d, &w).unwrap();
        let h = mirror_histogram(&d, &e, &w, 20, Some((0.0, 1.0))).unwrap();
        let worst = (0..20)
            .map(|k| (h.weighted_counts_treated[k] - h.weighted_counts_control[k]).abs())
            .fold(0.0, f64::max);
        assert!(worst / ess.total <= 0.05, "replicate {r}: {}", worst / ess.total);
    }
}

#[test]
fn matching_weights_reduce_standardized_difference() {
    let cfg = SmoothWeightConfig::default();
    let spec = ScenarioSpec::new(2, 1000, 1, 5).unwrap();
    let reps = 100;
    let mut smaller = 0;
    for r in 0..reps {
        let d = generate_dataset(&spec, r).unwrap();
        let (_, e) = full_model().fit(&d).unwrap();
        let w = matching_weights(&d, &e, &cfg).unwrap();
        let weighted = standardized_difference(&d, &w, "x1").unwrap();
        let raw = standardized_difference(&d, &vec![1.0; d.n()], "x1").unwrap();
        if weighted < raw {
            smaller += 1;
        }
    }
    assert!(smaller as f64 > 0.95 * reps as f64, "{smaller}/{reps}");
}

#[test]
fn omitted_confounder_shows_imbalance() {
    let cfg = SmoothWeightConfig::default();
    let spec = ScenarioSpec::new(2, 1000, 1, 6).unwrap();
    let reps = 100;
    let without_x3 = PropensityModel::Logistic(vec![0, 1, 2, 4]);
    let rejected = (0..reps)
        .filter(|&r| {
            let d = generate_dataset(&spec, r).unwrap();
            balance_test(&d, &without_x3, &Moment::Mean("x3".into()), &cfg)
                .unwrap()
                .rejects(0.05)
        })
        .count();
    assert!(rejected * 2 > reps, "{rejected}/{reps}");
}

#[test]
fn mw_and_ipw_agree_under_homogeneous_effect() {
    let spec = ScenarioSpec::new(1, 1000, 200, 7).unwrap();
    let s = run_methods(&spec, &[Method::Mw, Method::Ipw], 1).unwrap();
    let diff = s.method(Method::Mw).unwrap().mean - s.method(Method::Ipw).unwrap().mean;
    assert!(diff.abs() < 0.01 * DELTA_TRUE, "{diff}");
}

#[test]
fn rejection_rate_grows_with_effect_size() {
    let s = run_table3(&[0.0, 0.25, 0.5], &[200], 100, 8, 1).unwrap();
    for m in Method::POWER {
        let rates: Vec<f64> = s.iter().map(|x| x.method(m).unwrap().rejection_pct).collect();
        for w in rates.windows(2) {
            assert!(w[1] + 1.0 >= w[0], "{}: {rates:?}", m.label());
        }
    }
}

#[test]
fn bad_propensity_model_biases_mw_downward() {
    let spec = ScenarioSpec::new(3, 1000, 30, 9).unwrap();
    let s = run_methods(&spec, &[Method::Best, Method::MwBadPs, Method::DrMwBadPs], 1).unwrap();
    let bad = s.method(Method::MwBadPs).unwrap().bias_pct.unwrap();
    assert!((bad + 87.0).abs() < 10.0, "{bad}");
    assert!(s.method(Method::DrMwBadPs).unwrap().bias_pct.unwrap().abs() < 3.0);
}
