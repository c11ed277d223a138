use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_matchweight"))
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn fixture(dir: &Path) -> PathBuf {
    write(dir, "four.csv", "y,z,x1,x2\n3,1,0,1\n1,0,0,0\n5,1,1,1\n2,0,1,0\n")
}

/// Scenario-like data large enough for the logistic model to converge.
fn moderate(dir: &Path) -> PathBuf {
    let mut s = String::from("y,z,x1,x2\n");
    for i in 0..60 {
        let x1 = ((i * 37) % 17) as f64 / 8.0 - 1.0;
        let x2 = f64::from(i % 3 == 0);
        let z = u8::from((i * 7 + (x1 * 3.0) as i64) % 5 < 2);
        let y = 1.0 + x1 - x2 + 2.0 * f64::from(z) + ((i * 13) % 7) as f64 / 7.0;
        s.push_str(&format!("{y},{z},{x1},{x2}\n"));
    }
    write(dir, "moderate.csv", &s)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env("MATCHWEIGHT_WORKERS", "1").output().unwrap()
}

fn stdout_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn estimate_intercept_only_is_difference_of_means() {
    let dir = tempfile::tempdir().unwrap();
    let p = fixture(dir.path());
    let o = run(&[
        "estimate", "--data", p.to_str().unwrap(), "--outcome", "y", "--treatment", "z",
        "--covariates", "x1,x2", "--ps-covariates", "", "--estimator", "mw",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v = stdout_json(&o);
    assert!((v["delta_hat"].as_f64().unwrap() - 2.5).abs() < 1e-12);
    for key in ["estimator", "delta_hat", "se", "ci95", "ess_treated", "ess_control", "n"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn every_estimator_tag_runs() {
    let dir = tempfile::tempdir().unwrap();
    let p = moderate(dir.path());
    for tag in ["mw", "dr-mw", "ipw", "ipw-ht", "dr-ipw", "matched", "stratified", "ols"] {
        let o = run(&[
            "estimate", "--data", p.to_str().unwrap(), "--outcome", "y", "--treatment", "z",
            "--covariates", "x1,x2", "--estimator", tag,
        ]);
        assert_eq!(o.status.code(), Some(0), "{tag}: {}", String::from_utf8_lossy(&o.stderr));
        let v = stdout_json(&o);
        assert!(v["delta_hat"].as_f64().unwrap().is_finite(), "{tag}");
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let p = moderate(dir.path());
    let args = [
        "estimate", "--data", p.to_str().unwrap(), "--outcome", "y", "--treatment", "z",
        "--covariates", "x1,x2", "--estimator", "dr-mw",
    ];
    assert_eq!(run(&args).stdout, run(&args).stdout);
}

#[test]
fn usage_errors_exit_1() {
    let o = run(&["estimate", "--estimator", "bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(o.stdout.is_empty());
    assert!(!o.stderr.is_empty());
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["simulate", "--table", "4"]).status.code(), Some(1));
    // too few replicates for a table
    assert_eq!(run(&["simulate", "--table", "1", "--reps", "5"]).status.code(), Some(1));
}

#[test]
fn data_errors_exit_2_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.csv", "y,z,x\n1,2,0\n2,0,1\n");
    let o = run(&["estimate", "--data", bad.to_str().unwrap(), "--outcome", "y", "--treatment", "z"]);
    assert_eq!(o.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(v["error"], "non_binary_treatment");

    // x perfectly predicts treatment
    let sep = write(dir.path(), "sep.csv", "y,z,x\n1,0,0\n2,0,1\n3,0,2\n4,1,3\n5,1,4\n6,1,5\n");
    let o = run(&[
        "estimate", "--data", sep.to_str().unwrap(), "--outcome", "y", "--treatment", "z",
        "--covariates", "x",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(v["error"], "separation");

    let p = fixture(dir.path());
    let o = run(&[
        "estimate", "--data", p.to_str().unwrap(), "--outcome", "y", "--treatment", "z",
        "--covariates", "nope",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn output_path_is_the_only_write() {
    let dir = tempfile::tempdir().unwrap();
    let p = moderate(dir.path());
    let out = dir.path().join("est.json");
    let o = run(&[
        "estimate", "--data", p.to_str().unwrap(), "--outcome", "y", "--treatment", "z",
        "--covariates", "x1,x2", "--output", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(v["estimator"], "mw");
}

#[test]
fn balance_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = moderate(dir.path());
    let o = run(&[
        "balance", "--data", p.to_str().unwrap(), "--outcome", "y", "--treatment", "z",
        "--covariates", "x1,x2", "--targets", "x1,x2^2,x1*x2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    let arr = v.as_array().unwrap();
    assert_eq!(arr.len(), 3);
    assert_eq!(arr[1]["moment"], "second_moment");
    assert_eq!(arr[2]["moment"], "cross_product(x1,x2)");
    for r in arr {
        let p = r["p_value"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&p));
    }
}

#[test]
fn mirror_hist_json_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let p = moderate(dir.path());
    let svg = dir.path().join("m.svg");
    let o = run(&[
        "mirror-hist", "--data", p.to_str().unwrap(), "--outcome", "y", "--treatment", "z",
        "--covariates", "x1,x2", "--bins", "10", "--svg", svg.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!(v["bin_edges"].as_array().unwrap().len(), 11);
    assert_eq!(v["bin_edges"][0], 0.0);
    assert_eq!(v["bin_edges"][10], 1.0);
    let raw: u64 = v["raw_counts_treated"]
        .as_array()
        .unwrap()
        .iter()
        .chain(v["raw_counts_control"].as_array().unwrap())
        .map(|x| x.as_u64().unwrap())
        .sum();
    assert_eq!(raw, 60);
    let text = std::fs::read_to_string(svg).unwrap();
    assert_eq!(text.matches("<rect").count(), 40);
}

#[test]
fn simulate_text_and_json() {
    let o = run(&[
        "simulate", "--table", "2", "--scenario", "1", "--reps", "100", "--n", "200", "--format", "text",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("8:MW") && text.contains("13:DR MW py"));

    let o = run(&["simulate", "--table", "3", "--reps", "100", "--theta", "0", "--sizes", "200"]);
    assert_eq!(o.status.code(), Some(0));
    let v = stdout_json(&o);
    assert_eq!(v.as_array().unwrap().len(), 1);
    assert_eq!(v[0]["methods"].as_array().unwrap().len(), 3);
}
