//! Observational datasets: outcome, binary treatment and a covariate matrix.
//!
//! Datasets are validated on construction and immutable afterwards. Column
//! `0` of the covariate matrix is the constant `1` whenever an intercept was
//! requested; model specifications elsewhere refer to covariates by their
//! column index in this matrix.

use std::collections::HashMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Name given to the prepended constant column.
pub const INTERCEPT_NAME: &str = "(intercept)";

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationalDataset {
    outcomes: Vec<f64>,
    treatments: Vec<u8>,
    /// Row-major `n x p`.
    covariates: Vec<f64>,
    covariate_names: Vec<String>,
}

impl ObservationalDataset {
    /// Builds a dataset from row-major covariates, validating every invariant.
    pub fn new(
        outcomes: Vec<f64>,
        treatments: Vec<u8>,
        covariates: Vec<Vec<f64>>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let n = outcomes.len();
        if n < 2 {
            return Err(Error::InvalidDataset(format!("need at least 2 subjects, got {n}")));
        }
        if treatments.len() != n || covariates.len() != n {
            return Err(Error::InvalidDataset(
                "outcome, treatment and covariate lengths differ".into(),
            ));
        }
        let p = covariate_names.len();
        let mut flat = Vec::with_capacity(n * p);
        for (row, x) in covariates.iter().enumerate() {
            if x.len() != p {
                return Err(Error::InvalidDataset(format!(
                    "row {row} has {} covariates, expected {p}",
                    x.len()
                )));
            }
            for (j, v) in x.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFiniteValue {
                        row,
                        column: covariate_names[j].clone(),
                        value: v.to_string(),
                    });
                }
            }
            flat.extend_from_slice(x);
        }
        for (row, y) in outcomes.iter().enumerate() {
            if !y.is_finite() {
                return Err(Error::NonFiniteValue {
                    row,
                    column: "outcome".into(),
                    value: y.to_string(),
                });
            }
        }
        for (row, &z) in treatments.iter().enumerate() {
            if z > 1 {
                return Err(Error::NonBinaryTreatment {
                    row,
                    value: z.to_string(),
                });
            }
        }
        let treated = treatments.iter().filter(|&&z| z == 1).count();
        if treated == 0 {
            return Err(Error::EmptyArm(1));
        }
        if treated == n {
            return Err(Error::EmptyArm(0));
        }
        Ok(Self {
            outcomes,
            treatments,
            covariates: flat,
            covariate_names,
        })
    }

    pub fn n(&self) -> usize {
        self.outcomes.len()
    }

    /// Number of covariate columns, intercept included.
    pub fn p(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn treatments(&self) -> &[u8] {
        &self.treatments
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Covariate row `i`.
    pub fn x(&self, i: usize) -> &[f64] {
        let p = self.p();
        &self.covariates[i * p..(i + 1) * p]
    }

    pub fn covariate(&self, i: usize, j: usize) -> f64 {
        self.covariates[i * self.p() + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n()).map(|i| self.covariate(i, j)).collect()
    }

    pub fn is_treated(&self, i: usize) -> bool {
        self.treatments[i] == 1
    }

    pub fn z(&self, i: usize) -> f64 {
        self.treatments[i] as f64
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.covariate_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownCovariate(name.to_string()))
    }

    /// Resolves a list of covariate names to column indices.
    pub fn column_indices<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>> {
        names.iter().map(|n| self.column_index(n.as_ref())).collect()
    }

    pub fn has_intercept(&self) -> bool {
        self.covariate_names.first().map(String::as_str) == Some(INTERCEPT_NAME)
    }

    pub fn arm_counts(&self) -> (usize, usize) {
        let t = self.treatments.iter().filter(|&&z| z == 1).count();
        (t, self.n() - t)
    }

    /// Same covariates and outcomes with treatment labels swapped.
    pub fn with_flipped_treatment(&self) -> Self {
        Self {
            treatments: self.treatments.iter().map(|&z| 1 - z).collect(),
            ..self.clone()
        }
    }

    /// Same design with outcomes replaced by `f(y)`.
    pub fn map_outcomes(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            outcomes: self.outcomes.iter().map(|&y| f(y)).collect(),
            ..self.clone()
        }
    }

    /// Subset (with repetition) of rows, as used by resampling.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        Self::new(
            rows.iter().map(|&i| self.outcomes[i]).collect(),
            rows.iter().map(|&i| self.treatments[i]).collect(),
            rows.iter().map(|&i| self.x(i).to_vec()).collect(),
            self.covariate_names.clone(),
        )
    }
}

/// Reads a comma-separated file with a header row.
///
/// Treatment cells must be the literal `0` or `1`. Any other cell must parse
/// as a finite float; empty cells are rejected.
pub fn ingest_csv<S: AsRef<str>>(
    path: impl AsRef<Path>,
    outcome_col: &str,
    treatment_col: &str,
    covariate_cols: &[S],
    add_intercept: bool,
) -> Result<ObservationalDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: HashMap<String, usize> = reader
        .headers()?
        .iter()
        .enumerate()
        .map(|(i, h)| (h.to_string(), i))
        .collect();
    let find = |name: &str| {
        header
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let y_idx = find(outcome_col)?;
    let z_idx = find(treatment_col)?;
    let x_idx: Vec<usize> = covariate_cols
        .iter()
        .map(|c| find(c.as_ref()))
        .collect::<Result<_>>()?;

    let mut outcomes = Vec::new();
    let mut treatments = Vec::new();
    let mut covariates = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let cell = |idx: usize| record.get(idx).unwrap_or("");
        outcomes.push(parse_finite(cell(y_idx), row, outcome_col)?);
        treatments.push(match cell(z_idx) {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::NonBinaryTreatment {
                    row,
                    value: other.to_string(),
                })
            }
        });
        let mut x = Vec::with_capacity(x_idx.len() + 1);
        if add_intercept {
            x.push(1.0);
        }
        for (k, &idx) in x_idx.iter().enumerate() {
            x.push(parse_finite(cell(idx), row, covariate_cols[k].as_ref())?);
        }
        covariates.push(x);
    }

    let mut names = Vec::with_capacity(x_idx.len() + 1);
    if add_intercept {
        names.push(INTERCEPT_NAME.to_string());
    }
    names.extend(covariate_cols.iter().map(|c| c.as_ref().to_string()));
    ObservationalDataset::new(outcomes, treatments, covariates, names)
}

fn parse_finite(token: &str, row: usize, column: &str) -> Result<f64> {
    match token.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::NonFiniteValue {
            row,
            column: column.to_string(),
            value: token.to_string(),
        }),
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CovariateSummary {
    pub name: String,
    pub mean_treated: f64,
    pub sd_treated: f64,
    pub mean_control: f64,
    pub sd_control: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct DatasetSummary {
    pub n: usize,
    pub n_treated: usize,
    pub n_control: usize,
    pub outcome_mean_treated: f64,
    pub outcome_mean_control: f64,
    pub covariates: Vec<CovariateSummary>,
}

/// Per-arm counts plus means and standard deviations (divisor `n - 1`;
/// zero for a single-subject arm).
pub fn dataset_summary(d: &ObservationalDataset) -> DatasetSummary {
    let (n_treated, n_control) = d.arm_counts();
    let arm_stats = |values: &dyn Fn(usize) -> f64, treated: bool| {
        let vals: Vec<f64> = (0..d.n())
            .filter(|&i| d.is_treated(i) == treated)
            .map(values)
            .collect();
        mean_sd(&vals)
    };
    let covariates = d
        .covariate_names()
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let (mean_treated, sd_treated) = arm_stats(&|i| d.covariate(i, j), true);
            let (mean_control, sd_control) = arm_stats(&|i| d.covariate(i, j), false);
            CovariateSummary {
                name: name.clone(),
                mean_treated,
                sd_treated,
                mean_control,
                sd_control,
            }
        })
        .collect();
    DatasetSummary {
        n: d.n(),
        n_treated,
        n_control,
        outcome_mean_treated: arm_stats(&|i| d.outcomes()[i], true).0,
        outcome_mean_control: arm_stats(&|i| d.outcomes()[i], false).0,
        covariates,
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = v.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}
