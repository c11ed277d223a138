//! Matching-weight estimation for observational studies.
//!
//! The crate fits a logistic propensity model, forms matching weights
//! `min(1 - e, e) / P(arm received)`, and estimates treatment effects with
//! sandwich standard errors computed from stacked estimating equations, so
//! that uncertainty in the propensity model is carried into every interval.
//! Baseline estimators (stratification, caliper matching, inverse probability
//! weighting and its augmented form), balance diagnostics, mirror histograms
//! and a Monte Carlo harness are included.

pub mod balance;
pub mod cli;
pub mod data;
pub mod estimators;
pub mod error;
pub mod histogram;
pub mod json;
pub mod linalg;
pub mod mestimation;
pub mod propensity;
pub mod simulation;

pub use data::{ingest_csv, ObservationalDataset};
pub use error::{Error, Result};
pub use propensity::{fit_logistic, PropensityFit, SmoothWeightConfig};
