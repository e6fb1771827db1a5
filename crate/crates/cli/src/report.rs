//! JSON artifacts written by the CLI.

use serde::{Deserialize, Serialize};
use ssgd_core::sim::McReport;
use ssgd_core::{FitResult, Interval, SandwichOptions, SandwichVcov, SieveFit};

pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub level: f64,
    pub options: SandwichOptions,
    /// Link refit at the averaged estimate, used for the plug-in pieces.
    pub sieve_at_average: SieveFit,
    pub sandwich: SandwichVcov,
    /// Intervals for the raw averaged coefficients.
    pub intervals: Vec<Interval>,
    /// Delta-method intervals for the coefficients relative to the numeraire.
    pub normalized: Vec<Interval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema: u32,
    pub input: String,
    pub columns: Vec<String>,
    pub n: usize,
    pub p: usize,
    pub result: FitResult,
    pub inference: Option<InferenceReport>,
}

impl FitReport {
    /// One row per regressor: raw estimates, then normalized ones where defined.
    pub fn coefficient_table(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let header = [
            "column",
            "beta_final",
            "beta_avg",
            "std_error",
            "lower",
            "upper",
            "normalized",
            "normalized_std_error",
        ]
        .map(String::from)
        .to_vec();
        let r = &self.result;
        let blank = String::new;
        let mut normalized = r.beta_normalized.iter().flatten();
        let mut normalized_ci = self.inference.iter().flat_map(|i| i.normalized.iter());
        let rows = self
            .columns
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let ci = self.inference.as_ref().map(|i| i.intervals[j]);
                let (norm, norm_se) = if j == r.numeraire {
                    ("1".to_string(), blank())
                } else {
                    (
                        normalized.next().map_or_else(blank, f64::to_string),
                        normalized_ci.next().map_or_else(blank, |i| i.std_error.to_string()),
                    )
                };
                vec![
                    name.clone(),
                    r.beta_final[j].to_string(),
                    r.beta_avg[j].to_string(),
                    ci.map_or_else(blank, |i| i.std_error.to_string()),
                    ci.map_or_else(blank, |i| i.lower.to_string()),
                    ci.map_or_else(blank, |i| i.upper.to_string()),
                    norm,
                    norm_se,
                ]
            })
            .collect();
        (header, rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub schema: u32,
    /// One report per sample size.
    pub reports: Vec<McReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub schema: u32,
    pub n: usize,
    pub p: usize,
    pub gamma: f64,
    pub iterations: usize,
    pub sieve_powers: usize,
    pub window: (usize, usize),
    pub warnings: Vec<String>,
}
