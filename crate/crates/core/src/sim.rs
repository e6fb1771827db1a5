//! Simulated designs and replicated estimation.
//!
//! Each replication draws its own dataset from a seed derived from the master
//! seed with [`split_seed`], fits it, and normalizes the estimate by the
//! numeraire coefficient. Replications run on the rayon pool; records come back
//! in replication order, so the aggregates do not depend on scheduling.

use std::time::Instant;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SsgdConfig;
use crate::error::{Result, SsgdError};
use crate::estimator::{normalize_scale_at, run_sgd_known_g, run_ssgd_average, run_ssgd_group, EstimatorKind};
use crate::inference::{normalized_intervals, sandwich_for_result, SandwichOptions};
use crate::model::{Beta, Dataset, LinkFunction};

pub const REPORT_SCHEMA: u32 = 1;

/// Largest tolerated share of failed replications.
pub const MAX_FAILURE_SHARE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorDist {
    Normal,
    Cauchy,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum RegressorLaw {
    /// Independent standard normal columns.
    #[default]
    IndependentNormal,
    /// Independent uniform columns on `[−half_width, half_width]`.
    IndependentUniform { half_width: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub beta0: Beta,
    pub error_dist: ErrorDist,
    #[serde(default)]
    pub x_dist: RegressorLaw,
    pub n: usize,
    pub seed: u64,
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        let p = self.beta0.len();
        if p == 0 {
            return Err(SsgdError::InvalidConfig("beta0 must have at least one entry".into()));
        }
        if self.n < p + 1 {
            return Err(SsgdError::InvalidConfig(format!(
                "sample size {} must be at least p + 1 = {}",
                self.n,
                p + 1
            )));
        }
        if let RegressorLaw::IndependentUniform { half_width } = self.x_dist {
            if !(half_width > 0.0 && half_width.is_finite()) {
                return Err(SsgdError::InvalidConfig(format!(
                    "uniform half-width must be positive, got {half_width}"
                )));
            }
        }
        Ok(())
    }
}

/// Draws `X` row by row, then the errors, and sets `y = 1{Xβ₀ > ε}`.
pub fn generate(spec: &DgpSpec) -> Result<Dataset> {
    spec.validate()?;
    let (n, p) = (spec.n, spec.beta0.len());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut x = nalgebra::DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            x[(i, j)] = match spec.x_dist {
                RegressorLaw::IndependentNormal => rng.sample(StandardNormal),
                RegressorLaw::IndependentUniform { half_width } => half_width * (2.0 * rng.random::<f64>() - 1.0),
            };
        }
    }
    let cauchy = Cauchy::new(0.0, 1.0).expect("unit Cauchy");
    let z = &x * spec.beta0.as_vector();
    let y = z
        .iter()
        .map(|&zi| {
            let e: f64 = match spec.error_dist {
                ErrorDist::Normal => rng.sample(StandardNormal),
                ErrorDist::Cauchy => rng.sample(cauchy),
                ErrorDist::Logistic => {
                    let u: f64 = rng.sample(Open01);
                    (u / (1.0 - u)).ln()
                }
            };
            f64::from(zi > e)
        })
        .collect();
    Dataset::new(x, y)
}

/// SplitMix64 output for stream `index` of `master`.
pub fn split_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceSpec {
    pub level: f64,
    pub sandwich: SandwichOptions,
}

impl Default for InferenceSpec {
    fn default() -> Self {
        Self {
            level: 0.95,
            sandwich: SandwichOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McOptions {
    pub replications: usize,
    pub estimator: EstimatorKind,
    /// Interval coverage of the normalized coefficients, when set.
    pub inference: Option<InferenceSpec>,
}

impl Default for McOptions {
    fn default() -> Self {
        Self {
            replications: 100,
            estimator: EstimatorKind::Average,
            inference: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub index: usize,
    pub seed: u64,
    /// Headline estimate before normalization.
    pub raw: Option<Vec<f64>>,
    pub normalized: Option<Vec<f64>>,
    /// Whether each normalized interval covers the truth.
    pub covered: Option<Vec<bool>>,
    pub seconds: f64,
    pub error: Option<String>,
}

impl ReplicationRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub schema: u32,
    pub dgp: DgpSpec,
    pub config: SsgdConfig,
    pub estimator: EstimatorKind,
    pub replications: usize,
    pub failures: usize,
    pub truth_normalized: Vec<f64>,
    pub bias: Vec<f64>,
    pub rmse: Vec<f64>,
    /// Bias and RMSE of the unnormalized estimate against `beta0`.
    pub raw_bias: Vec<f64>,
    pub raw_rmse: Vec<f64>,
    pub coverage: Option<Vec<f64>>,
    pub mean_seconds_per_fit: f64,
    pub total_seconds: f64,
    pub records: Vec<ReplicationRecord>,
}

impl McReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| SsgdError::InvalidConfig(e.to_string()))
    }
}

fn run_one(
    spec: &DgpSpec,
    config: &SsgdConfig,
    options: &McOptions,
    truth: &[f64],
    index: usize,
    seed: u64,
) -> ReplicationRecord {
    let started = Instant::now();
    let outcome = (|| -> Result<(Vec<f64>, Vec<f64>, Option<Vec<bool>>)> {
        let data = generate(&DgpSpec { seed, ..spec.clone() })?;
        let cfg = SsgdConfig { seed, ..config.clone() };
        let result = match options.estimator {
            EstimatorKind::Group => run_ssgd_group(&data, &cfg, None)?,
            EstimatorKind::Average => run_ssgd_average(&data, &cfg, None)?,
            EstimatorKind::KnownG { link } => {
                let link = LinkFunction::from_kind(link)?;
                run_sgd_known_g(&data, &link, &cfg, &Beta::zeros(data.p()))?
            }
        };
        let headline = result.headline();
        let normalized = normalize_scale_at(headline, cfg.numeraire)?;
        let covered = match options.inference {
            None => None,
            Some(inf) => {
                let (_, vcov) = sandwich_for_result(&data, &result, inf.sandwich)?;
                let ci = normalized_intervals(&result.beta_avg, &vcov, cfg.numeraire, inf.level)?;
                Some(
                    ci.iter()
                        .zip(truth)
                        .map(|(c, &t)| c.lower <= t && t <= c.upper)
                        .collect(),
                )
            }
        };
        Ok((headline.as_slice().to_vec(), normalized, covered))
    })();
    let seconds = started.elapsed().as_secs_f64();
    match outcome {
        Ok((raw, normalized, covered)) => ReplicationRecord {
            index,
            seed,
            raw: Some(raw),
            normalized: Some(normalized),
            covered,
            seconds,
            error: None,
        },
        Err(e) => ReplicationRecord {
            index,
            seed,
            raw: None,
            normalized: None,
            covered: None,
            seconds,
            error: Some(e.to_string()),
        },
    }
}

/// Mean bias and RMSE of `estimates` around `truth`, coefficient by coefficient.
pub fn bias_rmse<'a, I>(estimates: I, truth: &[f64]) -> (Vec<f64>, Vec<f64>)
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let d = truth.len();
    let mut sum = vec![0.0; d];
    let mut sq = vec![0.0; d];
    let mut count = 0usize;
    for e in estimates {
        for j in 0..d {
            let err = e[j] - truth[j];
            sum[j] += err;
            sq[j] += err * err;
        }
        count += 1;
    }
    let m = count.max(1) as f64;
    let bias = sum.iter().map(|s| s / m).collect();
    let rmse = sq.iter().map(|s| (s / m).sqrt()).collect();
    (bias, rmse)
}

/// Replications with seeds `split_seed(spec.seed, r)`, `r = 0 … R−1`.
pub fn run_monte_carlo(spec: &DgpSpec, config: &SsgdConfig, options: &McOptions) -> Result<McReport> {
    let seeds: Vec<u64> = (0..options.replications as u64)
        .map(|r| split_seed(spec.seed, r))
        .collect();
    run_monte_carlo_with_seeds(spec, config, options, &seeds)
}

/// Replications with explicit per-replication seeds.
pub fn run_monte_carlo_with_seeds(
    spec: &DgpSpec,
    config: &SsgdConfig,
    options: &McOptions,
    seeds: &[u64],
) -> Result<McReport> {
    spec.validate()?;
    if seeds.len() < 2 {
        return Err(SsgdError::InvalidConfig(format!(
            "at least 2 replications are required, got {}",
            seeds.len()
        )));
    }
    if options.inference.is_some() && matches!(options.estimator, EstimatorKind::KnownG { .. }) {
        return Err(SsgdError::InvalidConfig(
            "interval coverage needs a sieve estimator".into(),
        ));
    }
    if let Some(inf) = options.inference {
        if !(inf.level > 0.0 && inf.level < 1.0) {
            return Err(SsgdError::InvalidLevel(inf.level));
        }
    }
    config.resolve(spec.n, spec.beta0.len())?;
    let truth = normalize_scale_at(&spec.beta0, config.numeraire)?;

    let started = Instant::now();
    let records: Vec<ReplicationRecord> = seeds
        .par_iter()
        .enumerate()
        .map(|(r, &seed)| run_one(spec, config, options, &truth, r, seed))
        .collect();
    let total_seconds = started.elapsed().as_secs_f64();

    let failures = records.iter().filter(|r| r.failed()).count();
    if failures as f64 > MAX_FAILURE_SHARE * records.len() as f64 {
        return Err(SsgdError::TooManyFailures {
            failed: failures,
            total: records.len(),
        });
    }
    let ok: Vec<&ReplicationRecord> = records.iter().filter(|r| !r.failed()).collect();
    let (bias, rmse) = bias_rmse(ok.iter().filter_map(|r| r.normalized.as_deref()), &truth);
    let (raw_bias, raw_rmse) = bias_rmse(ok.iter().filter_map(|r| r.raw.as_deref()), spec.beta0.as_slice());
    let coverage = options.inference.map(|_| {
        let mut hits = vec![0usize; truth.len()];
        for r in &ok {
            for (h, &c) in hits.iter_mut().zip(r.covered.as_deref().unwrap_or(&[])) {
                *h += usize::from(c);
            }
        }
        hits.iter().map(|&h| h as f64 / ok.len().max(1) as f64).collect()
    });
    let mean_seconds_per_fit = ok.iter().map(|r| r.seconds).sum::<f64>() / ok.len().max(1) as f64;
    let resolved = config.resolve(spec.n, spec.beta0.len())?;

    Ok(McReport {
        schema: REPORT_SCHEMA,
        dgp: spec.clone(),
        config: resolved.config,
        estimator: options.estimator,
        replications: records.len(),
        failures,
        truth_normalized: truth,
        bias,
        rmse,
        raw_bias,
        raw_rmse,
        coverage,
        mean_seconds_per_fit,
        total_seconds,
        records,
    })
}

/// Table layout with one row per normalized coefficient and a Bias and RMSE
/// column per report.
pub fn table(reports: &[McReport]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["Beta".to_string()];
    for r in reports {
        header.push(format!("Bias(n={})", r.dgp.n));
        header.push(format!("RMSE(n={})", r.dgp.n));
    }
    let rows = reports.first().map_or(0, |r| r.truth_normalized.len());
    let body = (0..rows)
        .map(|j| {
            let mut row = vec![format!("{}", reports[0].truth_normalized[j])];
            for r in reports {
                row.push(format!("{:.6}", r.bias[j]));
                row.push(format!("{:.6}", r.rmse[j]));
            }
            row
        })
        .collect();
    (header, body)
}

/// Built-in designs of the simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    PaperNormal,
    PaperCauchy,
}

pub const PAPER_BETA0: [f64; 9] = [1.0, 1.0, 2.0, 4.0, 5.0, -1.0, -2.0, -4.0, -5.0];
pub const PAPER_SAMPLE_SIZES: [usize; 2] = [5000, 10_000];
pub const PAPER_SIEVE_POWERS: usize = 3;

impl Preset {
    pub fn error_dist(self) -> ErrorDist {
        match self {
            Preset::PaperNormal => ErrorDist::Normal,
            Preset::PaperCauchy => ErrorDist::Cauchy,
        }
    }

    pub fn spec(self, n: usize, seed: u64) -> DgpSpec {
        DgpSpec {
            beta0: Beta::new(PAPER_BETA0.to_vec()).expect("finite preset"),
            error_dist: self.error_dist(),
            x_dist: RegressorLaw::IndependentNormal,
            n,
            seed,
        }
    }

    pub fn config(self) -> SsgdConfig {
        SsgdConfig {
            sieve_powers: Some(PAPER_SIEVE_POWERS),
            ..SsgdConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_seed_streams_differ() {
        let seeds: Vec<u64> = (0..1000).map(|i| split_seed(7, i)).collect();
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), seeds.len());
        assert_ne!(split_seed(7, 0), split_seed(8, 0));
    }

    #[test]
    fn generation_is_reproducible() {
        let spec = Preset::PaperCauchy.spec(200, 5);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = DgpSpec { seed: 6, ..spec };
        assert_ne!(
            generate(&other).unwrap().y(),
            generate(&Preset::PaperCauchy.spec(200, 5)).unwrap().y()
        );
    }

    #[test]
    fn zero_index_gives_balanced_outcomes() {
        for dist in [ErrorDist::Normal, ErrorDist::Cauchy, ErrorDist::Logistic] {
            let n = 20_000;
            let spec = DgpSpec {
                beta0: Beta::zeros(2),
                error_dist: dist,
                x_dist: RegressorLaw::IndependentNormal,
                n,
                seed: 3,
            };
            let d = generate(&spec).unwrap();
            let mean = d.y().iter().sum::<f64>() / n as f64;
            assert!((mean - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt(), "{dist:?}: {mean}");
        }
    }

    #[test]
    fn too_small_sample_is_rejected() {
        let spec = DgpSpec {
            n: 9,
            ..Preset::PaperNormal.spec(9, 0)
        };
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn single_replication_is_rejected() {
        let opts = McOptions {
            replications: 1,
            ..McOptions::default()
        };
        assert!(matches!(
            run_monte_carlo(&Preset::PaperNormal.spec(100, 0), &SsgdConfig::default(), &opts),
            Err(SsgdError::InvalidConfig(_))
        ));
    }
}
