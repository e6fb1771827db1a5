//! The three iterative estimators.
//!
//! * [`run_sgd_known_g`]: one observation per step with a known link,
//!   `β_k = β_{k−1} − γ_k C (g(x_kᵀβ_{k−1}) − y_k) x_k`.
//! * [`run_ssgd_group`]: full-sample steps whose link is re-estimated by a
//!   series logit on the current index after every update.
//! * [`run_ssgd_average`]: the same path, reported through the average of the
//!   iterates `β̃_1 … β̃_{K−t}`.

use std::collections::VecDeque;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{learning_rate, InitStrategy, SsgdConfig};
use crate::error::{Result, SsgdError};
use crate::logit::{newton_logit, NewtonOptions};
use crate::model::{weighted_column_mean, Beta, Dataset, IndexCdf, LinkFunction, LinkKind};
use crate::serde_helpers::opt_matrix_rows;
use crate::sieve::{fit_series_logit_from, SieveFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EstimatorKind {
    KnownG { link: LinkKind },
    Group,
    Average,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetainedFit {
    pub iteration: usize,
    pub fit: SieveFit,
}

/// Iterates `β_0 … β_K` with the gradient norm used at each step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IteratePath {
    pub betas: Vec<Beta>,
    /// `grad_norms[k − 1]` is the Euclidean norm of the gradient applied at step `k`.
    pub grad_norms: Vec<f64>,
    /// Most recent intermediate sieve fits, capped by `retain_sieve_fits`.
    pub sieve_fits: VecDeque<RetainedFit>,
}

impl IteratePath {
    /// Number of updates recorded.
    pub fn len(&self) -> usize {
        self.betas.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Mean of `β_1 … β_{K−trim}`.
    pub fn average(&self, trim: usize) -> Result<Beta> {
        let k = self.len();
        if k == 0 || trim >= k {
            return Err(SsgdError::InvalidConfig(format!(
                "cannot average {k} iterates with trim {trim}"
            )));
        }
        let used = &self.betas[1..=k - trim];
        let mut sum = DVector::zeros(self.betas[0].len());
        for b in used {
            sum += b.as_vector();
        }
        Beta::from_vector(sum / used.len() as f64)
    }

    fn retain(&mut self, cap: usize, iteration: usize, fit: &SieveFit) {
        if cap == 0 {
            return;
        }
        if self.sieve_fits.len() == cap {
            self.sieve_fits.pop_front();
        }
        self.sieve_fits.push_back(RetainedFit {
            iteration,
            fit: fit.clone(),
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub estimator: EstimatorKind,
    /// Last iterate `β_K`.
    pub beta_final: Beta,
    /// Average of `β_1 … β_{K−t}`.
    pub beta_avg: Beta,
    /// Headline estimate relative to the numeraire coefficient, which is omitted.
    pub beta_normalized: Option<Vec<f64>>,
    pub numeraire: usize,
    /// Link fit at the final iterate (sieve estimators only).
    pub sieve: Option<SieveFit>,
    pub path: IteratePath,
    pub iterations_run: usize,
    /// Settings with every default resolved.
    pub config: SsgdConfig,
    #[serde(with = "opt_matrix_rows", default)]
    pub vcov: Option<DMatrix<f64>>,
    pub warnings: Vec<String>,
    /// Inner fits that flagged separation.
    pub separation_events: usize,
    pub seconds: f64,
}

impl FitResult {
    /// The estimator's headline coefficients: the average for the averaged
    /// estimator, the last iterate otherwise.
    pub fn headline(&self) -> &Beta {
        match self.estimator {
            EstimatorKind::Average => &self.beta_avg,
            _ => &self.beta_final,
        }
    }
}

/// `β/β_numeraire` with the numeraire entry removed.
pub fn normalize_scale_at(beta: &Beta, numeraire: usize) -> Result<Vec<f64>> {
    if numeraire >= beta.len() {
        return Err(SsgdError::InvalidConfig(format!(
            "numeraire index {numeraire} is out of range for {} coefficients",
            beta.len()
        )));
    }
    let base = beta[numeraire];
    if base.abs() <= 1e-10 {
        return Err(SsgdError::DegenerateNumeraire {
            index: numeraire,
            value: base,
        });
    }
    Ok(beta
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != numeraire)
        .map(|(_, b)| b / base)
        .collect())
}

/// Coefficients relative to the first one.
pub fn normalize_scale(beta: &Beta) -> Result<Vec<f64>> {
    normalize_scale_at(beta, 0)
}

fn check_beta(data: &Dataset, beta: &Beta) -> Result<()> {
    if beta.len() != data.p() {
        return Err(SsgdError::DimensionMismatch {
            what: "starting coefficients",
            expected: data.p(),
            found: beta.len(),
        });
    }
    Ok(())
}

fn conditioning_of(config: &SsgdConfig, p: usize) -> DMatrix<f64> {
    config.conditioning.clone().unwrap_or_else(|| DMatrix::identity(p, p))
}

/// Applies `β ← β − γ_k C (1/n) Σ (ĝ(x_iᵀβ) − y_i) x_i` and returns the new
/// coefficients with the gradient's Euclidean norm. Uses `config.conditioning`
/// exactly as given.
pub(crate) fn group_step(
    beta_prev: &Beta,
    data: &Dataset,
    cdf_prev: &dyn IndexCdf,
    k: usize,
    conditioning: &DMatrix<f64>,
    config: &SsgdConfig,
) -> Result<(Beta, f64)> {
    let z = data.index(beta_prev);
    let y = data.y();
    let residual: Vec<f64> = z.iter().zip(y).map(|(&u, &yi)| cdf_prev.cdf(u) - yi).collect();
    let grad = weighted_column_mean(data.x(), &residual);
    let norm = grad.norm();
    if !norm.is_finite() {
        return Err(SsgdError::NonFiniteGradient { iteration: k });
    }
    let step = conditioning * grad * learning_rate(k, config);
    let next = beta_prev.as_vector() - step;
    Beta::from_vector(next)
        .map(|b| (b, norm))
        .map_err(|_| SsgdError::NonFiniteGradient { iteration: k })
}

/// One full-sample update with link estimate `cdf_prev`.
pub fn group_update(
    beta_prev: &Beta,
    data: &Dataset,
    cdf_prev: &dyn IndexCdf,
    k: usize,
    config: &SsgdConfig,
) -> Result<Beta> {
    check_beta(data, beta_prev)?;
    let c = conditioning_of(config, data.p());
    group_step(beta_prev, data, cdf_prev, k, &c, config).map(|(b, _)| b)
}

/// Per-observation SGD with a known link.
pub fn run_sgd_known_g(data: &Dataset, link: &LinkFunction, config: &SsgdConfig, beta0: &Beta) -> Result<FitResult> {
    let started = Instant::now();
    check_beta(data, beta0)?;
    let (n, p) = (data.n(), data.p());
    let resolved = config.resolve(n, p)?;
    let k_total = resolved.iterations;
    if k_total > n {
        return Err(SsgdError::InvalidConfig(format!(
            "known-link SGD consumes one observation per step; K = {k_total} exceeds n = {n}"
        )));
    }
    let c = &resolved.conditioning;
    let cfg = &resolved.config;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));

    let x = data.x();
    let y = data.y();
    let mut beta = beta0.as_vector().clone();
    let mut path = IteratePath {
        betas: Vec::with_capacity(k_total + 1),
        grad_norms: Vec::with_capacity(k_total),
        sieve_fits: VecDeque::new(),
    };
    path.betas.push(beta0.clone());
    let mut xk = DVector::zeros(p);
    let mut iterations_run = 0;
    for (k, &row) in (1..=k_total).zip(&order) {
        for j in 0..p {
            xk[j] = x[(row, j)];
        }
        let u = xk.dot(&beta);
        if !u.is_finite() {
            return Err(SsgdError::AtIteration {
                iteration: k,
                source: Box::new(SsgdError::NumericOverflow { row: Some(row) }),
            });
        }
        let r = link.eval(u) - y[row];
        let grad = &xk * r;
        beta -= c * &grad * learning_rate(k, cfg);
        let b = Beta::from_vector(beta.clone()).map_err(|_| SsgdError::NonFiniteGradient { iteration: k })?;
        path.grad_norms.push(grad.norm());
        path.betas.push(b);
        iterations_run = k;
        if let Some(tol) = cfg.early_stop_tol {
            if (path.betas[k].as_vector() - path.betas[k - 1].as_vector()).norm() < tol {
                break;
            }
        }
    }

    finish(
        EstimatorKind::KnownG { link: link.kind() },
        path,
        None,
        iterations_run,
        resolved.config,
        resolved.warnings,
        0,
        started,
    )
}

/// Slopes of a full-sample logit of `y` on `(1, X)`.
pub fn logit_start(data: &Dataset) -> Result<Beta> {
    let (n, p) = (data.n(), data.p());
    let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { data.x()[(i, j - 1)] });
    let sol = newton_logit(&design, data.y(), None, &NewtonOptions::default())?;
    Beta::new(sol.coef.iter().skip(1).copied().collect())
}

enum CurrentLink {
    Start(LinkFunction),
    Sieve(SieveFit),
}

impl IndexCdf for CurrentLink {
    fn cdf(&self, z: f64) -> f64 {
        match self {
            CurrentLink::Start(l) => l.eval(z),
            CurrentLink::Sieve(f) => f.prob(z),
        }
    }
}

fn run_sieve(data: &Dataset, config: &SsgdConfig, beta0: Option<&Beta>, kind: EstimatorKind) -> Result<FitResult> {
    let started = Instant::now();
    let (n, p) = (data.n(), data.p());
    let resolved = config.resolve(n, p)?;
    let cfg = &resolved.config;
    let mut warnings = resolved.warnings.clone();
    if kind == EstimatorKind::Average && cfg.gamma >= 1.0 {
        warnings.push("averaging with gamma = 1; the normal limit for the average needs gamma < 1".into());
    }
    let start = match beta0 {
        Some(b) => {
            check_beta(data, b)?;
            b.clone()
        }
        None => match cfg.init {
            InitStrategy::Logit => logit_start(data)?,
            InitStrategy::Zero => Beta::zeros(p),
        },
    };

    let q = resolved.sieve_powers;
    let c = &resolved.conditioning;
    let k_total = resolved.iterations;
    let mut path = IteratePath {
        betas: Vec::with_capacity(k_total + 1),
        grad_norms: Vec::with_capacity(k_total),
        sieve_fits: VecDeque::new(),
    };
    path.betas.push(start.clone());
    let mut link = CurrentLink::Start(LinkFunction::logistic());
    let mut beta = start;
    let mut last_fit: Option<SieveFit> = None;
    let mut separation_events = 0;
    let mut iterations_run = 0;

    for k in 1..=k_total {
        let (next, norm) = group_step(&beta, data, &link, k, c, cfg)?;
        let stop = cfg
            .early_stop_tol
            .is_some_and(|tol| (next.as_vector() - beta.as_vector()).norm() < tol);
        beta = next;
        path.betas.push(beta.clone());
        path.grad_norms.push(norm);
        iterations_run = k;

        if k % cfg.refit_every == 0 || k == k_total || stop {
            let z = data.index(&beta);
            let init = last_fit.as_ref().map(|f| f.pi.as_slice());
            let fit = fit_series_logit_from(z.as_slice(), data.y(), q, init).map_err(|e| SsgdError::AtIteration {
                iteration: k,
                source: Box::new(e),
            })?;
            if fit.separation_suspected {
                separation_events += 1;
            }
            path.retain(cfg.retain_sieve_fits, k, &fit);
            last_fit = Some(fit.clone());
            link = CurrentLink::Sieve(fit);
        }
        if stop {
            break;
        }
    }
    if separation_events > 0 {
        warnings.push(format!(
            "{separation_events} inner series-logit fits suspected separation"
        ));
    }
    finish(
        kind,
        path,
        last_fit,
        iterations_run,
        resolved.config,
        warnings,
        separation_events,
        started,
    )
}

#[allow(clippy::too_many_arguments)]
fn finish(
    estimator: EstimatorKind,
    path: IteratePath,
    sieve: Option<SieveFit>,
    iterations_run: usize,
    config: SsgdConfig,
    mut warnings: Vec<String>,
    separation_events: usize,
    started: Instant,
) -> Result<FitResult> {
    let trim = config.trim.min(iterations_run.saturating_sub(1));
    let beta_avg = path.average(trim)?;
    let beta_final = path.betas.last().cloned().expect("path holds the start");
    let numeraire = config.numeraire;
    let headline = match estimator {
        EstimatorKind::Average => &beta_avg,
        _ => &beta_final,
    };
    let beta_normalized = match normalize_scale_at(headline, numeraire) {
        Ok(v) => Some(v),
        Err(e) => {
            warnings.push(e.to_string());
            None
        }
    };
    Ok(FitResult {
        estimator,
        beta_final,
        beta_avg,
        beta_normalized,
        numeraire,
        sieve,
        path,
        iterations_run,
        config,
        vcov: None,
        warnings,
        separation_events,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Sieve SGD with full-sample updates; reports the last iterate.
pub fn run_ssgd_group(data: &Dataset, config: &SsgdConfig, beta0: Option<&Beta>) -> Result<FitResult> {
    run_sieve(data, config, beta0, EstimatorKind::Group)
}

/// Sieve SGD reported through the iterate average.
pub fn run_ssgd_average(data: &Dataset, config: &SsgdConfig, beta0: Option<&Beta>) -> Result<FitResult> {
    run_sieve(data, config, beta0, EstimatorKind::Average)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        let b = |v: &[f64]| Beta::new(v.to_vec()).unwrap();
        assert_eq!(normalize_scale(&b(&[1.0, 2.0, -4.0])).unwrap(), vec![2.0, -4.0]);
        assert_eq!(normalize_scale(&b(&[2.0, 4.0, -8.0])).unwrap(), vec![2.0, -4.0]);
        assert!(matches!(
            normalize_scale(&b(&[1e-15, 1.0, 1.0])),
            Err(SsgdError::DegenerateNumeraire { index: 0, .. })
        ));
        assert_eq!(normalize_scale_at(&b(&[1e-15, 2.0, 1.0]), 1).unwrap(), vec![5e-16, 0.5]);
    }

    #[test]
    fn single_and_two_term_averages() {
        let path = IteratePath {
            betas: vec![
                Beta::zeros(2),
                Beta::new(vec![1.0, 0.0]).unwrap(),
                Beta::new(vec![0.0, 1.0]).unwrap(),
            ],
            grad_norms: vec![0.0, 0.0],
            sieve_fits: VecDeque::new(),
        };
        assert_eq!(path.average(0).unwrap().as_slice(), &[0.5, 0.5]);
        assert_eq!(path.average(1).unwrap().as_slice(), &[1.0, 0.0]);
        assert!(path.average(2).is_err());
    }

    #[test]
    fn hand_computed_group_update() {
        // x = (1, −1), y = (1, 0), ĝ ≡ 0.5: mean gradient −0.5, so β gains 0.5 when γ_k C = 1.
        let data = Dataset::from_rows(&[vec![1.0], vec![-1.0]], vec![1.0, 0.0]).unwrap();
        let half = LinkFunction::custom(|_| 0.5, 1.0).unwrap();
        let config = SsgdConfig {
            gamma1: 2.0,
            gamma: 1.0,
            conditioning: Some(DMatrix::from_element(1, 1, 0.5)),
            ..SsgdConfig::default()
        };
        let out = group_update(&Beta::new(vec![0.25]).unwrap(), &data, &half, 1, &config).unwrap();
        assert_eq!(out.as_slice(), &[0.75]);
    }

    #[test]
    fn hand_computed_known_g_step() {
        // One step from β = (0, 0) with logistic g on the row (2, −1), y = 1:
        // residual 0.5 − 1 = −0.5, γ_1 = 2, C = I, so β = 2·0.5·(2, −1) = (2, −1).
        let data =
            Dataset::from_rows(&[vec![2.0, -1.0], vec![0.5, 1.0], vec![-1.0, 0.3]], vec![1.0, 0.0, 1.0]).unwrap();
        let mut order: Vec<usize> = (0..3).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(11));
        let first = order[0];
        let config = SsgdConfig {
            iterations: Some(1),
            seed: 11,
            ..SsgdConfig::default()
        };
        let fit = run_sgd_known_g(&data, &LinkFunction::logistic(), &config, &Beta::zeros(2)).unwrap();
        let x = data.row(first);
        let r = 0.5 - data.y()[first];
        let expected = [-2.0 * r * x[0], -2.0 * r * x[1]];
        assert_eq!(fit.beta_final.as_slice(), &expected);
    }

    #[test]
    fn known_g_rejects_more_iterations_than_rows() {
        let data = Dataset::from_rows(&[vec![1.0], vec![-1.0], vec![0.5]], vec![1.0, 0.0, 1.0]).unwrap();
        let config = SsgdConfig {
            iterations: Some(4),
            ..SsgdConfig::default()
        };
        assert!(matches!(
            run_sgd_known_g(&data, &LinkFunction::logistic(), &config, &Beta::zeros(1)),
            Err(SsgdError::InvalidConfig(_))
        ));
    }
}
