//! Estimator settings, the learning-rate schedule and default tuning rules.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SsgdError};
use crate::serde_helpers::opt_matrix_rows;

/// Starting point for the sieve estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitStrategy {
    /// Slopes of a full-sample logit of `y` on `(1, X)`.
    Logit,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsgdConfig {
    /// Learning-rate scale `γ₁ > 1`.
    pub gamma1: f64,
    /// Learning-rate exponent `γ ∈ (0.5, 1]`.
    pub gamma: f64,
    /// Conditioning matrix `C`; `None` means the identity.
    #[serde(with = "opt_matrix_rows", default)]
    pub conditioning: Option<DMatrix<f64>>,
    /// Iteration count `K`; `None` selects `K = n`.
    pub iterations: Option<usize>,
    /// Number of polynomial powers in the sieve; `None` selects the default rule.
    pub sieve_powers: Option<usize>,
    /// Iterates dropped from the end of the average.
    pub trim: usize,
    pub seed: u64,
    pub init: InitStrategy,
    /// Refit the sieve after every `refit_every`-th update.
    pub refit_every: usize,
    /// Stop once `‖β_k − β_{k−1}‖` falls below this.
    pub early_stop_tol: Option<f64>,
    /// Number of intermediate sieve fits kept on the path.
    pub retain_sieve_fits: usize,
    /// Coefficient used as the scale numeraire.
    pub numeraire: usize,
}

impl Default for SsgdConfig {
    fn default() -> Self {
        Self {
            gamma1: 2.0,
            gamma: 0.8,
            conditioning: None,
            iterations: None,
            sieve_powers: None,
            trim: 0,
            seed: 0,
            init: InitStrategy::Logit,
            refit_every: 1,
            early_stop_tol: None,
            retain_sieve_fits: 0,
            numeraire: 0,
        }
    }
}

/// Step size `γ_k = γ₁ k^{−γ}`.
pub fn learning_rate(k: usize, config: &SsgdConfig) -> f64 {
    assert!(k >= 1, "iterations are counted from 1");
    config.gamma1 * (k as f64).powf(-config.gamma)
}

/// Outcome of [`default_tuning`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tuning {
    pub iterations: usize,
    pub sieve_powers: usize,
    /// Admissible iteration window `[⌈n^{1/(2γ)}⌉, ⌊n^{1/γ}⌋]`.
    pub window: (usize, usize),
    pub warnings: Vec<String>,
}

/// Default `(K, q)` for `n` observations and `p` regressors.
pub fn default_tuning(n: usize, p: usize, gamma: f64) -> Tuning {
    let nf = n as f64;
    let iterations = n;
    let sieve_powers = (nf.powf(0.2).floor() as usize).clamp(3, 8);
    let window = iteration_window(n, gamma);
    let mut warnings = Vec::new();
    let ratio = p as f64 * (iterations as f64).powf(-gamma);
    if ratio > 0.5 {
        warnings.push(format!(
            "p K^(-gamma) = {ratio:.3} exceeds 0.5; too many regressors for {iterations} iterations"
        ));
    }
    if n < 10 {
        warnings.push(format!("tuning rules assume n >= 10, got {n}"));
    }
    Tuning {
        iterations,
        sieve_powers,
        window,
        warnings,
    }
}

pub fn iteration_window(n: usize, gamma: f64) -> (usize, usize) {
    let nf = n as f64;
    let lo = nf.powf(1.0 / (2.0 * gamma)).ceil() as usize;
    let hi = nf.powf(1.0 / gamma).floor() as usize;
    (lo, hi)
}

pub fn validate_gamma(gamma1: f64, gamma: f64) -> Result<()> {
    if !(gamma1 > 1.0 && gamma1.is_finite()) {
        return Err(SsgdError::InvalidConfig(format!("gamma1 must exceed 1, got {gamma1}")));
    }
    if !(gamma > 0.5 && gamma <= 1.0) {
        return Err(SsgdError::InvalidConfig(format!(
            "gamma must lie in (0.5, 1], got {gamma}"
        )));
    }
    Ok(())
}

/// Checks that `c` is a symmetric positive-definite `p × p` matrix and rescales
/// it to unit spectral norm.
pub fn normalize_conditioning(c: &DMatrix<f64>, p: usize) -> Result<DMatrix<f64>> {
    if c.shape() != (p, p) {
        return Err(SsgdError::InvalidConfig(format!(
            "conditioning matrix must be {p}x{p}, got {}x{}",
            c.nrows(),
            c.ncols()
        )));
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(SsgdError::InvalidConfig(
            "conditioning matrix has non-finite entries".into(),
        ));
    }
    let scale = c.amax().max(f64::MIN_POSITIVE);
    if (c - c.transpose()).amax() > 1e-12 * scale {
        return Err(SsgdError::InvalidConfig("conditioning matrix is not symmetric".into()));
    }
    let eig = SymmetricEigen::new(c.clone()).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 0.0) {
        return Err(SsgdError::InvalidConfig(format!(
            "conditioning matrix is not positive definite (smallest eigenvalue {lo:e})"
        )));
    }
    Ok(c / hi)
}

/// A config with every automatic choice made, plus any warnings raised.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub config: SsgdConfig,
    pub iterations: usize,
    pub sieve_powers: usize,
    pub conditioning: DMatrix<f64>,
    pub warnings: Vec<String>,
}

impl SsgdConfig {
    /// Validates the settings for an `n × p` problem and fills in defaults.
    pub fn resolve(&self, n: usize, p: usize) -> Result<Resolved> {
        validate_gamma(self.gamma1, self.gamma)?;
        if self.refit_every == 0 {
            return Err(SsgdError::InvalidConfig("refit_every must be at least 1".into()));
        }
        if self.numeraire >= p {
            return Err(SsgdError::InvalidConfig(format!(
                "numeraire index {} is out of range for {p} coefficients",
                self.numeraire
            )));
        }
        if let Some(tol) = self.early_stop_tol {
            if !(tol > 0.0) {
                return Err(SsgdError::InvalidConfig("early-stop tolerance must be positive".into()));
            }
        }
        let tuning = default_tuning(n, p, self.gamma);
        let mut warnings = Vec::new();
        let iterations = match self.iterations {
            None => tuning.iterations,
            Some(0) => return Err(SsgdError::InvalidConfig("iteration count must be positive".into())),
            Some(k) => {
                let (lo, hi) = tuning.window;
                if k < lo || k > hi {
                    warnings.push(format!(
                        "K = {k} lies outside the admissible window [{lo}, {hi}] for n = {n}"
                    ));
                }
                k
            }
        };
        let sieve_powers = match self.sieve_powers {
            Some(0) => return Err(SsgdError::InvalidConfig("sieve order must be at least 1".into())),
            Some(q) => q,
            None => {
                let cap = n.saturating_sub(2).max(1);
                if tuning.sieve_powers > cap {
                    warnings.push(format!(
                        "sieve order reduced from {} to {cap} for n = {n}",
                        tuning.sieve_powers
                    ));
                }
                tuning.sieve_powers.min(cap)
            }
        };
        if self.trim >= iterations {
            return Err(SsgdError::InvalidConfig(format!(
                "trim {} must be smaller than K = {iterations}",
                self.trim
            )));
        }
        let conditioning = match &self.conditioning {
            None => DMatrix::identity(p, p),
            Some(c) => normalize_conditioning(c, p)?,
        };
        let mut config = self.clone();
        config.iterations = Some(iterations);
        config.sieve_powers = Some(sieve_powers);
        config.conditioning = Some(conditioning.clone());
        Ok(Resolved {
            config,
            iterations,
            sieve_powers,
            conditioning,
            warnings,
        })
    }
}
