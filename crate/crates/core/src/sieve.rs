//! Polynomial sieve over a scalar index and the series-logit fit of the link.
//!
//! The basis standardizes the index, `u = (z − center) / scale`, forms the
//! monomials `u¹ … u^q`, centers them at their training means and maps them
//! through an upper-triangular transform so that, on the training sample, the
//! `q` columns have mean zero and identity second-moment matrix. The intercept
//! is carried separately as `π₀`. Raw powers and these columns span the same
//! space together with the intercept, so fitted probabilities do not depend on
//! the choice; the orthonormal columns only make Newton well conditioned.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SsgdError};
use crate::logit::{logistic, newton_logit, NewtonOptions};
use crate::model::IndexCdf;
use crate::serde_helpers::matrix_rows;

/// Probabilities leaving the sieve are kept this far from 0 and 1.
pub const PROB_CLAMP: f64 = 1e-12;

// Relative norm below which a Gram–Schmidt residual counts as linearly dependent.
const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SieveBasis {
    order: usize,
    center: f64,
    scale: f64,
    monomial_means: Vec<f64>,
    /// Column `k` holds the coefficients of basis function `k` on the centered monomials.
    #[serde(with = "matrix_rows")]
    transform: DMatrix<f64>,
    condition_number: f64,
    max_row_norm: f64,
}

impl SieveBasis {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn transform(&self) -> &DMatrix<f64> {
        &self.transform
    }

    /// Condition number of the triangular orthonormalizer.
    pub fn condition_number(&self) -> f64 {
        self.condition_number
    }

    /// Largest Euclidean norm of a basis row on the training sample.
    pub fn max_row_norm(&self) -> f64 {
        self.max_row_norm
    }

    pub fn includes_intercept(&self) -> bool {
        true
    }

    /// Writes the `q` non-constant basis values at `z` into `out`.
    pub fn eval_into(&self, z: f64, out: &mut [f64]) {
        let q = self.order;
        let u = (z - self.center) / self.scale;
        let mut power = 1.0;
        let mut centered = [0.0; MAX_ORDER];
        for (j, c) in centered[..q].iter_mut().enumerate() {
            power *= u;
            *c = power - self.monomial_means[j];
        }
        for (k, o) in out.iter_mut().enumerate().take(q) {
            let mut v = 0.0;
            for (j, c) in centered.iter().enumerate().take(k + 1) {
                v += c * self.transform[(j, k)];
            }
            *o = v;
        }
    }

    /// Basis values and their derivatives with respect to `z`.
    pub fn eval_with_derivative(&self, z: f64, values: &mut [f64], derivs: &mut [f64]) {
        let q = self.order;
        let u = (z - self.center) / self.scale;
        let mut centered = [0.0; MAX_ORDER];
        let mut dcentered = [0.0; MAX_ORDER];
        let mut power_below = 1.0; // u^(j-1)
        for j in 0..q {
            let deg = (j + 1) as f64;
            dcentered[j] = deg * power_below / self.scale;
            power_below *= u;
            centered[j] = power_below - self.monomial_means[j];
        }
        for k in 0..q {
            let (mut v, mut d) = (0.0, 0.0);
            for j in 0..=k {
                let t = self.transform[(j, k)];
                v += centered[j] * t;
                d += dcentered[j] * t;
            }
            values[k] = v;
            derivs[k] = d;
        }
    }

    /// `n × q` matrix of basis values.
    pub fn design(&self, z: &[f64]) -> DMatrix<f64> {
        let q = self.order;
        let mut m = DMatrix::zeros(z.len(), q);
        let mut row = vec![0.0; q];
        for (i, &zi) in z.iter().enumerate() {
            self.eval_into(zi, &mut row);
            for k in 0..q {
                m[(i, k)] = row[k];
            }
        }
        m
    }

    /// `n × (q + 1)` design with a leading intercept column.
    pub fn design_with_intercept(&self, z: &[f64]) -> DMatrix<f64> {
        let q = self.order;
        let mut m = DMatrix::zeros(z.len(), q + 1);
        let mut row = vec![0.0; q];
        for (i, &zi) in z.iter().enumerate() {
            self.eval_into(zi, &mut row);
            m[(i, 0)] = 1.0;
            for k in 0..q {
                m[(i, k + 1)] = row[k];
            }
        }
        m
    }
}

/// Largest supported sieve order.
pub const MAX_ORDER: usize = 16;

/// Builds the empirically orthonormal basis of order `q` on the sample `z`.
pub fn build_basis(z: &[f64], q: usize) -> Result<SieveBasis> {
    let n = z.len();
    if q == 0 || q > MAX_ORDER {
        return Err(SsgdError::InvalidConfig(format!(
            "sieve order must be between 1 and {MAX_ORDER}, got {q}"
        )));
    }
    if n <= q + 1 {
        return Err(SsgdError::RankDeficient {
            requested: q,
            achievable: n.saturating_sub(2),
        });
    }
    if let Some(i) = z.iter().position(|v| !v.is_finite()) {
        return Err(SsgdError::NumericOverflow { row: Some(i) });
    }
    let nf = n as f64;
    let center = z.iter().sum::<f64>() / nf;
    let var = z.iter().map(|v| (v - center).powi(2)).sum::<f64>() / nf;
    let scale = var.sqrt();
    if !(scale > 0.0) || scale <= f64::EPSILON * center.abs() {
        return Err(SsgdError::DegenerateIndex);
    }

    // Centered monomial columns.
    let mut monomial_means = Vec::with_capacity(q);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(q);
    for j in 1..=q {
        let col: Vec<f64> = z.iter().map(|v| ((v - center) / scale).powi(j as i32)).collect();
        let m = col.iter().sum::<f64>() / nf;
        monomial_means.push(m);
        cols.push(col.into_iter().map(|v| v - m).collect());
    }

    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / nf;

    // Modified Gram–Schmidt with one reorthogonalization pass, tracking the
    // triangular coefficients so new points can be mapped later.
    let mut transform = DMatrix::<f64>::zeros(q, q);
    let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(q);
    for k in 0..q {
        let mut v = cols[k].clone();
        let original = dot(&v, &v).sqrt();
        let mut coef = DVector::<f64>::zeros(q);
        coef[k] = 1.0;
        for _pass in 0..2 {
            for i in 0..k {
                let alpha = dot(&v, &ortho[i]);
                for (vi, oi) in v.iter_mut().zip(&ortho[i]) {
                    *vi -= alpha * oi;
                }
                for r in 0..q {
                    coef[r] -= alpha * transform[(r, i)];
                }
            }
        }
        let norm = dot(&v, &v).sqrt();
        if !(original > 0.0) || norm <= RANK_TOL * original {
            return Err(SsgdError::RankDeficient {
                requested: q,
                achievable: k,
            });
        }
        for vi in v.iter_mut() {
            *vi /= norm;
        }
        for r in 0..q {
            transform[(r, k)] = coef[r] / norm;
        }
        ortho.push(v);
    }

    let sv = transform.clone().svd(false, false).singular_values;
    let condition_number = sv.max() / sv.min();
    if !condition_number.is_finite() {
        return Err(SsgdError::RankDeficient {
            requested: q,
            achievable: q - 1,
        });
    }
    let max_row_norm = (0..n)
        .map(|i| ortho.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt())
        .fold(0.0, f64::max);

    Ok(SieveBasis {
        order: q,
        center,
        scale,
        monomial_means,
        transform,
        condition_number,
        max_row_norm,
    })
}

/// Series-logit estimate of the link on one index sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SieveFit {
    /// Intercept followed by the `q` basis coefficients.
    pub pi: Vec<f64>,
    pub basis: SieveBasis,
    /// Mean log-likelihood at `pi`.
    pub loglik: f64,
    pub loglik_path: Vec<f64>,
    pub newton_iters: usize,
    pub converged: bool,
    pub separation_suspected: bool,
    pub score_norm: f64,
}

impl SieveFit {
    /// Linear predictor `π₀ + R(z)ᵀπ`.
    pub fn linear_predictor(&self, z: f64) -> f64 {
        let q = self.basis.order;
        let mut r = [0.0; MAX_ORDER];
        self.basis.eval_into(z, &mut r[..q]);
        self.pi[0] + r[..q].iter().zip(&self.pi[1..]).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Fitted probability, clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]`.
    pub fn prob(&self, z: f64) -> f64 {
        logistic(self.linear_predictor(z)).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    }

    /// Analytic derivative of the unclamped fitted probability in `z`.
    pub fn density(&self, z: f64) -> f64 {
        let q = self.basis.order;
        let mut r = [0.0; MAX_ORDER];
        let mut dr = [0.0; MAX_ORDER];
        self.basis.eval_with_derivative(z, &mut r[..q], &mut dr[..q]);
        let eta = self.pi[0] + r[..q].iter().zip(&self.pi[1..]).map(|(a, b)| a * b).sum::<f64>();
        let slope: f64 = dr[..q].iter().zip(&self.pi[1..]).map(|(a, b)| a * b).sum();
        let l = logistic(eta);
        l * (1.0 - l) * slope
    }
}

impl IndexCdf for SieveFit {
    fn cdf(&self, z: f64) -> f64 {
        self.prob(z)
    }
}

/// Fits the series logit of `y` on `(1, R(z))`.
pub fn fit_series_logit(z: &[f64], y: &[f64], q: usize) -> Result<SieveFit> {
    fit_series_logit_from(z, y, q, None)
}

/// As [`fit_series_logit`], starting Newton from `init` when it has the right length.
pub fn fit_series_logit_from(z: &[f64], y: &[f64], q: usize, init: Option<&[f64]>) -> Result<SieveFit> {
    if z.len() != y.len() {
        return Err(SsgdError::DimensionMismatch {
            what: "series logit outcome vector",
            expected: z.len(),
            found: y.len(),
        });
    }
    let basis = build_basis(z, q)?;
    let design = basis.design_with_intercept(z);
    let start = init.filter(|s| s.len() == q + 1).map(DVector::from_column_slice);
    let sol = newton_logit(&design, y, start.as_ref(), &NewtonOptions::default())?;
    Ok(SieveFit {
        pi: sol.coef.iter().copied().collect(),
        basis,
        loglik: sol.loglik,
        loglik_path: sol.loglik_path,
        newton_iters: sol.iterations,
        converged: sol.converged,
        separation_suspected: sol.separation_suspected,
        score_norm: sol.score_norm,
    })
}

/// Fitted link probabilities at new index values.
pub fn sieve_cdf(fit: &SieveFit, z_new: &[f64]) -> Result<Vec<f64>> {
    if let Some(i) = z_new.iter().position(|v| !v.is_finite()) {
        return Err(SsgdError::NumericOverflow { row: Some(i) });
    }
    Ok(z_new.iter().map(|&z| fit.prob(z)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(b: &SieveBasis, z: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let d = b.design(z);
        let n = z.len() as f64;
        let means = (0..b.order()).map(|k| d.column(k).sum() / n).collect();
        (means, d.transpose() * &d / n)
    }

    #[test]
    fn first_order_basis_is_standardization() {
        let z = [3.0, -1.0, 4.0, 1.0, 5.0, 9.0, 2.0];
        let b = build_basis(&z, 1).unwrap();
        let d = b.design(&z);
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        for (i, &zi) in z.iter().enumerate() {
            assert!((d[(i, 0)] - (zi - mean) / sd).abs() < 1e-12);
        }
        let (m, s) = moments(&b, &z);
        assert!(m[0].abs() < 1e-12);
        assert!((s[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_and_rank_deficient_inputs() {
        assert_eq!(build_basis(&[2.0; 10], 2), Err(SsgdError::DegenerateIndex));
        let two_points: Vec<f64> = (0..10).map(|i| (i % 2) as f64).collect();
        assert_eq!(
            build_basis(&two_points, 3),
            Err(SsgdError::RankDeficient {
                requested: 3,
                achievable: 1
            })
        );
    }

    #[test]
    fn derivative_matches_difference_quotient() {
        let z: Vec<f64> = (0..40).map(|i| (i as f64 * 0.77).sin() * 3.0 + 1.0).collect();
        let b = build_basis(&z, 4).unwrap();
        let (mut v, mut d) = ([0.0; 4], [0.0; 4]);
        let (mut hi, mut lo) = ([0.0; 4], [0.0; 4]);
        let h = 1e-6;
        for &at in &[-2.0, 0.3, 4.1] {
            b.eval_with_derivative(at, &mut v, &mut d);
            b.eval_into(at + h, &mut hi);
            b.eval_into(at - h, &mut lo);
            for k in 0..4 {
                let fd = (hi[k] - lo[k]) / (2.0 * h);
                assert!((fd - d[k]).abs() < 1e-6 * (1.0 + d[k].abs()), "k={k}: {fd} vs {}", d[k]);
            }
        }
    }

    #[test]
    fn zero_coefficients_give_one_half() {
        let z: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = (0..20).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let mut fit = fit_series_logit(&z, &y, 2).unwrap();
        fit.pi = vec![0.0; 3];
        let p = sieve_cdf(&fit, &[-1e3, 0.0, 7.5, 1e3]).unwrap();
        assert!(p.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn constant_outcome_flags_separation() {
        let z: Vec<f64> = (0..30).map(|i| i as f64 / 7.0).collect();
        let fit = fit_series_logit(&z, &[1.0; 30], 2).unwrap();
        assert!(fit.separation_suspected);
        assert!(!fit.converged);
        assert!(fit.loglik_path.windows(2).all(|w| w[1] >= w[0]));
    }
}
