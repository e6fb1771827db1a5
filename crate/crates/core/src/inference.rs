//! Plug-in sandwich covariance for the averaged sieve estimator and the
//! confidence intervals built from it.
//!
//! With `z_i = x_iᵀβ` and the fitted link `ĝ`,
//!
//! ```text
//! Σ̂₁ = (1/n) Σ ĝ(z_i)(1 − ĝ(z_i)) x_i x_iᵀ
//! Σ̂₂ = (1/n) Σ ĝ′(z_i) x_i x_iᵀ − f̂
//! f̂  = [(1/n) Σ_k x_k R(z_k)ᵀ] · [(1/n) Σ_i R′(z_i) ĝ′(z_i) x_iᵀ]
//! V̂  = Σ̂₂⁻¹ Σ̂₁ Σ̂₂⁻ᵀ / n
//! ```
//!
//! where `R` is the fitted sieve basis without its constant column. The
//! whitened variant replaces the regressors by `W x` with `W = (E xxᵀ)^{−1/2}`
//! and adds the index terms `z·l` to the meat and `l βᵀ` to the bread, `l`
//! holding the elementwise reciprocals of `(E xxᵀ)^{1/2} β`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Result, SsgdError};
use crate::estimator::FitResult;
use crate::model::{Beta, Dataset};
use crate::reduce;
use crate::serde_helpers::matrix_rows;
use crate::sieve::{fit_series_logit_from, SieveFit, MAX_ORDER};

/// Reciprocal condition number below which the bread counts as singular.
pub const RCOND_MIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SandwichOptions {
    /// Subtract the link-estimation term `f̂` from the bread.
    pub include_f: bool,
    /// Use the whitened-regressor form of the meat and bread.
    pub whitened: bool,
}

impl Default for SandwichOptions {
    fn default() -> Self {
        Self {
            include_f: true,
            whitened: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichVcov {
    #[serde(with = "matrix_rows")]
    pub sigma1_hat: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub sigma2_hat: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub vcov: DMatrix<f64>,
    pub f_correction_included: bool,
    pub whitened: bool,
    /// Reciprocal condition number of the bread.
    pub bread_rcond: f64,
    /// Smallest eigenvalue of the meat.
    pub meat_min_eigenvalue: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub estimate: f64,
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
}

fn check_inputs(data: &Dataset, beta: &Beta) -> Result<DVector<f64>> {
    if beta.len() != data.p() {
        return Err(SsgdError::DimensionMismatch {
            what: "coefficient vector",
            expected: data.p(),
            found: beta.len(),
        });
    }
    let z = data.index(beta);
    if let Some(row) = z.iter().position(|v| !v.is_finite()) {
        return Err(SsgdError::NumericOverflow { row: Some(row) });
    }
    Ok(z)
}

// (1/n) Σ w_i x_i x_iᵀ, accumulated on the lower triangle.
fn weighted_second_moment(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let packed = reduce::sum_vec(n, p * p, |lo, hi, acc| {
        for i in lo..hi {
            for a in 0..p {
                let wa = w[i] * x[(i, a)];
                for b in 0..=a {
                    acc[a * p + b] += wa * x[(i, b)];
                }
            }
        }
    });
    let mut m = DMatrix::zeros(p, p);
    for a in 0..p {
        for b in 0..=a {
            let v = packed[a * p + b] / n as f64;
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
    m
}

/// Meat `(1/n) Σ ĝ(z_i)(1 − ĝ(z_i)) x_i x_iᵀ`.
pub fn estimate_sigma1(data: &Dataset, beta: &Beta, fit: &SieveFit) -> Result<DMatrix<f64>> {
    let z = check_inputs(data, beta)?;
    let w: Vec<f64> = z.iter().map(|&u| fit.prob(u) * (1.0 - fit.prob(u))).collect();
    Ok(weighted_second_moment(data.x(), &w))
}

/// Link-estimation term `f̂ = A·B` in its factored form, `A = (1/n) Σ x R(z)ᵀ`
/// and `B = (1/n) Σ R′(z) ĝ′(z) xᵀ`.
pub fn f_correction(data: &Dataset, beta: &Beta, fit: &SieveFit) -> Result<DMatrix<f64>> {
    let z = check_inputs(data, beta)?;
    let (n, p) = (data.n(), data.p());
    let q = fit.basis.order();
    let x = data.x();
    let packed = reduce::sum_vec(n, 2 * p * q, |lo, hi, acc| {
        let mut r = [0.0; MAX_ORDER];
        let mut dr = [0.0; MAX_ORDER];
        for i in lo..hi {
            fit.basis.eval_with_derivative(z[i], &mut r[..q], &mut dr[..q]);
            let dens = fit.density(z[i]);
            for a in 0..p {
                let xa = x[(i, a)];
                for k in 0..q {
                    acc[a * q + k] += xa * r[k];
                    acc[p * q + k * p + a] += dr[k] * dens * xa;
                }
            }
        }
    });
    let inv_n = 1.0 / n as f64;
    let a = DMatrix::from_fn(p, q, |row, k| packed[row * q + k] * inv_n);
    let b = DMatrix::from_fn(q, p, |k, col| packed[p * q + k * p + col] * inv_n);
    Ok(a * b)
}

/// Bread `(1/n) Σ ĝ′(z_i) x_i x_iᵀ`, minus `f̂` when `include_f`.
pub fn estimate_sigma2(data: &Dataset, beta: &Beta, fit: &SieveFit, include_f: bool) -> Result<DMatrix<f64>> {
    let z = check_inputs(data, beta)?;
    let w: Vec<f64> = z.iter().map(|&u| fit.density(u)).collect();
    let mut m = weighted_second_moment(data.x(), &w);
    if include_f {
        m -= f_correction(data, beta, fit)?;
    }
    Ok(m)
}

fn symmetric_power(m: &DMatrix<f64>, power: f64) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.min() <= 0.0 {
        return Err(SsgdError::SingularBread {
            rcond: (eig.eigenvalues.min() / eig.eigenvalues.max()).max(0.0),
        });
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.powf(power)));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

// Meat and bread of the whitened form.
fn whitened_pieces(
    data: &Dataset,
    beta: &Beta,
    fit: &SieveFit,
    include_f: bool,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let z = check_inputs(data, beta)?;
    let (n, p) = (data.n(), data.p());
    let ones = vec![1.0; n];
    let second = weighted_second_moment(data.x(), &ones);
    let w = symmetric_power(&second, -0.5)?;
    let root = symmetric_power(&second, 0.5)?;
    let l_raw = &root * beta.as_vector();
    if let Some(j) = l_raw.iter().position(|v| v.abs() < 1e-12) {
        return Err(SsgdError::InvalidConfig(format!(
            "whitened index has a zero component at {j}; use the unwhitened sandwich"
        )));
    }
    let l = l_raw.map(|v| 1.0 / v);

    // Meat on u_i = W x_i + z_i l.
    let wx = data.x() * w.transpose();
    let u = DMatrix::from_fn(n, p, |i, a| wx[(i, a)] + z[i] * l[a]);
    let g: Vec<f64> = z.iter().map(|&v| fit.prob(v) * (1.0 - fit.prob(v))).collect();
    let meat = weighted_second_moment(&u, &g);

    // Bread (I + l βᵀ) W (E[ĝ′ x xᵀ] − f̂).
    let dens: Vec<f64> = z.iter().map(|&v| fit.density(v)).collect();
    let mut gxx = weighted_second_moment(data.x(), &dens);
    if include_f {
        gxx -= f_correction(data, beta, fit)?;
    }
    let lift = DMatrix::identity(p, p) + &l * beta.as_vector().transpose();
    Ok((meat, lift * w * gxx))
}

fn assemble(sigma1: DMatrix<f64>, sigma2: DMatrix<f64>, n: usize, opts: SandwichOptions) -> Result<SandwichVcov> {
    let sv = sigma2.clone().svd(false, false).singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    let rcond = if smax > 0.0 { smin / smax } else { 0.0 };
    if !(rcond >= RCOND_MIN) {
        return Err(SsgdError::SingularBread { rcond });
    }
    let inv = sigma2.clone().try_inverse().ok_or(SsgdError::SingularBread { rcond })?;
    let raw = &inv * &sigma1 * inv.transpose() / n as f64;
    let vcov = (&raw + raw.transpose()) * 0.5;
    let meat_min_eigenvalue = SymmetricEigen::new(sigma1.clone()).eigenvalues.min();
    Ok(SandwichVcov {
        sigma1_hat: sigma1,
        sigma2_hat: sigma2,
        vcov,
        f_correction_included: opts.include_f,
        whitened: opts.whitened,
        bread_rcond: rcond,
        meat_min_eigenvalue,
        n,
    })
}

/// Sandwich covariance of the estimate `beta` given a link fit at `Xβ`.
pub fn sandwich(data: &Dataset, beta: &Beta, fit: &SieveFit, opts: SandwichOptions) -> Result<SandwichVcov> {
    let (sigma1, sigma2) = if opts.whitened {
        whitened_pieces(data, beta, fit, opts.include_f)?
    } else {
        (
            estimate_sigma1(data, beta, fit)?,
            estimate_sigma2(data, beta, fit, opts.include_f)?,
        )
    };
    assemble(sigma1, sigma2, data.n(), opts)
}

/// Refits the sieve at the averaged estimate and computes its sandwich.
pub fn sandwich_for_result(
    data: &Dataset,
    result: &FitResult,
    opts: SandwichOptions,
) -> Result<(SieveFit, SandwichVcov)> {
    let beta = &result.beta_avg;
    let q = match (&result.sieve, result.config.sieve_powers) {
        (Some(f), _) => f.basis.order(),
        (None, Some(q)) => q,
        (None, None) => {
            return Err(SsgdError::InvalidConfig(
                "result carries no sieve order to estimate the link with".into(),
            ))
        }
    };
    let z = check_inputs(data, beta)?;
    let init = result.sieve.as_ref().map(|f| f.pi.as_slice());
    let fit = fit_series_logit_from(z.as_slice(), data.y(), q, init)?;
    let vcov = sandwich(data, beta, &fit, opts)?;
    Ok((fit, vcov))
}

fn critical_value(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(SsgdError::InvalidLevel(level));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf((1.0 + level) / 2.0))
}

fn check_vcov(vcov: &SandwichVcov, p: usize) -> Result<()> {
    if vcov.vcov.shape() != (p, p) {
        return Err(SsgdError::DimensionMismatch {
            what: "covariance matrix",
            expected: p,
            found: vcov.vcov.nrows(),
        });
    }
    Ok(())
}

/// `β_j ± z_{(1+level)/2} √V_jj` for every coefficient.
pub fn intervals_for(beta: &Beta, vcov: &SandwichVcov, level: f64) -> Result<Vec<Interval>> {
    let crit = critical_value(level)?;
    check_vcov(vcov, beta.len())?;
    Ok((0..beta.len())
        .map(|j| {
            let se = vcov.vcov[(j, j)].max(0.0).sqrt();
            Interval {
                estimate: beta[j],
                std_error: se,
                lower: beta[j] - crit * se,
                upper: beta[j] + crit * se,
            }
        })
        .collect())
}

/// Per-coefficient intervals around the averaged estimate.
pub fn confidence_intervals(result: &FitResult, vcov: &SandwichVcov, level: f64) -> Result<Vec<Interval>> {
    intervals_for(&result.beta_avg, vcov, level)
}

fn check_direction(direction: &DVector<f64>, p: usize) -> Result<()> {
    if direction.len() != p {
        return Err(SsgdError::DimensionMismatch {
            what: "direction",
            expected: p,
            found: direction.len(),
        });
    }
    if (direction.norm() - 1.0).abs() > 1e-9 {
        return Err(SsgdError::InvalidConfig(format!(
            "direction must have unit length, got norm {}",
            direction.norm()
        )));
    }
    Ok(())
}

/// Interval for the linear combination `ςᵀβ`, `‖ς‖ = 1`.
pub fn directional_interval(
    beta: &Beta,
    vcov: &SandwichVcov,
    direction: &DVector<f64>,
    level: f64,
) -> Result<Interval> {
    let crit = critical_value(level)?;
    check_vcov(vcov, beta.len())?;
    check_direction(direction, beta.len())?;
    let estimate = direction.dot(beta.as_vector());
    let se = (direction.transpose() * &vcov.vcov * direction)[(0, 0)].max(0.0).sqrt();
    Ok(Interval {
        estimate,
        std_error: se,
        lower: estimate - crit * se,
        upper: estimate + crit * se,
    })
}

/// `ςᵀ(β − β₀) / √(ςᵀ V ς)`.
pub fn studentized(beta: &Beta, truth: &Beta, vcov: &SandwichVcov, direction: &DVector<f64>) -> Result<f64> {
    check_vcov(vcov, beta.len())?;
    check_direction(direction, beta.len())?;
    if truth.len() != beta.len() {
        return Err(SsgdError::DimensionMismatch {
            what: "true coefficients",
            expected: beta.len(),
            found: truth.len(),
        });
    }
    let diff = beta.as_vector() - truth.as_vector();
    let var = (direction.transpose() * &vcov.vcov * direction)[(0, 0)];
    Ok(direction.dot(&diff) / var.sqrt())
}

/// Delta-method intervals for `β_j / β_numeraire`, `j ≠ numeraire`.
pub fn normalized_intervals(beta: &Beta, vcov: &SandwichVcov, numeraire: usize, level: f64) -> Result<Vec<Interval>> {
    let crit = critical_value(level)?;
    let p = beta.len();
    check_vcov(vcov, p)?;
    let ratios = crate::estimator::normalize_scale_at(beta, numeraire)?;
    let base = beta[numeraire];
    let others = (0..p).filter(|&j| j != numeraire);
    Ok(others
        .zip(ratios)
        .map(|(j, r)| {
            let mut grad = DVector::zeros(p);
            grad[j] = 1.0 / base;
            grad[numeraire] = -r / base;
            let se = (grad.transpose() * &vcov.vcov * &grad)[(0, 0)].max(0.0).sqrt();
            Interval {
                estimate: r,
                std_error: se,
                lower: r - crit * se,
                upper: r + crit * se,
            }
        })
        .collect())
}
