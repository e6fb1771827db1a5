//! Property checks shared by the property suite and the acceptance run. Each
//! returns the size of the violation so callers can compare it with their
//! own tolerance.

#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use ssgd_core::model::{empirical_loss, loss_gradient, loss_value};
use ssgd_core::sieve::build_basis;
use ssgd_core::sim::bias_rmse;
use ssgd_core::{fit_series_logit, run_ssgd_average, Beta, Dataset, LinkFunction, SsgdConfig};

pub fn links() -> [LinkFunction; 3] {
    [LinkFunction::logistic(), LinkFunction::probit(), LinkFunction::cauchy()]
}

pub fn normal_draws(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Probit-style sample with index `0.7 Σ x_j`.
pub fn small_dataset(seed: u64, n: usize, p: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| normal_draws(&mut rng, p)).collect();
    let y = rows
        .iter()
        .map(|r| {
            let z: f64 = r.iter().sum::<f64>() * 0.7;
            let e: f64 = rng.sample(StandardNormal);
            f64::from(z > e)
        })
        .collect();
    Dataset::from_rows(&rows, y).unwrap()
}

/// Largest gap between the analytic gradient and a central difference of the
/// quadrature loss.
pub fn gradient_fd_error(beta: &[f64], x: &[f64], y: f64, link: &LinkFunction) -> f64 {
    let b = Beta::new(beta.to_vec()).unwrap();
    let grad = loss_gradient(&b, x, y, link).unwrap();
    let h = 1e-4;
    (0..beta.len())
        .map(|j| {
            let mut up = beta.to_vec();
            let mut down = beta.to_vec();
            up[j] += h;
            down[j] -= h;
            let fd = (loss_value(&Beta::new(up).unwrap(), x, y, link).unwrap()
                - loss_value(&Beta::new(down).unwrap(), x, y, link).unwrap())
                / (2.0 * h);
            (fd - grad[j]).abs()
        })
        .fold(0.0, f64::max)
}

/// `L(λa + (1−λ)b) − [λL(a) + (1−λ)L(b)]`; convexity means this is ≤ 0.
pub fn convexity_gap(data: &Dataset, a: &[f64], b: &[f64], lambda: f64, link: &LinkFunction) -> f64 {
    let mix: Vec<f64> = a.iter().zip(b).map(|(u, v)| lambda * u + (1.0 - lambda) * v).collect();
    let at = |v: &[f64]| empirical_loss(data, &Beta::new(v.to_vec()).unwrap(), link).unwrap();
    at(&mix) - (lambda * at(a) + (1.0 - lambda) * at(b))
}

/// Frobenius distance of the sample Gram matrix of `(1, R(z))` from the identity.
pub fn orthonormality_error(z: &[f64], q: usize) -> f64 {
    let basis = build_basis(z, q).unwrap();
    let d = basis.design_with_intercept(z);
    let gram = d.transpose() * &d / z.len() as f64;
    (gram - DMatrix::identity(q + 1, q + 1)).norm()
}

/// Iteratively reweighted least squares for a logit of `y` on `(1, z)`, with
/// the 2×2 weighted normal equations solved in closed form.
pub fn irls_logit(z: &[f64], y: &[f64]) -> (f64, f64) {
    let (mut a, mut b) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let (mut s00, mut s01, mut s11, mut r0, mut r1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&zi, &yi) in z.iter().zip(y) {
            let eta = a + b * zi;
            let p = 1.0 / (1.0 + (-eta).exp());
            let w = p * (1.0 - p);
            let work = eta + (yi - p) / w;
            s00 += w;
            s01 += w * zi;
            s11 += w * zi * zi;
            r0 += w * work;
            r1 += w * zi * work;
        }
        let det = s00 * s11 - s01 * s01;
        let na = (s11 * r0 - s01 * r1) / det;
        let nb = (s00 * r1 - s01 * r0) / det;
        let done = (na - a).abs() + (nb - b).abs() < 1e-14;
        a = na;
        b = nb;
        if done {
            break;
        }
    }
    (a, b)
}

/// Largest probability gap between the one-power sieve and the IRLS logit on
/// a logistic sample drawn from `seed`.
pub fn linear_sieve_gap(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 200 + 10 * (seed % 50) as usize;
    let slope = 0.3 + 0.05 * (seed % 50) as f64;
    let z: Vec<f64> = normal_draws(&mut rng, n).iter().map(|v| 1.5 + 2.0 * v).collect();
    let y: Vec<f64> = z
        .iter()
        .map(|&v| f64::from(rng.random::<f64>() < 1.0 / (1.0 + (-(slope * v - 0.5)).exp())))
        .collect();
    let fit = fit_series_logit(&z, &y, 1).unwrap();
    assert!(fit.converged, "seed {seed}: series logit did not converge");
    let (a, b) = irls_logit(&z, &y);
    z.iter()
        .chain(&[-10.0, 0.0, 10.0])
        .map(|&v| (fit.prob(v) - 1.0 / (1.0 + (-(a + b * v)).exp())).abs())
        .fold(0.0, f64::max)
}

/// Largest drop along the Newton log-likelihood path of a series logit.
pub fn newton_path_drop(seed: u64, q: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 300;
    let z: Vec<f64> = normal_draws(&mut rng, n).iter().map(|v| 2.0 * v).collect();
    let y: Vec<f64> = z
        .iter()
        .map(|&v| f64::from(v > rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let fit = fit_series_logit(&z, &y, q).unwrap();
    fit.loglik_path.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
}

pub fn quick_config(seed: u64) -> SsgdConfig {
    SsgdConfig {
        iterations: Some(150),
        sieve_powers: Some(3),
        seed,
        ..SsgdConfig::default()
    }
}

/// Gap between the reported average and a direct mean of the stored iterates.
pub fn averaging_identity_error(seed: u64, trim: usize) -> f64 {
    let data = small_dataset(seed, 500, 3);
    let config = SsgdConfig {
        trim,
        ..quick_config(seed)
    };
    let fit = run_ssgd_average(&data, &config, None).unwrap();
    let used = &fit.path.betas[1..=fit.iterations_run - trim];
    (0..data.p())
        .map(|j| {
            let mean = used.iter().map(|b| b[j]).sum::<f64>() / used.len() as f64;
            (fit.beta_avg[j] - mean).abs()
        })
        .fold(0.0, f64::max)
}

/// Whether two fits with the same seed agree bitwise (timings aside).
pub fn fits_repeat_bitwise(seed: u64) -> bool {
    let data = small_dataset(seed, 700, 3);
    let mut a = run_ssgd_average(&data, &quick_config(seed), None).unwrap();
    let mut b = run_ssgd_average(&data, &quick_config(seed), None).unwrap();
    a.seconds = 0.0;
    b.seconds = 0.0;
    a == b
}

/// `|RMSE² − bias² − variance|`, maximized over coefficients.
pub fn decomposition_error(rows: &[Vec<f64>], truth: &[f64]) -> f64 {
    let (bias, rmse) = bias_rmse(rows.iter().map(Vec::as_slice), truth);
    let m = rows.len() as f64;
    (0..truth.len())
        .map(|j| {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / m;
            let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / m;
            (rmse[j] * rmse[j] - bias[j] * bias[j] - var).abs()
        })
        .fold(0.0, f64::max)
}
