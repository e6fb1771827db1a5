//! Logistic helpers and a damped Newton solver for the binary logit likelihood.
//!
//! The solver maximizes the mean log-likelihood
//!
//! ```text
//! L_n(π) = (1/n) Σ [ y_i η_i − log(1 + exp η_i) ],   η = D π,
//! ```
//!
//! which is concave, so Newton steps with step halving give a monotone ascent
//! from any start. A tiny ridge keeps the Hessian invertible when the design is
//! nearly collinear or the fitted probabilities saturate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SsgdError};
use crate::reduce;

/// Standard logistic CDF, evaluated without overflow.
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))`.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub max_iter: usize,
    /// Stop once the ∞-norm of the mean score falls below this.
    pub tol: f64,
    pub ridge: f64,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-10,
            ridge: 1e-8,
            max_halvings: 40,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LogitSolution {
    pub coef: DVector<f64>,
    /// Mean log-likelihood at `coef`.
    pub loglik: f64,
    /// Mean log-likelihood after every accepted step, starting at the initial point.
    pub loglik_path: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub score_norm: f64,
    pub separation_suspected: bool,
}

fn mean_loglik(design: &DMatrix<f64>, y: &[f64], coef: &DVector<f64>) -> f64 {
    let eta = design * coef;
    let n = y.len();
    reduce::sum(n, |i| y[i] * eta[i] - softplus(eta[i])) / n as f64
}

/// Mean score and mean negative Hessian at `coef`.
fn score_and_information(design: &DMatrix<f64>, y: &[f64], coef: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = design.nrows();
    let d = design.ncols();
    let eta = design * coef;
    let cols: Vec<&[f64]> = (0..d).map(|a| &design.as_slice()[a * n..(a + 1) * n]).collect();
    let packed = reduce::sum_vec(n, d + d * d, |lo, hi, acc| {
        let (r, w): (Vec<f64>, Vec<f64>) = (lo..hi)
            .map(|i| {
                let p = logistic(eta[i]);
                (y[i] - p, p * (1.0 - p))
            })
            .unzip();
        for a in 0..d {
            let ca = &cols[a][lo..hi];
            acc[a] += r.iter().zip(ca).fold(0.0, |s, (ri, xa)| s + ri * xa);
            for b in 0..=a {
                let cb = &cols[b][lo..hi];
                let mut s = 0.0;
                for i in 0..ca.len() {
                    s += w[i] * ca[i] * cb[i];
                }
                acc[d + a * d + b] += s;
            }
        }
    });
    let inv_n = 1.0 / n as f64;
    let score = DVector::from_iterator(d, packed[..d].iter().map(|v| v * inv_n));
    let mut info = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in 0..=a {
            let v = packed[d + a * d + b] * inv_n;
            info[(a, b)] = v;
            info[(b, a)] = v;
        }
    }
    (score, info)
}

fn solve_spd(mut m: DMatrix<f64>, rhs: &DVector<f64>, ridge: f64) -> Option<DVector<f64>> {
    for k in 0..m.nrows() {
        m[(k, k)] += ridge;
    }
    match m.clone().cholesky() {
        Some(ch) => Some(ch.solve(rhs)),
        None => m.lu().solve(rhs),
    }
}

/// Maximizes the logit likelihood of `y` on the columns of `design`.
pub fn newton_logit(
    design: &DMatrix<f64>,
    y: &[f64],
    init: Option<&DVector<f64>>,
    opts: &NewtonOptions,
) -> Result<LogitSolution> {
    let n = design.nrows();
    let d = design.ncols();
    if y.len() != n {
        return Err(SsgdError::DimensionMismatch {
            what: "logit outcome vector",
            expected: n,
            found: y.len(),
        });
    }
    let mut coef = match init {
        Some(c) if c.len() == d && c.iter().all(|v| v.is_finite()) => c.clone(),
        Some(c) if c.len() != d => {
            return Err(SsgdError::DimensionMismatch {
                what: "logit starting value",
                expected: d,
                found: c.len(),
            })
        }
        _ => DVector::zeros(d),
    };
    let mut ll = mean_loglik(design, y, &coef);
    if !ll.is_finite() {
        coef = DVector::zeros(d);
        ll = mean_loglik(design, y, &coef);
    }
    let mut path = vec![ll];
    let mut converged = false;
    let mut score_norm = f64::INFINITY;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        let (score, info) = score_and_information(design, y, &coef);
        score_norm = score.amax();
        if !score_norm.is_finite() {
            return Err(SsgdError::NumericOverflow { row: None });
        }
        if score_norm < opts.tol {
            converged = true;
            break;
        }
        let Some(step) = solve_spd(info, &score, opts.ridge) else {
            break;
        };
        iterations += 1;
        // Half the Newton decrement predicts the remaining gain. Below the
        // rounding level of the likelihood a step cannot be verified by the
        // line search, but the iterate is inside the quadratic region, so the
        // full step is taken and the path is left unchanged.
        if 0.5 * score.dot(&step) <= 8.0 * f64::EPSILON * ll.abs().max(1.0) {
            coef += &step;
            ll = mean_loglik(design, y, &coef);
            continue;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let trial = &coef + &step * t;
            let trial_ll = mean_loglik(design, y, &trial);
            if trial_ll.is_finite() && trial_ll >= ll {
                coef = trial;
                ll = trial_ll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        path.push(ll);
    }
    if !converged {
        score_norm = score_and_information(design, y, &coef).0.amax();
        converged = score_norm < opts.tol;
    }

    let separation_suspected = separation_suspected(design, y, &coef, converged);
    Ok(LogitSolution {
        coef,
        loglik: ll,
        loglik_path: path,
        iterations,
        converged: converged && !separation_suspected,
        score_norm,
        separation_suspected,
    })
}

// Flags a likelihood that is still increasing toward its supremum at infinity:
// a constant outcome, a perfect in-sample classification, or a non-converged
// solve whose coefficients have run off.
fn separation_suspected(design: &DMatrix<f64>, y: &[f64], coef: &DVector<f64>, converged: bool) -> bool {
    let constant_outcome = y.windows(2).all(|w| w[0] == w[1]);
    if constant_outcome {
        return true;
    }
    let eta = design * coef;
    let perfect = y
        .iter()
        .zip(eta.iter())
        .all(|(&yi, &e)| (logistic(e) - yi).abs() < 1e-6);
    perfect || (!converged && coef.amax() > 1e4)
}
