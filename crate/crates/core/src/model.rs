//! Data model, link functions and the convex index loss.
//!
//! For a nondecreasing CDF `g` with antiderivative `G`, the per-observation loss
//!
//! ```text
//! ζ(β; x, y) = G(xᵀβ) − y·xᵀβ,      ∇ζ = (g(xᵀβ) − y)·x
//! ```
//!
//! is convex in `β`. Only the gradient enters the estimators; [`loss_value`]
//! computes `G` by quadrature and exists for diagnostics and tests.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{DatasetViolation, Result, SsgdError};
use crate::logit::logistic;
use crate::quadrature;
use crate::reduce;

/// Validated estimation sample: `n × p` covariates and a 0/1 outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: Vec<f64>) -> Result<Self> {
        validate_dataset(x, y)
    }

    /// Builds a dataset from row slices.
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != p) {
            return Err(SsgdError::DimensionMismatch {
                what: "covariate row",
                expected: p,
                found: bad.len(),
            });
        }
        let x = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        validate_dataset(x, y)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.x.row(i).transpose()
    }

    /// Index values `Xβ`.
    pub fn index(&self, beta: &Beta) -> DVector<f64> {
        &self.x * beta.as_vector()
    }

    /// Same data with every covariate multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        validate_dataset(&self.x * c, self.y.clone())
    }
}

/// Checks every dataset invariant and reports all violations at once.
pub fn validate_dataset(x: DMatrix<f64>, y: Vec<f64>) -> Result<Dataset> {
    let (n, p) = x.shape();
    let mut violations = Vec::new();
    if y.len() != n {
        violations.push(DatasetViolation::LengthMismatch {
            rows: n,
            outcomes: y.len(),
        });
    }
    if n < p + 1 {
        violations.push(DatasetViolation::TooFewRows { n, p });
    }
    for (row, &v) in y.iter().enumerate() {
        if v != 0.0 && v != 1.0 {
            violations.push(DatasetViolation::NonBinaryOutcome { row, value: v });
        }
    }
    for row in 0..n {
        for column in 0..p {
            if !x[(row, column)].is_finite() {
                violations.push(DatasetViolation::NonFinite { row, column });
            }
        }
    }
    for index in 0..p {
        let col = x.column(index);
        if n > 0 && col.iter().all(|&v| v == col[0]) {
            violations.push(DatasetViolation::ConstantColumn { index });
        }
    }
    if violations.is_empty() {
        Ok(Dataset { x, y })
    } else {
        Err(SsgdError::InvalidDataset(violations))
    }
}

/// Coefficient vector with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Beta(DVector<f64>);

impl Beta {
    pub fn new(coefficients: Vec<f64>) -> Result<Self> {
        Self::from_vector(DVector::from_vec(coefficients))
    }

    pub fn from_vector(v: DVector<f64>) -> Result<Self> {
        if let Some(i) = v.iter().position(|c| !c.is_finite()) {
            return Err(SsgdError::NumericOverflow { row: Some(i) });
        }
        Ok(Self(v))
    }

    pub fn zeros(p: usize) -> Self {
        Self(DVector::zeros(p))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for Beta {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl Serialize for Beta {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.as_slice().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Beta {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        Beta::new(v).map_err(serde::de::Error::custom)
    }
}

/// Anything that maps index values to probabilities.
pub trait IndexCdf {
    fn cdf(&self, z: f64) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkKind {
    Logistic,
    Probit,
    Cauchy,
    Custom,
}

impl fmt::Display for LinkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LinkKind::Logistic => "logistic",
            LinkKind::Probit => "probit",
            LinkKind::Cauchy => "cauchy",
            LinkKind::Custom => "custom",
        };
        f.write_str(s)
    }
}

type CdfFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A known error CDF `g` together with its Lipschitz bound `J`.
#[derive(Clone)]
pub struct LinkFunction {
    kind: LinkKind,
    custom: Option<CdfFn>,
    lipschitz: f64,
}

impl fmt::Debug for LinkFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinkFunction")
            .field("kind", &self.kind)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

/// Grid used for sampled invariant checks of custom links.
fn check_grid() -> Vec<f64> {
    (-400..=400).map(|i| i as f64 * 0.05).collect()
}

impl LinkFunction {
    pub fn logistic() -> Self {
        Self {
            kind: LinkKind::Logistic,
            custom: None,
            lipschitz: 0.25,
        }
    }

    pub fn probit() -> Self {
        Self {
            kind: LinkKind::Probit,
            custom: None,
            lipschitz: 1.0 / (2.0 * std::f64::consts::PI).sqrt(),
        }
    }

    pub fn cauchy() -> Self {
        Self {
            kind: LinkKind::Cauchy,
            custom: None,
            lipschitz: std::f64::consts::FRAC_1_PI,
        }
    }

    pub fn from_kind(kind: LinkKind) -> Result<Self> {
        match kind {
            LinkKind::Logistic => Ok(Self::logistic()),
            LinkKind::Probit => Ok(Self::probit()),
            LinkKind::Cauchy => Ok(Self::cauchy()),
            LinkKind::Custom => Err(SsgdError::InvalidLink("custom links need an explicit function".into())),
        }
    }

    /// Wraps an arbitrary CDF after spot-checking range, monotonicity and the
    /// Lipschitz bound on a grid over [-20, 20].
    pub fn custom<F>(cdf: F, lipschitz: f64) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(lipschitz > 0.0 && lipschitz.is_finite()) {
            return Err(SsgdError::InvalidLink(format!(
                "Lipschitz bound must be positive, got {lipschitz}"
            )));
        }
        let link = Self {
            kind: LinkKind::Custom,
            custom: Some(Arc::new(cdf)),
            lipschitz,
        };
        link.check_on_grid(&check_grid())?;
        Ok(link)
    }

    pub fn kind(&self) -> LinkKind {
        self.kind
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn eval(&self, z: f64) -> f64 {
        match self.kind {
            LinkKind::Logistic => logistic(z),
            LinkKind::Probit => 0.5 * libm::erfc(-z / std::f64::consts::SQRT_2),
            LinkKind::Cauchy => 0.5 + z.atan() * std::f64::consts::FRAC_1_PI,
            LinkKind::Custom => (self.custom.as_ref().expect("custom link without function"))(z),
        }
    }

    /// Verifies `0 <= g <= 1` and `0 <= g(b) - g(a) <= J (b - a)` on consecutive
    /// points of a sorted grid.
    pub fn check_on_grid(&self, grid: &[f64]) -> Result<()> {
        let mut prev: Option<(f64, f64)> = None;
        for &z in grid {
            let g = self.eval(z);
            if !(0.0..=1.0).contains(&g) {
                return Err(SsgdError::InvalidLink(format!("g({z}) = {g} is outside [0, 1]")));
            }
            if let Some((a, ga)) = prev {
                let rise = g - ga;
                if rise < 0.0 {
                    return Err(SsgdError::InvalidLink(format!("g decreases between {a} and {z}")));
                }
                if rise > self.lipschitz * (z - a) * (1.0 + 1e-9) + 1e-15 {
                    return Err(SsgdError::InvalidLink(format!(
                        "g rises faster than J = {} between {a} and {z}",
                        self.lipschitz
                    )));
                }
            }
            prev = Some((z, g));
        }
        Ok(())
    }
}

impl IndexCdf for LinkFunction {
    fn cdf(&self, z: f64) -> f64 {
        self.eval(z)
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(SsgdError::DimensionMismatch { what, expected, found })
    }
}

fn inner(beta: &Beta, x: &[f64]) -> Result<f64> {
    check_len("covariate vector", beta.len(), x.len())?;
    let u: f64 = beta.as_slice().iter().zip(x).map(|(b, v)| b * v).sum();
    if u.is_finite() {
        Ok(u)
    } else {
        Err(SsgdError::NumericOverflow { row: None })
    }
}

/// `(g(xᵀβ) − y)·x` for a single observation.
pub fn loss_gradient(beta: &Beta, x: &[f64], y: f64, link: &dyn IndexCdf) -> Result<DVector<f64>> {
    let u = inner(beta, x)?;
    let r = link.cdf(u) - y;
    Ok(DVector::from_iterator(x.len(), x.iter().map(|v| r * v)))
}

/// `G(xᵀβ) − y·xᵀβ` with `G(u) = ∫₀ᵘ g`, by adaptive quadrature.
pub fn loss_value(beta: &Beta, x: &[f64], y: f64, link: &dyn IndexCdf) -> Result<f64> {
    let u = inner(beta, x)?;
    let big_g = quadrature::integrate(|t| link.cdf(t), 0.0, u, 1e-13)?;
    Ok(big_g - y * u)
}

/// Mean loss over a dataset.
pub fn empirical_loss(data: &Dataset, beta: &Beta, link: &dyn IndexCdf) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..data.n() {
        let row: Vec<f64> = data.x.row(i).iter().copied().collect();
        total += loss_value(beta, &row, data.y[i], link)?;
    }
    Ok(total / data.n() as f64)
}

/// `(1/n) Σ (g(x_iᵀβ) − y_i) x_i` under the fixed-shape reduction.
pub fn mean_gradient(data: &Dataset, beta: &Beta, link: &dyn IndexCdf) -> Result<DVector<f64>> {
    check_len("coefficient vector", data.p(), beta.len())?;
    let z = data.index(beta);
    if let Some(row) = z.iter().position(|v| !v.is_finite()) {
        return Err(SsgdError::NumericOverflow { row: Some(row) });
    }
    let residual: Vec<f64> = z.iter().zip(&data.y).map(|(&u, &y)| link.cdf(u) - y).collect();
    Ok(weighted_column_mean(&data.x, &residual))
}

/// `(1/n) Xᵀ w` with each column reduced under the fixed-shape contract.
pub(crate) fn weighted_column_mean(x: &DMatrix<f64>, w: &[f64]) -> DVector<f64> {
    let (n, p) = x.shape();
    let sums = reduce::sum_vec(n, p, |lo, hi, acc| {
        for (j, a) in acc.iter_mut().enumerate() {
            let col = &x.column(j);
            let col = col.as_slice();
            for i in lo..hi {
                *a += w[i] * col[i];
            }
        }
    });
    DVector::from_iterator(p, sums.into_iter().map(|s| s / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (DMatrix<f64>, Vec<f64>) {
        let x = DMatrix::from_row_slice(3, 2, &[0.5, 1.0, -1.0, 2.0, 2.0, -0.5]);
        (x, vec![0.0, 1.0, 1.0])
    }

    #[test]
    fn valid_toy_dataset() {
        let (x, y) = toy();
        let d = validate_dataset(x, y).unwrap();
        assert_eq!((d.n(), d.p()), (3, 2));
    }

    #[test]
    fn outcome_two_is_rejected_with_its_row() {
        let (x, _) = toy();
        let err = validate_dataset(x, vec![0.0, 2.0, 1.0]).unwrap_err();
        assert_eq!(
            err,
            SsgdError::InvalidDataset(vec![DatasetViolation::NonBinaryOutcome { row: 1, value: 2.0 }])
        );
    }

    #[test]
    fn constant_column_is_rejected() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.3, 1.0, 0.1, 1.0, 0.9]);
        let err = validate_dataset(x, vec![0.0, 1.0, 1.0]).unwrap_err();
        assert_eq!(
            err,
            SsgdError::InvalidDataset(vec![DatasetViolation::ConstantColumn { index: 0 }])
        );
    }

    #[test]
    fn every_violation_is_reported() {
        let x = DMatrix::from_row_slice(2, 2, &[f64::NAN, 1.0, 2.0, 1.0]);
        let SsgdError::InvalidDataset(v) = validate_dataset(x, vec![0.5, 1.0]).unwrap_err() else {
            panic!("expected dataset error");
        };
        let codes: Vec<_> = v.iter().map(|v| v.code()).collect();
        assert_eq!(codes, ["TooFewRows", "NonBinaryOutcome", "NonFinite", "ConstantColumn"]);
    }

    #[test]
    fn gradient_is_zero_when_link_matches_outcome() {
        let ramp = LinkFunction::custom(|z: f64| z.clamp(0.0, 1.0), 1.0).unwrap();
        let beta = Beta::new(vec![2.0, 0.0]).unwrap();
        let g = loss_gradient(&beta, &[1.5, 3.0], 1.0, &ramp).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn logistic_gradient_at_origin() {
        let beta = Beta::zeros(3);
        let g = loss_gradient(&beta, &[1.0, 0.0, 0.0], 0.0, &LinkFunction::logistic()).unwrap();
        assert_eq!(g.as_slice(), &[0.5, 0.0, 0.0]);
    }

    #[test]
    fn gradient_rejects_dimension_mismatch_and_overflow() {
        let beta = Beta::zeros(2);
        assert!(matches!(
            loss_gradient(&beta, &[1.0], 0.0, &LinkFunction::logistic()),
            Err(SsgdError::DimensionMismatch { .. })
        ));
        let big = Beta::new(vec![f64::MAX, f64::MAX]).unwrap();
        assert_eq!(
            loss_gradient(&big, &[2.0, 2.0], 0.0, &LinkFunction::logistic()),
            Err(SsgdError::NumericOverflow { row: None })
        );
    }

    #[test]
    fn loss_with_constant_link() {
        let half = LinkFunction::custom(|_| 0.5, 1.0).unwrap();
        let beta = Beta::new(vec![2.0]).unwrap();
        let v = loss_value(&beta, &[1.0], 0.0, &half).unwrap();
        assert!((v - 1.0).abs() < 1e-14);
        let zero = Beta::zeros(1);
        for link in [LinkFunction::logistic(), LinkFunction::probit(), LinkFunction::cauchy()] {
            assert_eq!(loss_value(&zero, &[3.0], 0.0, &link).unwrap(), 0.0);
        }
    }

    #[test]
    fn custom_links_are_spot_checked() {
        assert!(LinkFunction::custom(|z: f64| -z, 1.0).is_err());
        assert!(LinkFunction::custom(|z: f64| if z > 0.0 { 1.0 } else { 0.0 }, 1.0).is_err());
        assert!(LinkFunction::custom(|z: f64| (z / 4.0 + 0.5).clamp(0.0, 1.0), 0.1).is_err());
        for l in [LinkFunction::logistic(), LinkFunction::probit(), LinkFunction::cauchy()] {
            l.check_on_grid(&check_grid()).unwrap();
        }
    }

    #[test]
    fn mean_gradient_reports_offending_row() {
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 1e308, -2.0]);
        let d = validate_dataset(x, vec![0.0, 1.0, 0.0]).unwrap();
        let beta = Beta::new(vec![10.0]).unwrap();
        assert_eq!(
            mean_gradient(&d, &beta, &LinkFunction::logistic()),
            Err(SsgdError::NumericOverflow { row: Some(1) })
        );
    }
}
