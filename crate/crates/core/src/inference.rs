//! Exact Gaussian posterior over perceived log-footprints.
//!
//! Observation model: `ln y = w_i - w_j + eps`, `eps ~ N(0, sigma_n_sq)`,
//! with prior `w ~ N(mu, sigma_p_sq I)`. The posterior is
//!
//! ```text
//! Sigma = (X^T X / sigma_n_sq + Sigma_p^-1)^-1
//! mean  = Sigma (X^T ln(y) / sigma_n_sq + Sigma_p^-1 mu)
//! ```
//!
//! The precision and information vector are the source of truth. Each new
//! comparison adds `x x^T / sigma_n_sq` to the precision, which is exact;
//! covariance and mean are then re-solved from a Cholesky factorization.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::PriorSpec;

/// Diagonal load applied when the precision fails to factor and the
/// prior allows the fallback.
pub const FALLBACK_JITTER: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("comparison of action {0} with itself")]
    SameAction(usize),
    #[error("action id {id} outside 1..={m}")]
    IdOutOfRange { id: usize, m: usize },
    #[error("impact ratio must be positive and finite, got {0}")]
    InvalidRatio(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
}

/// One observation: action `i` has impact ratio `y` over action `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub i: usize,
    pub j: usize,
    pub y: f64,
}

impl Triplet {
    pub fn new(i: usize, j: usize, y: f64) -> Result<Self, InferenceError> {
        if i == j {
            return Err(InferenceError::SameAction(i));
        }
        if !(y > 0.0) || !y.is_finite() || !y.ln().is_finite() {
            return Err(InferenceError::InvalidRatio(y));
        }
        Ok(Self { i, j, y })
    }

    pub fn log_ratio(&self) -> f64 {
        self.y.ln()
    }

    /// The same statement with the roles of the two actions swapped.
    pub fn reciprocal(&self) -> Self {
        Self { i: self.j, j: self.i, y: 1.0 / self.y }
    }

    /// Orientation with `i < j`.
    pub fn canonical(&self) -> Self {
        if self.i < self.j {
            *self
        } else {
            self.reciprocal()
        }
    }

    /// Checks ids against a catalog of size `m` and the ratio domain.
    pub fn validate(&self, m: usize) -> Result<ComparisonVector, InferenceError> {
        Triplet::new(self.i, self.j, self.y)?;
        ComparisonVector::new(self.i, self.j, m)
    }
}

/// `+1` at entry `i`, `-1` at entry `j`, zero elsewhere (1-based ids).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComparisonVector {
    plus: usize,
    minus: usize,
    dim: usize,
}

impl ComparisonVector {
    pub fn new(i: usize, j: usize, m: usize) -> Result<Self, InferenceError> {
        for id in [i, j] {
            if id == 0 || id > m {
                return Err(InferenceError::IdOutOfRange { id, m });
            }
        }
        if i == j {
            return Err(InferenceError::SameAction(i));
        }
        Ok(Self { plus: i - 1, minus: j - 1, dim: m })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Zero-based indices of the `+1` and `-1` entries.
    pub fn support(&self) -> (usize, usize) {
        (self.plus, self.minus)
    }

    pub fn to_dense(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.dim);
        x[self.plus] = 1.0;
        x[self.minus] = -1.0;
        x
    }

    /// `x^T w`.
    pub fn dot(&self, w: &[f64]) -> f64 {
        w[self.plus] - w[self.minus]
    }

    /// `x^T A x` for symmetric `A`.
    pub fn quadratic_form(&self, a: &DMatrix<f64>) -> f64 {
        let (p, m) = (self.plus, self.minus);
        a[(p, p)] + a[(m, m)] - 2.0 * a[(p, m)]
    }

    /// `A += scale * x x^T`.
    fn add_outer(&self, a: &mut DMatrix<f64>, scale: f64) {
        let (p, m) = (self.plus, self.minus);
        a[(p, p)] += scale;
        a[(m, m)] += scale;
        a[(p, m)] -= scale;
        a[(m, p)] -= scale;
    }

    /// `b += scale * x`.
    fn add_scaled(&self, b: &mut DVector<f64>, scale: f64) {
        b[self.plus] += scale;
        b[self.minus] -= scale;
    }
}

/// Gaussian belief `N(mean, covariance)` over the log-footprint vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    precision: DMatrix<f64>,
    info_vector: DVector<f64>,
    n_observations: usize,
}

impl Posterior {
    /// Zero-data posterior: the prior itself.
    pub fn from_prior(prior: &PriorSpec) -> Self {
        let m = prior.dim();
        let mean = DVector::from_column_slice(&prior.mu);
        Self {
            covariance: DMatrix::from_diagonal_element(m, m, prior.sigma_p_sq),
            precision: DMatrix::from_diagonal_element(m, m, 1.0 / prior.sigma_p_sq),
            info_vector: &mean / prior.sigma_p_sq,
            mean,
            n_observations: 0,
        }
    }

    /// Batch posterior over a whole dataset.
    pub fn from_dataset(triplets: &[Triplet], prior: &PriorSpec) -> Result<Self, InferenceError> {
        let mut post = Self::from_prior(prior);
        let inv_noise = 1.0 / prior.sigma_n_sq;
        for t in triplets {
            let x = t.validate(prior.dim())?;
            x.add_outer(&mut post.precision, inv_noise);
            x.add_scaled(&mut post.info_vector, inv_noise * t.log_ratio());
        }
        post.n_observations = triplets.len();
        if !triplets.is_empty() {
            post.resolve(prior.jitter_fallback)?;
        }
        Ok(post)
    }

    /// Builds a posterior directly from moments. The precision is obtained
    /// by inverting `covariance`, which must be symmetric positive definite.
    pub fn from_moments(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self, InferenceError> {
        let m = mean.len();
        if covariance.nrows() != m || covariance.ncols() != m {
            return Err(InferenceError::DimensionMismatch { expected: m, got: covariance.nrows() });
        }
        let covariance = symmetrize(covariance);
        let chol = Cholesky::new(covariance.clone()).ok_or(InferenceError::NotPositiveDefinite)?;
        let precision = symmetrize(chol.inverse());
        let info_vector = &precision * &mean;
        Ok(Self { mean, covariance, precision, info_vector, n_observations: 0 })
    }

    /// Returns the posterior after one more observation.
    pub fn update(&self, triplet: &Triplet, prior: &PriorSpec) -> Result<Self, InferenceError> {
        let mut next = self.clone();
        next.observe(triplet, prior)?;
        Ok(next)
    }

    /// In-place form of [`Posterior::update`]. On error `self` is unchanged.
    pub fn observe(&mut self, triplet: &Triplet, prior: &PriorSpec) -> Result<(), InferenceError> {
        let x = triplet.validate(self.dim())?;
        let inv_noise = 1.0 / prior.sigma_n_sq;
        let mut precision = self.precision.clone();
        let mut info = self.info_vector.clone();
        x.add_outer(&mut precision, inv_noise);
        x.add_scaled(&mut info, inv_noise * triplet.log_ratio());
        let (covariance, mean) = solve_moments(&precision, &info, prior.jitter_fallback)?;
        self.precision = precision;
        self.info_vector = info;
        self.covariance = covariance;
        self.mean = mean;
        self.n_observations += 1;
        Ok(())
    }

    fn resolve(&mut self, jitter_fallback: bool) -> Result<(), InferenceError> {
        let (covariance, mean) = solve_moments(&self.precision, &self.info_vector, jitter_fallback)?;
        self.covariance = covariance;
        self.mean = mean;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn info_vector(&self) -> &DVector<f64> {
        &self.info_vector
    }

    pub fn n_observations(&self) -> usize {
        self.n_observations
    }

    /// Perceived footprints `exp(mean)` in kg CO2e, indexed by `id - 1`.
    pub fn perceived_footprint(&self) -> Vec<f64> {
        self.mean.iter().map(|w| w.exp()).collect()
    }

    /// Posterior standard deviation of each log-footprint.
    pub fn marginal_sd(&self) -> Vec<f64> {
        self.covariance.diagonal().iter().map(|v| v.sqrt()).collect()
    }
}

fn symmetrize(a: DMatrix<f64>) -> DMatrix<f64> {
    (&a + a.transpose()) * 0.5
}

fn factor(precision: &DMatrix<f64>, jitter_fallback: bool) -> Result<Cholesky<f64, Dyn>, InferenceError> {
    if let Some(chol) = Cholesky::new(precision.clone()) {
        return Ok(chol);
    }
    if !jitter_fallback {
        return Err(InferenceError::NotPositiveDefinite);
    }
    tracing::warn!(jitter = FALLBACK_JITTER, "precision factorization failed; retrying with diagonal jitter");
    let m = precision.nrows();
    let loaded = precision + DMatrix::from_diagonal_element(m, m, FALLBACK_JITTER);
    Cholesky::new(loaded).ok_or(InferenceError::NotPositiveDefinite)
}

fn solve_moments(
    precision: &DMatrix<f64>,
    info: &DVector<f64>,
    jitter_fallback: bool,
) -> Result<(DMatrix<f64>, DVector<f64>), InferenceError> {
    let chol = factor(precision, jitter_fallback)?;
    let covariance = symmetrize(chol.inverse());
    let mean = chol.solve(info);
    Ok((covariance, mean))
}

/// Log-likelihood of the dataset under `w`:
/// `sum_n ln N(ln y_n; x_n^T w, sigma_n_sq)`.
pub fn log_likelihood(triplets: &[Triplet], w: &[f64], sigma_n_sq: f64) -> Result<f64, InferenceError> {
    let m = w.len();
    let norm = -0.5 * (2.0 * std::f64::consts::PI * sigma_n_sq).ln();
    triplets.iter().try_fold(0.0, |acc, t| {
        let x = t.validate(m)?;
        let r = t.log_ratio() - x.dot(w);
        Ok(acc + norm - 0.5 * r * r / sigma_n_sq)
    })
}
