//! Gaussian entropy, one-step information gain and greedy pair selection.
//!
//! Adding comparison `x` to a posterior with covariance `Sigma` lowers its
//! entropy by `0.5 * ln(1 + x^T Sigma x / sigma_n_sq)`, independent of the
//! answer. For a `+1/-1` comparison vector the quadratic form is
//! `Sigma_ii + Sigma_jj - 2 Sigma_ij`, so the best next question is the pair
//! maximising that expression.

use std::collections::HashSet;
use std::f64::consts::PI;

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::{ComparisonVector, InferenceError, Posterior};

/// Scores within this relative distance of the best are treated as ties and
/// resolved towards the lexicographically smallest pair.
pub const TIE_RTOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectError {
    #[error("every pair has been excluded; session exhausted")]
    Exhausted,
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

/// Unordered pair of action ids, stored with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "[usize; 2]", try_from = "[usize; 2]")]
pub struct Pair {
    i: usize,
    j: usize,
}

impl Pair {
    pub fn new(a: usize, b: usize) -> Result<Self, InferenceError> {
        match a.cmp(&b) {
            std::cmp::Ordering::Less => Ok(Self { i: a, j: b }),
            std::cmp::Ordering::Greater => Ok(Self { i: b, j: a }),
            std::cmp::Ordering::Equal => Err(InferenceError::SameAction(a)),
        }
    }

    pub fn i(&self) -> usize {
        self.i
    }

    pub fn j(&self) -> usize {
        self.j
    }

    pub fn contains(&self, id: usize) -> bool {
        self.i == id || self.j == id
    }

    /// All `m(m-1)/2` pairs in lexicographic order.
    pub fn all(m: usize) -> impl Iterator<Item = Pair> {
        (1..=m).flat_map(move |i| (i + 1..=m).map(move |j| Pair { i, j }))
    }

    pub fn count(m: usize) -> usize {
        m * m.saturating_sub(1) / 2
    }
}

impl From<Pair> for [usize; 2] {
    fn from(p: Pair) -> Self {
        [p.i, p.j]
    }
}

impl TryFrom<[usize; 2]> for Pair {
    type Error = InferenceError;

    fn try_from([a, b]: [usize; 2]) -> Result<Self, Self::Error> {
        Pair::new(a, b)
    }
}

impl std::fmt::Display for Pair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.i, self.j)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairScore {
    pub pair: Pair,
    /// `Sigma_ii + Sigma_jj - 2 Sigma_ij`
    pub quadratic_form: f64,
    /// Entropy reduction in nats.
    pub info_gain: f64,
}

impl PairScore {
    fn new(posterior: &Posterior, pair: Pair, sigma_n_sq: f64) -> Result<Self, InferenceError> {
        let x = ComparisonVector::new(pair.i, pair.j, posterior.dim())?;
        let quadratic_form = x.quadratic_form(posterior.covariance());
        Ok(Self { pair, quadratic_form, info_gain: gain_from_quadratic_form(quadratic_form, sigma_n_sq) })
    }
}

pub fn gain_from_quadratic_form(quadratic_form: f64, sigma_n_sq: f64) -> f64 {
    0.5 * (quadratic_form / sigma_n_sq).ln_1p()
}

/// Differential entropy of the posterior in nats,
/// `M/2 (1 + ln 2pi) + 1/2 ln det Sigma`, via Cholesky.
pub fn entropy(posterior: &Posterior) -> Result<f64, InferenceError> {
    let m = posterior.dim() as f64;
    let chol = Cholesky::new(posterior.covariance().clone()).ok_or(InferenceError::NotPositiveDefinite)?;
    let half_log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    Ok(0.5 * m * (1.0 + (2.0 * PI).ln()) + half_log_det)
}

/// Entropy reduction from observing a comparison of `i` and `j`.
pub fn information_gain(posterior: &Posterior, i: usize, j: usize, sigma_n_sq: f64) -> Result<f64, InferenceError> {
    let x = ComparisonVector::new(i, j, posterior.dim())?;
    Ok(gain_from_quadratic_form(x.quadratic_form(posterior.covariance()), sigma_n_sq))
}

/// Scores for every pair not in `exclusions`, in lexicographic order.
pub fn score_pairs(posterior: &Posterior, exclusions: &HashSet<Pair>, sigma_n_sq: f64) -> Vec<PairScore> {
    Pair::all(posterior.dim())
        .filter(|p| !exclusions.contains(p))
        .map(|p| PairScore::new(posterior, p, sigma_n_sq).expect("enumerated pairs are in range"))
        .collect()
}

/// Most informative non-excluded pair. Ties (within [`TIE_RTOL`]) go to the
/// lexicographically smallest `(i, j)`.
pub fn select_pair(
    posterior: &Posterior,
    exclusions: &HashSet<Pair>,
    sigma_n_sq: f64,
) -> Result<PairScore, SelectError> {
    let cov = posterior.covariance();
    let mut best: Option<(Pair, f64)> = None;
    for pair in Pair::all(posterior.dim()) {
        if exclusions.contains(&pair) {
            continue;
        }
        let (a, b) = (pair.i - 1, pair.j - 1);
        let q = cov[(a, a)] + cov[(b, b)] - 2.0 * cov[(a, b)];
        match best {
            Some((_, top)) if q <= top + TIE_RTOL * top.abs().max(1.0) => {}
            _ => best = Some((pair, q)),
        }
    }
    let (pair, quadratic_form) = best.ok_or(SelectError::Exhausted)?;
    Ok(PairScore { pair, quadratic_form, info_gain: gain_from_quadratic_form(quadratic_form, sigma_n_sq) })
}
