//! Synthetic respondents, policy benchmarks, batch fits and chart export.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, CatalogError, PriorSpec};
use crate::inference::{InferenceError, Posterior, Triplet};
use crate::selector::{information_gain, select_pair, Pair};
use crate::session::AnswerBounds;
use crate::store::{self, StoreError, TripletLog, TripletStore};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown policy {0:?}; expected active, random or round_robin")]
    UnknownPolicy(String),
    #[error("{0} must be at least 1")]
    ZeroCount(&'static str),
    #[error("response noise variance must be non-negative, got {0}")]
    InvalidNoise(f64),
    #[error("respondent has {got} weights, catalog has {expected} actions")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("json output failed: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Answers comparisons according to fixed log weights plus Gaussian noise
/// on the log ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRespondent {
    pub true_log_weights: Vec<f64>,
    pub response_noise_sq: f64,
}

impl SyntheticRespondent {
    pub fn new(true_log_weights: Vec<f64>, response_noise_sq: f64) -> Result<Self, SimError> {
        if !(response_noise_sq >= 0.0) || !response_noise_sq.is_finite() {
            return Err(SimError::InvalidNoise(response_noise_sq));
        }
        Ok(Self { true_log_weights, response_noise_sq })
    }

    /// Respondent whose weights are the catalog's true log footprints.
    pub fn truthful(catalog: &Catalog, response_noise_sq: f64) -> Result<Self, SimError> {
        Self::new(catalog.log_footprints(), response_noise_sq)
    }

    pub fn dim(&self) -> usize {
        self.true_log_weights.len()
    }
}

/// Draws `y = exp(v_i - v_j + eps)`, clamped to `bounds`.
pub fn simulate_answer<R: Rng + ?Sized>(
    respondent: &SyntheticRespondent,
    pair: (usize, usize),
    bounds: &AnswerBounds,
    rng: &mut R,
) -> Result<Triplet, InferenceError> {
    let (i, j) = pair;
    let x = crate::inference::ComparisonVector::new(i, j, respondent.dim())?;
    let noise = if respondent.response_noise_sq > 0.0 {
        Normal::new(0.0, respondent.response_noise_sq.sqrt())
            .expect("positive finite sd")
            .sample(rng)
    } else {
        0.0
    };
    let y = bounds.clamp((x.dot(&respondent.true_log_weights) + noise).exp());
    Triplet::new(i, j, y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Greedy maximum information gain.
    Active,
    /// Uniformly random unordered pair.
    Random,
    /// All pairs in lexicographic order, repeated.
    RoundRobin,
}

impl FromStr for Policy {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "active" => Ok(Policy::Active),
            "random" => Ok(Policy::Random),
            "round_robin" | "round-robin" => Ok(Policy::RoundRobin),
            other => Err(SimError::UnknownPolicy(other.to_owned())),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Active => "active",
            Policy::Random => "random",
            Policy::RoundRobin => "round_robin",
        })
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub policy: Policy,
    pub n_questions: usize,
    pub n_seeds: usize,
    pub base_seed: u64,
    pub respondent: SyntheticRespondent,
    pub prior: PriorSpec,
    pub bounds: AnswerBounds,
}

/// Mean over seeds at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub n: usize,
    /// RMSE of `mean - v` in log space.
    pub rmse: f64,
    /// RMSE after removing the all-ones component from both vectors.
    pub rmse_centered: f64,
    /// Mean information gain of the questions asked so far (nats).
    pub mean_info_gain: f64,
    /// Smallest information gain of any question asked so far, over all seeds.
    pub min_info_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub policy: Policy,
    pub n_questions: usize,
    pub seeds: Vec<u64>,
    pub checkpoints: Vec<Checkpoint>,
}

impl ExperimentReport {
    pub fn last(&self) -> &Checkpoint {
        self.checkpoints.last().expect("at least one checkpoint")
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), SimError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["policy", "n", "rmse", "rmse_centered", "mean_info_gain", "min_info_gain"])?;
        for c in &self.checkpoints {
            w.write_record([
                self.policy.to_string(),
                c.n.to_string(),
                c.rmse.to_string(),
                c.rmse_centered.to_string(),
                c.mean_info_gain.to_string(),
                c.min_info_gain.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `{10, 25, 50, 100, 200, 400, …}` below `n`, then `n` itself.
pub fn checkpoints(n: usize) -> Vec<usize> {
    let mut out: Vec<usize> = [10, 25, 50].into_iter().take_while(|&c| c < n).collect();
    let mut c = 100;
    while c < n {
        out.push(c);
        c *= 2;
    }
    if n > 0 {
        out.push(n);
    }
    out
}

/// `sqrt(mean((a - b)^2))`, optionally after removing each vector's mean.
pub fn rmse(a: &[f64], b: &[f64], centered: bool) -> f64 {
    let mean = |v: &[f64]| if centered { v.iter().sum::<f64>() / v.len() as f64 } else { 0.0 };
    let (ma, mb) = (mean(a), mean(b));
    let sq: f64 = a.iter().zip(b).map(|(x, y)| ((x - ma) - (y - mb)).powi(2)).sum();
    (sq / a.len() as f64).sqrt()
}

struct SeedTrace {
    seed: u64,
    /// (rmse, rmse_centered, mean_gain, min_gain) per checkpoint.
    points: Vec<(f64, f64, f64, f64)>,
}

fn run_seed(cfg: &ExperimentConfig, seed: u64, marks: &[usize]) -> Result<SeedTrace, SimError> {
    let m = cfg.prior.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut post = Posterior::from_prior(&cfg.prior);
    let pairs: Vec<Pair> = Pair::all(m).collect();
    let none = HashSet::new();
    let truth = &cfg.respondent.true_log_weights;
    let (mut sum_gain, mut min_gain) = (0.0, f64::INFINITY);
    let mut points = Vec::with_capacity(marks.len());
    let mut next_mark = marks.iter().peekable();

    for t in 0..cfg.n_questions {
        let pair = match cfg.policy {
            Policy::Active => select_pair(&post, &none, cfg.prior.sigma_n_sq)
                .map_err(|e| match e {
                    crate::selector::SelectError::Inference(e) => SimError::Inference(e),
                    crate::selector::SelectError::Exhausted => unreachable!("no exclusions"),
                })?
                .pair,
            Policy::Random => pairs[rng.random_range(0..pairs.len())],
            Policy::RoundRobin => pairs[t % pairs.len()],
        };
        let gain = information_gain(&post, pair.i(), pair.j(), cfg.prior.sigma_n_sq)?;
        sum_gain += gain;
        min_gain = min_gain.min(gain);
        let answer = simulate_answer(&cfg.respondent, (pair.i(), pair.j()), &cfg.bounds, &mut rng)?;
        post.observe(&answer, &cfg.prior)?;

        if next_mark.peek() == Some(&&(t + 1)) {
            next_mark.next();
            let w = post.mean().as_slice();
            points.push((rmse(w, truth, false), rmse(w, truth, true), sum_gain / (t + 1) as f64, min_gain));
        }
    }
    Ok(SeedTrace { seed, points })
}

/// Simulates `n_seeds` independent runs of `n_questions` sequential
/// questions and averages the error curves over seeds.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, SimError> {
    if cfg.n_questions == 0 {
        return Err(SimError::ZeroCount("n_questions"));
    }
    if cfg.n_seeds == 0 {
        return Err(SimError::ZeroCount("n_seeds"));
    }
    if cfg.respondent.dim() != cfg.prior.dim() {
        return Err(SimError::DimensionMismatch { expected: cfg.prior.dim(), got: cfg.respondent.dim() });
    }
    let marks = checkpoints(cfg.n_questions);
    let seeds: Vec<u64> = (0..cfg.n_seeds as u64).map(|k| cfg.base_seed.wrapping_add(k)).collect();
    let mut traces = seeds
        .par_iter()
        .map(|&s| run_seed(cfg, s, &marks))
        .collect::<Result<Vec<_>, _>>()?;
    traces.sort_by_key(|t| t.seed);

    let k = traces.len() as f64;
    let checkpoints = marks
        .iter()
        .enumerate()
        .map(|(idx, &n)| {
            let pts = traces.iter().map(|t| t.points[idx]);
            let (mut r, mut rc, mut g, mut gmin) = (0.0, 0.0, 0.0, f64::INFINITY);
            for (a, b, c, d) in pts {
                r += a;
                rc += b;
                g += c;
                gmin = gmin.min(d);
            }
            Checkpoint { n, rmse: r / k, rmse_centered: rc / k, mean_info_gain: g / k, min_info_gain: gmin }
        })
        .collect();
    Ok(ExperimentReport { policy: cfg.policy, n_questions: cfg.n_questions, seeds, checkpoints })
}

/// One row of a perceived-vs-true table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptionRow {
    pub action_id: usize,
    pub title: String,
    pub perceived_kg: f64,
    pub true_kg: f64,
    pub log10_ratio: f64,
}

pub fn perception_rows(posterior: &Posterior, catalog: &Catalog) -> Vec<PerceptionRow> {
    catalog
        .actions()
        .iter()
        .zip(posterior.perceived_footprint())
        .map(|(a, perceived_kg)| PerceptionRow {
            action_id: a.id,
            title: a.title.clone(),
            perceived_kg,
            true_kg: a.true_footprint,
            log10_ratio: (perceived_kg / a.true_footprint).log10(),
        })
        .collect()
}

/// Writes `action_id,title,perceived_kg,true_kg,log10_ratio` rows.
pub fn export_perception(posterior: &Posterior, catalog: &Catalog, out: impl AsRef<Path>) -> Result<(), SimError> {
    let mut w = csv::Writer::from_path(out)?;
    for row in perception_rows(posterior, catalog) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub action_id: usize,
    pub title: String,
    pub perceived_kg: f64,
    pub true_kg: f64,
    pub log10_ratio: f64,
    pub posterior_mean: f64,
    pub posterior_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub n_observations: usize,
    pub sigma_n_sq: f64,
    pub sigma_p_sq: f64,
    pub prior_mean: f64,
    pub rmse: f64,
    pub rmse_centered: f64,
    pub rows: Vec<FitRow>,
}

impl FitReport {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), SimError> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Batch posterior over the triplet log at `log`, summarised against the
/// catalog's true values.
pub fn fit_from_log(log: impl AsRef<Path>, catalog: &Catalog, prior: &PriorSpec) -> Result<FitReport, SimError> {
    let posterior = store::rebuild_posterior(log, prior)?;
    Ok(fit_report(&posterior, catalog, prior))
}

pub fn fit_report(posterior: &Posterior, catalog: &Catalog, prior: &PriorSpec) -> FitReport {
    let truth = catalog.log_footprints();
    let mean = posterior.mean().as_slice();
    let rows = perception_rows(posterior, catalog)
        .into_iter()
        .zip(mean.iter().zip(posterior.marginal_sd()))
        .map(|(r, (&posterior_mean, posterior_sd))| FitRow {
            action_id: r.action_id,
            title: r.title,
            perceived_kg: r.perceived_kg,
            true_kg: r.true_kg,
            log10_ratio: r.log10_ratio,
            posterior_mean,
            posterior_sd,
        })
        .collect();
    FitReport {
        n_observations: posterior.n_observations(),
        sigma_n_sq: prior.sigma_n_sq,
        sigma_p_sq: prior.sigma_p_sq,
        prior_mean: prior.mu.iter().sum::<f64>() / prior.dim() as f64,
        rmse: rmse(mean, &truth, false),
        rmse_centered: rmse(mean, &truth, true),
        rows,
    }
}

/// Writes a log of `n` synthetic answers to uniformly random pairs, spread
/// over sessions of `per_session` answers.
pub fn write_synthetic_log(
    path: impl Into<PathBuf>,
    respondent: &SyntheticRespondent,
    n: usize,
    per_session: usize,
    seed: u64,
    bounds: &AnswerBounds,
) -> Result<Vec<Triplet>, SimError> {
    let (mut log, _) = TripletLog::open(path)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<Pair> = Pair::all(respondent.dim()).collect();
    let per_session = per_session.max(1);
    let mut written = Vec::with_capacity(n);
    for k in 0..n {
        let session = format!("synthetic-{seed}-{}", k / per_session);
        let p = pairs[rng.random_range(0..pairs.len())];
        let t = simulate_answer(respondent, (p.i(), p.j()), bounds, &mut rng)?;
        log.append(&session, &t)?;
        written.push(t);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_answer_is_true_ratio() {
        let catalog = Catalog::builtin();
        let r = SyntheticRespondent::truthful(&catalog, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = simulate_answer(&r, (16, 1), &AnswerBounds::default(), &mut rng).unwrap();
        assert_eq!((t.i, t.j), (16, 1));
        assert!((t.y - 2300.0 / 17.0).abs() < 1e-10, "{}", t.y);
        assert!(simulate_answer(&r, (3, 3), &AnswerBounds::default(), &mut rng).is_err());
    }

    #[test]
    fn noisy_answers_are_seeded_and_clamped() {
        let r = SyntheticRespondent::new(vec![0.0, 20.0], 1.0).unwrap();
        let b = AnswerBounds::default();
        let draw = |seed| simulate_answer(&r, (2, 1), &b, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap().y;
        assert_eq!(draw(11).to_bits(), draw(11).to_bits());
        assert_eq!(draw(11), 1000.0);
        assert!(SyntheticRespondent::new(vec![0.0; 2], -1.0).is_err());
    }

    #[test]
    fn checkpoint_schedule() {
        assert_eq!(checkpoints(200), vec![10, 25, 50, 100, 200]);
        assert_eq!(checkpoints(500), vec![10, 25, 50, 100, 200, 400, 500]);
        assert_eq!(checkpoints(30), vec![10, 25, 30]);
        assert_eq!(checkpoints(5), vec![5]);
        assert_eq!(checkpoints(10), vec![10]);
    }

    #[test]
    fn rmse_variants() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0], false), 0.0);
        assert!((rmse(&[2.0, 3.0], &[1.0, 2.0], false) - 1.0).abs() < 1e-15);
        assert_eq!(rmse(&[2.0, 3.0], &[1.0, 2.0], true), 0.0);
    }

    #[test]
    fn policy_names() {
        assert_eq!("active".parse::<Policy>().unwrap(), Policy::Active);
        assert_eq!("round_robin".parse::<Policy>().unwrap(), Policy::RoundRobin);
        assert!(matches!("greedy".parse::<Policy>(), Err(SimError::UnknownPolicy(_))));
    }

    fn config(policy: Policy, n: usize, noise: f64) -> ExperimentConfig {
        let catalog = Catalog::builtin();
        ExperimentConfig {
            policy,
            n_questions: n,
            n_seeds: 3,
            base_seed: 7,
            respondent: SyntheticRespondent::truthful(&catalog, noise).unwrap(),
            prior: catalog.build_prior(10.0, 1.0).unwrap(),
            bounds: AnswerBounds::default(),
        }
    }

    #[test]
    fn experiment_rejects_zero_counts() {
        assert!(matches!(run_experiment(&config(Policy::Active, 0, 1.0)), Err(SimError::ZeroCount(_))));
        let mut cfg = config(Policy::Active, 10, 1.0);
        cfg.n_seeds = 0;
        assert!(run_experiment(&cfg).is_err());
    }

    #[test]
    fn random_policy_is_reproducible() {
        let a = run_experiment(&config(Policy::Random, 60, 1.0)).unwrap();
        let b = run_experiment(&config(Policy::Random, 60, 1.0)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.seeds, vec![7, 8, 9]);
        assert_eq!(a.checkpoints.iter().map(|c| c.n).collect::<Vec<_>>(), vec![10, 25, 50, 60]);
    }

    #[test]
    fn noiseless_active_recovers_differences() {
        let report = run_experiment(&config(Policy::Active, 400, 0.0)).unwrap();
        let first = &report.checkpoints[0];
        let last = report.last();
        assert!(last.rmse_centered < first.rmse_centered);
        assert!(last.rmse_centered < 0.05, "{}", last.rmse_centered);
        assert!(last.min_info_gain > 0.0);
    }

    #[test]
    fn export_prior_only_and_exact_cases() {
        let dir = tempfile::tempdir().unwrap();
        let catalog = Catalog::builtin();
        let prior = catalog.build_prior(10.0, 1.0).unwrap();
        let out = dir.path().join("chart.csv");
        export_perception(&Posterior::from_prior(&prior), &catalog, &out).unwrap();
        let mut rdr = csv::Reader::from_path(&out).unwrap();
        assert_eq!(
            rdr.headers().unwrap(),
            vec!["action_id", "title", "perceived_kg", "true_kg", "log10_ratio"]
        );
        let rows: Vec<PerceptionRow> = rdr.deserialize().map(Result::unwrap).collect();
        assert_eq!(rows.len(), 18);
        assert!(rows.iter().all(|r| (r.perceived_kg - 219.48363854508833).abs() < 1e-9));

        let mut exact = prior.clone();
        exact.mu = catalog.log_footprints();
        let rows = perception_rows(&Posterior::from_prior(&exact), &catalog);
        assert!(rows.iter().all(|r| r.log10_ratio.abs() < 1e-14));
    }

    #[test]
    fn fit_of_empty_log_is_prior() {
        let dir = tempfile::tempdir().unwrap();
        let catalog = Catalog::builtin();
        let prior = catalog.build_prior(10.0, 1.0).unwrap();
        let report = fit_from_log(dir.path().join("none.jsonl"), &catalog, &prior).unwrap();
        assert_eq!(report.n_observations, 0);
        assert!(report.rows.iter().all(|r| (r.perceived_kg - 219.48363854508833).abs() < 1e-9));
        assert!(report.rows.iter().all(|r| (r.posterior_sd - 10f64.sqrt()).abs() < 1e-12));
    }

    #[test]
    fn round_robin_cycles_pairs() {
        let report = run_experiment(&config(Policy::RoundRobin, 153, 1.0)).unwrap();
        assert!(report.last().rmse_centered.is_finite());
    }
}
