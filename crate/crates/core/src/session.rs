//! Quiz sessions over one shared population posterior.
//!
//! Every session picks questions against the latest committed global
//! posterior and commits each answer immediately: the triplet is written to
//! the store first, and only then folded into the posterior. All posterior
//! mutations go through a single writer lock; question selection reads an
//! `Arc` snapshot so reads never wait on the store.

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Action, Catalog, PriorSpec};
use crate::inference::{InferenceError, Posterior, Triplet};
use crate::selector::{select_pair, Pair, SelectError};
use crate::store::{StoreError, TripletLog, TripletRecord, TripletStore};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("session {0} is finished")]
    Finished(String),
    #[error("all pairs have been asked in this session")]
    Exhausted,
    #[error("pair {got} is not the pending question{}", expected.map(|p| format!(" (pending: {p})")).unwrap_or_default())]
    NotPending { got: Pair, expected: Option<Pair> },
    #[error("ratio {y} outside accepted range [{lo}, {hi}]")]
    OutOfBounds { y: f64, lo: f64, hi: f64 },
    #[error("invalid answer bounds [{lo}, {hi}]; need 0 < lo < 1 < hi")]
    InvalidBounds { lo: f64, hi: f64 },
    #[error("catalog has {catalog} actions but prior has dimension {prior}")]
    DimensionMismatch { catalog: usize, prior: usize },
    #[error(transparent)]
    Invalid(#[from] InferenceError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Accepted range for a submitted impact ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnswerBounds {
    pub lo: f64,
    pub hi: f64,
}

impl Default for AnswerBounds {
    fn default() -> Self {
        Self { lo: 1e-3, hi: 1e3 }
    }
}

impl AnswerBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self, SessionError> {
        if lo > 0.0 && lo < 1.0 && hi > 1.0 && hi.is_finite() {
            Ok(Self { lo, hi })
        } else {
            Err(SessionError::InvalidBounds { lo, hi })
        }
    }

    pub fn check(&self, y: f64) -> Result<(), SessionError> {
        if y >= self.lo && y <= self.hi {
            Ok(())
        } else {
            Err(SessionError::OutOfBounds { y, lo: self.lo, hi: self.hi })
        }
    }

    pub fn clamp(&self, y: f64) -> f64 {
        y.clamp(self.lo, self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionView {
    pub id: usize,
    pub title: String,
    pub description: String,
}

impl From<&Action> for ActionView {
    fn from(a: &Action) -> Self {
        Self { id: a.id, title: a.title.clone(), description: a.description.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionCard {
    pub session_id: String,
    pub pair: Pair,
    pub left: ActionView,
    pub right: ActionView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionResult {
    pub id: usize,
    pub title: String,
    pub perceived_kg: f64,
    pub true_kg: f64,
    /// `log10(perceived_kg / true_kg)`
    pub log10_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsSummary {
    pub session_id: String,
    pub actions: Vec<ActionResult>,
    pub n_total_observations: usize,
    pub n_session_answers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceivedAction {
    pub id: usize,
    pub title: String,
    pub perceived_kg: f64,
    pub true_kg: f64,
}

/// Population perception snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perception {
    pub actions: Vec<PerceivedAction>,
    pub n_observations: usize,
}

impl Perception {
    pub fn from_posterior(posterior: &Posterior, catalog: &Catalog) -> Self {
        let actions = catalog
            .actions()
            .iter()
            .zip(posterior.perceived_footprint())
            .map(|(a, perceived_kg)| PerceivedAction {
                id: a.id,
                title: a.title.clone(),
                perceived_kg,
                true_kg: a.true_footprint,
            })
            .collect();
        Self { actions, n_observations: posterior.n_observations() }
    }
}

#[derive(Debug, Clone)]
struct Pending {
    pair: Pair,
    left: usize,
    right: usize,
}

/// State of one participant's quiz run.
#[derive(Debug, Clone)]
pub struct SessionState {
    pub session_id: String,
    pub asked: Vec<Pair>,
    pub answered: Vec<Triplet>,
    pub status: SessionStatus,
    pub created_at: DateTime<Utc>,
    pub rng_seed: u64,
    asked_set: HashSet<Pair>,
    pending: Option<Pending>,
    rng: ChaCha8Rng,
}

impl SessionState {
    fn new(rng_seed: u64) -> Self {
        Self {
            session_id: uuid::Uuid::new_v4().to_string(),
            asked: Vec::new(),
            answered: Vec::new(),
            status: SessionStatus::Active,
            created_at: Utc::now(),
            rng_seed,
            asked_set: HashSet::new(),
            pending: None,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
        }
    }

    pub fn pending_pair(&self) -> Option<Pair> {
        self.pending.as_ref().map(|p| p.pair)
    }
}

struct Writer {
    store: Box<dyn TripletStore>,
    posterior: Posterior,
}

/// Shared quiz state: catalog, hyperparameters, the global posterior and
/// the live sessions.
pub struct QuizEngine {
    catalog: Arc<Catalog>,
    prior: PriorSpec,
    bounds: AnswerBounds,
    writer: Mutex<Writer>,
    snapshot: RwLock<Arc<Posterior>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<SessionState>>>>,
}

impl QuizEngine {
    /// Engine over an arbitrary store whose current contents are summarised
    /// by `posterior`.
    pub fn with_store(
        catalog: Arc<Catalog>,
        prior: PriorSpec,
        bounds: AnswerBounds,
        store: Box<dyn TripletStore>,
        posterior: Posterior,
    ) -> Result<Self, SessionError> {
        if catalog.len() != prior.dim() || posterior.dim() != prior.dim() {
            return Err(SessionError::DimensionMismatch { catalog: catalog.len(), prior: prior.dim() });
        }
        Ok(Self {
            catalog,
            prior,
            bounds,
            snapshot: RwLock::new(Arc::new(posterior.clone())),
            writer: Mutex::new(Writer { store, posterior }),
            sessions: RwLock::new(HashMap::new()),
        })
    }

    /// Opens the triplet log at `log_path` and rebuilds the global posterior
    /// by replaying it.
    pub fn open(
        catalog: Arc<Catalog>,
        prior: PriorSpec,
        bounds: AnswerBounds,
        log_path: impl Into<PathBuf>,
    ) -> Result<Self, SessionError> {
        let (log, loaded) = TripletLog::open(log_path)?;
        let posterior = Posterior::from_dataset(&loaded.triplets(), &prior)?;
        tracing::info!(records = loaded.records.len(), path = %log.path().display(), "replayed triplet log");
        Self::with_store(catalog, prior, bounds, Box::new(log), posterior)
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn bounds(&self) -> AnswerBounds {
        self.bounds
    }

    /// Latest committed global posterior.
    pub fn posterior(&self) -> Arc<Posterior> {
        self.snapshot.read().clone()
    }

    pub fn perception(&self) -> Perception {
        Perception::from_posterior(&self.posterior(), &self.catalog)
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<SessionState>>, SessionError> {
        self.sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(id.to_owned()))
    }

    /// Snapshot of a session's state.
    pub fn session_state(&self, id: &str) -> Result<SessionState, SessionError> {
        Ok(self.session(id)?.lock().clone())
    }

    /// Starts a session. Without a seed, presentation order is seeded from
    /// the OS.
    pub fn start_session(&self, seed: Option<u64>) -> String {
        let seed = seed.unwrap_or_else(|| rand::rng().random());
        let state = SessionState::new(seed);
        let id = state.session_id.clone();
        self.sessions.write().insert(id.clone(), Arc::new(Mutex::new(state)));
        id
    }

    /// Serves the most informative pair not yet asked in this session. An
    /// unanswered question is served again unchanged.
    pub fn next_question(&self, id: &str) -> Result<QuestionCard, SessionError> {
        let session = self.session(id)?;
        let mut s = session.lock();
        if s.status == SessionStatus::Finished {
            return Err(SessionError::Finished(id.to_owned()));
        }
        if let Some(p) = &s.pending {
            return Ok(self.card(id, p));
        }
        let posterior = self.posterior();
        let pick = select_pair(&posterior, &s.asked_set, self.prior.sigma_n_sq).map_err(|e| match e {
            SelectError::Exhausted => SessionError::Exhausted,
            SelectError::Inference(e) => SessionError::Invalid(e),
        })?;
        tracing::debug!(session = id, pair = %pick.pair, info_gain = pick.info_gain, "serving question");
        let pair = pick.pair;
        let (left, right) = if s.rng.random_bool(0.5) { (pair.j(), pair.i()) } else { (pair.i(), pair.j()) };
        s.asked.push(pair);
        s.asked_set.insert(pair);
        let pending = Pending { pair, left, right };
        let card = self.card(id, &pending);
        s.pending = Some(pending);
        Ok(card)
    }

    fn card(&self, id: &str, p: &Pending) -> QuestionCard {
        let view = |k: usize| ActionView::from(self.catalog.get(k).expect("selected ids are in the catalog"));
        QuestionCard { session_id: id.to_owned(), pair: p.pair, left: view(p.left), right: view(p.right) }
    }

    /// Records that action `first` has impact ratio `y` over action
    /// `second`. The pair must be this session's pending question; either
    /// orientation is accepted and stored canonically.
    pub fn submit_answer(&self, id: &str, first: usize, second: usize, y: f64) -> Result<TripletRecord, SessionError> {
        let session = self.session(id)?;
        let mut s = session.lock();
        if s.status == SessionStatus::Finished {
            return Err(SessionError::Finished(id.to_owned()));
        }
        let got = Pair::new(first, second)?;
        let expected = s.pending_pair();
        if expected != Some(got) {
            return Err(SessionError::NotPending { got, expected });
        }
        if !y.is_finite() || y <= 0.0 {
            return Err(InferenceError::InvalidRatio(y).into());
        }
        self.bounds.check(y)?;
        let triplet = Triplet::new(first, second, y)?.canonical();
        triplet.validate(self.catalog.len())?;

        let record = {
            let mut w = self.writer.lock();
            let record = w.store.append(id, &triplet)?;
            w.posterior.observe(&triplet, &self.prior)?;
            *self.snapshot.write() = Arc::new(w.posterior.clone());
            record
        };
        s.pending = None;
        s.answered.push(triplet);
        Ok(record)
    }

    /// Marks the session finished and summarises the current global
    /// perception. Calling it again recomputes the summary.
    pub fn finish_session(&self, id: &str) -> Result<ResultsSummary, SessionError> {
        let session = self.session(id)?;
        let mut s = session.lock();
        s.status = SessionStatus::Finished;
        s.pending = None;
        let posterior = self.posterior();
        let actions = self
            .catalog
            .actions()
            .iter()
            .zip(posterior.perceived_footprint())
            .map(|(a, perceived_kg)| ActionResult {
                id: a.id,
                title: a.title.clone(),
                perceived_kg,
                true_kg: a.true_footprint,
                log10_error: (perceived_kg / a.true_footprint).log10(),
            })
            .collect();
        Ok(ResultsSummary {
            session_id: id.to_owned(),
            actions,
            n_total_observations: posterior.n_observations(),
            n_session_answers: s.answered.len(),
        })
    }
}
