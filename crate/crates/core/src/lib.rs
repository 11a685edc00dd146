//! Population-level perception of carbon footprints, estimated from pairwise
//! ratio comparisons with a closed-form Gaussian posterior and an
//! information-gain question selector.

pub mod catalog;
pub mod inference;
pub mod selector;
pub mod session;
pub mod sim;
pub mod store;

pub use catalog::{Action, Catalog, CatalogError, PriorSpec};
pub use inference::{ComparisonVector, InferenceError, Posterior, Triplet};
pub use selector::{Pair, PairScore, SelectError};
pub use session::{AnswerBounds, QuestionCard, QuizEngine, ResultsSummary, SessionError};
pub use store::{StoreError, TripletLog, TripletRecord};
