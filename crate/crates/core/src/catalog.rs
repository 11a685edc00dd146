//! The action set and the prior built from its true footprints.
//!
//! The catalog file is a JSON array of `{"id", "title", "description",
//! "kg_co2e"}` objects. Footprints are stored in linear kg CO2e; the log
//! value used by the model is derived on load.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The 18-action catalog shipped with the crate.
pub const ACTIONS_18_JSON: &str = include_str!("../data/actions_18.json");

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("malformed catalog document: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("cannot read catalog file: {0}")]
    Io(#[from] std::io::Error),
    #[error("duplicate id {id} (record {index})")]
    DuplicateId { id: usize, index: usize },
    #[error("non-positive footprint {value} for id {id}")]
    NonPositiveFootprint { id: usize, value: f64 },
    #[error("ids must cover 1..={m}; id {id} is out of range")]
    IdOutOfRange { id: usize, m: usize },
    #[error("catalog needs at least 2 actions, found {0}")]
    TooFewActions(usize),
    #[error("non-positive variance {name} = {value}")]
    NonPositiveVariance { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub id: usize,
    pub title: String,
    pub description: String,
    #[serde(rename = "kg_co2e")]
    pub true_footprint: f64,
}

impl Action {
    /// Natural log of the true footprint.
    pub fn log_footprint(&self) -> f64 {
        self.true_footprint.ln()
    }
}

/// Validated, id-ordered action set. Immutable once loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    actions: Vec<Action>,
}

impl Catalog {
    pub fn from_json(source: &str) -> Result<Self, CatalogError> {
        let actions: Vec<Action> = serde_json::from_str(source)?;
        Self::new(actions)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, CatalogError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// The shipped 18-action catalog.
    pub fn builtin() -> Self {
        Self::from_json(ACTIONS_18_JSON).expect("shipped catalog is valid")
    }

    pub fn new(mut actions: Vec<Action>) -> Result<Self, CatalogError> {
        let m = actions.len();
        let mut seen = HashSet::with_capacity(m);
        for (index, action) in actions.iter().enumerate() {
            if !seen.insert(action.id) {
                return Err(CatalogError::DuplicateId { id: action.id, index });
            }
            if !(action.true_footprint > 0.0) || !action.true_footprint.is_finite() {
                return Err(CatalogError::NonPositiveFootprint {
                    id: action.id,
                    value: action.true_footprint,
                });
            }
        }
        if m < 2 {
            return Err(CatalogError::TooFewActions(m));
        }
        // Distinct ids all inside 1..=m means the range is contiguous.
        if let Some(a) = actions.iter().find(|a| a.id == 0 || a.id > m) {
            return Err(CatalogError::IdOutOfRange { id: a.id, m });
        }
        actions.sort_by_key(|a| a.id);
        Ok(Self { actions })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    /// Looks up an action by its 1-based id.
    pub fn get(&self, id: usize) -> Option<&Action> {
        id.checked_sub(1).and_then(|k| self.actions.get(k))
    }

    /// Log true footprints `v`, indexed by `id - 1`.
    pub fn log_footprints(&self) -> Vec<f64> {
        self.actions.iter().map(Action::log_footprint).collect()
    }

    /// Mean of the natural-log true footprints. Its exponential is the
    /// geometric mean of the footprints.
    pub fn prior_mean_scalar(&self) -> f64 {
        self.actions.iter().map(Action::log_footprint).sum::<f64>() / self.len() as f64
    }

    /// Spherical prior `N(c·1, sigma_p_sq·I)` with observation noise `sigma_n_sq`.
    pub fn build_prior(&self, sigma_p_sq: f64, sigma_n_sq: f64) -> Result<PriorSpec, CatalogError> {
        PriorSpec::constant(self.len(), self.prior_mean_scalar(), sigma_p_sq, sigma_n_sq)
    }
}

/// Hyperparameters of the model: prior mean, spherical prior variance and
/// noise variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub mu: Vec<f64>,
    pub sigma_p_sq: f64,
    pub sigma_n_sq: f64,
    /// Add `FALLBACK_JITTER * I` to the precision when its factorization
    /// fails instead of returning an error. Off unless configured.
    #[serde(default)]
    pub jitter_fallback: bool,
}

impl PriorSpec {
    pub const DEFAULT_SIGMA_P_SQ: f64 = 10.0;
    pub const DEFAULT_SIGMA_N_SQ: f64 = 1.0;

    /// Prior with every entry of the mean equal to `c`.
    pub fn constant(m: usize, c: f64, sigma_p_sq: f64, sigma_n_sq: f64) -> Result<Self, CatalogError> {
        check_variance("sigma_p_sq", sigma_p_sq)?;
        check_variance("sigma_n_sq", sigma_n_sq)?;
        Ok(Self {
            mu: vec![c; m],
            sigma_p_sq,
            sigma_n_sq,
            jitter_fallback: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn with_jitter_fallback(mut self, enabled: bool) -> Self {
        self.jitter_fallback = enabled;
        self
    }
}

fn check_variance(name: &'static str, value: f64) -> Result<(), CatalogError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(CatalogError::NonPositiveVariance { name, value })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn catalog_of(footprints: &[f64]) -> Catalog {
        let actions = footprints
            .iter()
            .enumerate()
            .map(|(k, &v)| Action {
                id: k + 1,
                title: format!("a{}", k + 1),
                description: String::new(),
                true_footprint: v,
            })
            .collect();
        Catalog::new(actions).unwrap()
    }

    const APPENDIX_KG: [f64; 18] = [
        17.0, 40.0, 40.0, 45.0, 45.0, 75.0, 89.0, 100.0, 200.0, 239.0, 270.0, 300.0, 400.0, 449.0,
        800.0, 2300.0, 3300.0, 9000.0,
    ];

    #[test]
    fn shipped_catalog_matches_appendix() {
        let catalog = Catalog::builtin();
        assert_eq!(catalog.len(), 18);
        let kg: Vec<f64> = catalog.actions().iter().map(|a| a.true_footprint).collect();
        assert_eq!(kg, APPENDIX_KG);
        assert_eq!(catalog.get(1).unwrap().true_footprint, 17.0);
        assert_eq!(catalog.get(18).unwrap().true_footprint, 9000.0);
        assert!(catalog.get(0).is_none());
        assert!(catalog.get(19).is_none());
    }

    #[test]
    fn prior_mean_scalar_of_shipped_catalog() {
        // numpy: sum(log(v)) / 18
        let c = Catalog::builtin().prior_mean_scalar();
        assert!((c - 5.391277690079096).abs() < 1e-12, "{c}");
        assert!((c.exp() - 219.48363854508833).abs() < 1e-9);
    }

    #[test]
    fn prior_mean_scalar_small_cases() {
        assert!((catalog_of(&[E, E]).prior_mean_scalar() - 1.0).abs() < 1e-15);
        assert!((catalog_of(&[1.0, E * E]).prior_mean_scalar() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn minimal_two_action_catalog() {
        let c = Catalog::from_json(
            r#"[{"id":2,"title":"b","description":"","kg_co2e":1},
                {"id":1,"title":"a","description":"","kg_co2e":1}]"#,
        )
        .unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.actions()[0].title, "a");
    }

    #[test]
    fn rejects_invalid_documents() {
        let zero = r#"[{"id":1,"title":"a","description":"","kg_co2e":0},
                       {"id":2,"title":"b","description":"","kg_co2e":1}]"#;
        let err = Catalog::from_json(zero).unwrap_err();
        assert!(matches!(err, CatalogError::NonPositiveFootprint { id: 1, .. }));
        assert!(err.to_string().contains("non-positive footprint"));

        let dup = r#"[{"id":1,"title":"a","description":"","kg_co2e":1},
                      {"id":1,"title":"b","description":"","kg_co2e":1}]"#;
        assert!(matches!(
            Catalog::from_json(dup).unwrap_err(),
            CatalogError::DuplicateId { id: 1, index: 1 }
        ));

        let one = r#"[{"id":1,"title":"a","description":"","kg_co2e":1}]"#;
        assert!(matches!(Catalog::from_json(one).unwrap_err(), CatalogError::TooFewActions(1)));

        let gap = r#"[{"id":1,"title":"a","description":"","kg_co2e":1},
                      {"id":3,"title":"b","description":"","kg_co2e":1}]"#;
        assert!(matches!(
            Catalog::from_json(gap).unwrap_err(),
            CatalogError::IdOutOfRange { id: 3, m: 2 }
        ));

        assert!(matches!(Catalog::from_json("{").unwrap_err(), CatalogError::Malformed(_)));
        let missing = r#"[{"id":1,"title":"a","kg_co2e":1}]"#;
        assert!(matches!(Catalog::from_json(missing).unwrap_err(), CatalogError::Malformed(_)));
    }

    #[test]
    fn build_prior_is_constant_mean() {
        let catalog = Catalog::builtin();
        let prior = catalog.build_prior(10.0, 1.0).unwrap();
        assert_eq!(prior.dim(), 18);
        assert!(prior.mu.iter().all(|&m| m == catalog.prior_mean_scalar()));
        assert_eq!(prior.sigma_p_sq, 10.0);
        assert_eq!(prior.sigma_n_sq, 1.0);

        let prior = catalog_of(&[E, E]).build_prior(1.0, 1.0).unwrap();
        assert!(prior.mu.iter().all(|&m| (m - 1.0).abs() < 1e-15));
    }

    #[test]
    fn build_prior_rejects_bad_variances() {
        let catalog = Catalog::builtin();
        assert!(catalog.build_prior(10.0, 0.0).is_err());
        assert!(catalog.build_prior(0.0, 1.0).is_err());
        assert!(catalog.build_prior(-1.0, 1.0).is_err());
        assert!(catalog.build_prior(f64::NAN, 1.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn prior_mean_scalar_is_permutation_invariant(
                kg in prop::collection::vec(1e-3f64..1e5, 2..30),
                seed in any::<u64>(),
            ) {
                use rand::seq::SliceRandom;
                use rand::SeedableRng;
                let mut shuffled = kg.clone();
                shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
                let a = catalog_of(&kg).prior_mean_scalar();
                let b = catalog_of(&shuffled).prior_mean_scalar();
                prop_assert!((a - b).abs() < 1e-12);
            }

            #[test]
            fn exp_of_scalar_is_geometric_mean(kg in prop::collection::vec(1e-3f64..1e5, 2..30)) {
                let c = catalog_of(&kg).prior_mean_scalar();
                let geo = kg.iter().map(|v| v.powf(1.0 / kg.len() as f64)).product::<f64>();
                prop_assert!((c.exp() - geo).abs() <= 1e-10 * geo);
            }
        }
    }
}
