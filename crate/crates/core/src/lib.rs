//! Causal k-nearest-neighbor individualized treatment regimes.
//!
//! A regime recommends, for covariates `x`, the arm whose inverse-probability
//! weighted outcome mean among the `k` nearest trial subjects is largest.
//! The adaptive variant weights covariates by a per-covariate importance
//! score, dropping those below a threshold, before searching neighbors.

pub mod adaptive;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod neighbors;
pub mod persist;
pub mod simulation;
pub mod tuning;
pub mod value;

pub use ndarray;

pub use adaptive::{build_metric, covariate_importance, fit_adaptive, AdaptiveFit, ImportanceReport};
pub use dataset::{Arm, CsvSchema, ScalingParams, TrialDataset};
pub use error::{Error, Result};
pub use estimator::{decide, ArmEstimates, CnnModel, DecisionPolicy, RegimeModel};
pub use neighbors::{find_neighbors, DiagonalMetric, NeighborSet, SearchBackend};
pub use tuning::{cross_validate, default_grid, CvReport, Method, TuneGrid};
pub use value::{compare_regimes, ipw_value, noninformative_regime, ComparisonReport, ValueReport};
