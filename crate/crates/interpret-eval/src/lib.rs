//! Interpretability evaluation: how stable aggregate feature importance is
//! across sample partitions, and whether explanations stay bitwise identical
//! under serving load.

mod error;
pub mod invariance;
pub mod stability;

pub use error::{EvalError, Result};
pub use invariance::{
    compare_explanations, explain_under_load, load_invariance_check, Difference, InvarianceComparison,
    InvarianceOutcome, InvarianceReport, LoadMode, LoadedPass,
};
pub use stability::{
    descending_ranks, feature_stability, normalized_rank_variance, stability_from_batches, stability_score,
    FeatureStability, StabilityReport, FORMULA,
};
