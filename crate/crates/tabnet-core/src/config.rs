use serde::{Deserialize, Serialize};

use crate::error::{Result, TabNetError};

/// Architecture and regularization settings for a TabNet-style model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Width of the decision branch of each step.
    pub n_d: usize,
    /// Width of the attention branch fed to the next step's mask.
    pub n_a: usize,
    pub n_steps: usize,
    /// Coefficient on the mask-entropy regularizer.
    pub lambda_sparse: f64,
    /// Prior relaxation: how much a feature can be reused across steps.
    pub gamma: f64,
    pub feature_count: usize,
    pub n_classes: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(feature_count: usize, n_classes: usize) -> Self {
        Self {
            n_d: 8,
            n_a: 8,
            n_steps: 3,
            lambda_sparse: 1e-3,
            gamma: 1.3,
            feature_count,
            n_classes,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(TabNetError::Configuration(m.to_string()));
        if self.n_d == 0 {
            return fail("n_d must be at least 1");
        }
        if self.n_a == 0 {
            return fail("n_a must be at least 1");
        }
        if self.n_steps == 0 {
            return fail("n_steps must be at least 1");
        }
        if !(self.lambda_sparse >= 0.0 && self.lambda_sparse.is_finite()) {
            return fail("lambda_sparse must be finite and non-negative");
        }
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            return fail("gamma must be finite and at least 1");
        }
        if self.feature_count == 0 {
            return fail("feature_count must be at least 1");
        }
        if self.n_classes < 2 {
            return fail("n_classes must be at least 2");
        }
        Ok(())
    }

    /// Width of the feature-transformer output (`n_d + n_a`).
    pub fn hidden(&self) -> usize {
        self.n_d + self.n_a
    }
}
