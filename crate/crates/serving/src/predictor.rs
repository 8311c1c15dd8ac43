use tabnet_core::{FeatureMatrix, PredictionOutput, TrainedModel};

/// Anything that can score a batch of feature rows.
pub trait Predictor: Send + Sync {
    fn version(&self) -> &str;
    fn feature_count(&self) -> usize;
    fn predict(&self, batch: &FeatureMatrix) -> Result<Vec<PredictionOutput>, String>;
}

impl Predictor for TrainedModel {
    fn version(&self) -> &str {
        self.model_version()
    }

    fn feature_count(&self) -> usize {
        self.config().feature_count
    }

    fn predict(&self, batch: &FeatureMatrix) -> Result<Vec<PredictionOutput>, String> {
        self.forward(batch).map_err(|e| e.to_string())
    }
}
