use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("model error: {0}")]
    Model(#[from] tabnet_core::TabNetError),

    #[error("could not load model: {0}")]
    ModelLoad(#[from] tabnet_core::LoadError),

    #[error("run failed: {0}")]
    Run(String),

    #[error("nothing to report: {0}")]
    Empty(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl BenchError {
    /// Process exit code for this failure category.
    pub fn exit_code(&self) -> u8 {
        match self {
            BenchError::Config(_) | BenchError::Json(_) => 3,
            BenchError::Data(_) | BenchError::Model(_) | BenchError::ModelLoad(_) => 4,
            BenchError::Run(_) => 5,
            BenchError::Empty(_) => 6,
            BenchError::Io(_) => 7,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            BenchError::Config(_) | BenchError::Json(_) => "config",
            BenchError::Data(_) | BenchError::Model(_) | BenchError::ModelLoad(_) => "model",
            BenchError::Run(_) => "run",
            BenchError::Empty(_) => "empty",
            BenchError::Io(_) => "io",
        }
    }
}

impl From<bdaas_pipeline::PipelineError> for BenchError {
    fn from(e: bdaas_pipeline::PipelineError) -> Self {
        BenchError::Data(e.to_string())
    }
}

impl From<bdaas_econ::EconError> for BenchError {
    fn from(e: bdaas_econ::EconError) -> Self {
        BenchError::Config(e.to_string())
    }
}

impl From<interpret_eval::EvalError> for BenchError {
    fn from(e: interpret_eval::EvalError) -> Self {
        BenchError::Run(e.to_string())
    }
}

impl From<bdaas_security::SecurityError> for BenchError {
    fn from(e: bdaas_security::SecurityError) -> Self {
        BenchError::Config(e.to_string())
    }
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;
