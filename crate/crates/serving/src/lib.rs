//! Stateless batched inference function: a bounded request queue, a
//! size-or-deadline batch former, a cold-start lifecycle with probes and
//! keep-warm, and an HTTP front end.

pub mod batcher;
pub mod coldsim;
mod error;
pub mod http;
pub mod lifecycle;
pub mod predictor;
pub mod service;

pub use batcher::{BatchQueue, BatcherConfig};
pub use coldsim::{simulate_cold_fraction, ArrivalPattern, ColdSimReport};
pub use error::{ServeError, ServiceError};
pub use lifecycle::{Lifecycle, LifecycleConfig, LifecycleState, ModelLoader, Probe};
pub use predictor::Predictor;
pub use service::{InferenceRequest, InferenceResponse, InferenceService, ServiceConfig, ServiceStats, StageLatency, Ticket};
