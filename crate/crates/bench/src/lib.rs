//! Benchmark harness wiring the model, serving, security, telemetry,
//! economics and interpretability crates together.

mod error;
pub mod load;
pub mod report;
pub mod scenario;
pub mod secbench;
pub mod stats;
pub mod training;

pub use error::{BenchError, Result};
pub use load::{load_measurements, run_scenario, BatchPoint, MeasurementSet, Repetition};
pub use report::{emit_reports, write_reports, Extras, ReportFile};
pub use scenario::{Arrival, Scenario};
pub use secbench::{measure_composition, CompositionReport};
pub use training::{train_and_evaluate, TrainOutcome, TrainRecipe};
