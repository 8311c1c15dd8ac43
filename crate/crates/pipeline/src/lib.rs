//! Dataset ingestion, preprocessing into model-ready matrices, and
//! AES-256-GCM storage at rest.

pub mod bls;
pub mod crypto;
mod error;
pub mod ingest;
pub mod preprocess;
pub mod schema;
pub mod synth;
pub mod watch;

pub use crypto::{load_decrypted, store_encrypted, EncryptedBlob, EncryptionKey};
pub use error::{PipelineError, Result};
pub use ingest::{ingest_csv, Cell, QuarantinedRow, RawTable};
pub use preprocess::{fit_transform, PlanWarning, PreprocessPlan, Preprocessed, Transform};
pub use schema::{ColumnKind, ColumnSpec, DatasetSchema};
pub use watch::{DirectoryWatcher, IngestionJob, ObjectEvent, WatchEvent};

/// Loads `path` if it exists, otherwise the seeded synthetic stand-in, and
/// returns the ingested table.
pub fn load_dataset(name: &str, path: Option<&std::path::Path>, seed: u64) -> Result<RawTable> {
    let raw_schema = match name {
        "bls" => DatasetSchema::bls_raw(),
        other => DatasetSchema::by_name(other)
            .ok_or_else(|| PipelineError::InvalidSchema(format!("unknown dataset {other:?}")))?,
    };
    let bytes = match path {
        Some(p) if p.exists() => std::fs::read(p)?,
        _ => match name {
            "hr" => synth::hr_csv(seed),
            "adult" => synth::adult_csv(seed, raw_schema.expected_rows),
            _ => synth::bls_raw_csv(seed),
        },
    };
    let table = ingest_csv(bytes.as_slice(), &raw_schema)?;
    if name == "bls" {
        bls::flatten_series(&table)
    } else {
        Ok(table)
    }
}
