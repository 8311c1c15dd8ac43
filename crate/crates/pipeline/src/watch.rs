use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{PipelineError, Result};
use crate::ingest::{ingest_csv, RawTable};
use crate::schema::DatasetSchema;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestionJob {
    pub source: String,
    pub content_hash: String,
    pub bytes: Vec<u8>,
}

impl IngestionJob {
    pub fn run(&self, schema: &DatasetSchema) -> Result<RawTable> {
        ingest_csv(self.bytes.as_slice(), schema)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WatchEvent {
    Job(IngestionJob),
    /// Same content as an earlier job; nothing to do.
    Duplicate { source: String, content_hash: String },
    Failed { source: String, error: String },
}

/// An object-store style notification: a key and either the object bytes or
/// the error hit while fetching them.
#[derive(Debug, Clone)]
pub struct ObjectEvent {
    pub key: String,
    pub body: std::result::Result<Vec<u8>, String>,
}

/// Content-hash deduplication shared by the directory and event-stream inputs.
#[derive(Debug, Default)]
pub struct Deduplicator {
    hashes: HashSet<String>,
    failures: usize,
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Deduplicator {
    pub fn accept(&mut self, source: String, body: std::result::Result<Vec<u8>, String>) -> WatchEvent {
        match body {
            Err(error) => {
                self.failures += 1;
                tracing::warn!(%source, %error, "ingestion trigger failed");
                WatchEvent::Failed { source, error }
            }
            Ok(bytes) => {
                let hash = content_hash(&bytes);
                if self.hashes.insert(hash.clone()) {
                    WatchEvent::Job(IngestionJob {
                        source,
                        content_hash: hash,
                        bytes,
                    })
                } else {
                    WatchEvent::Duplicate {
                        source,
                        content_hash: hash,
                    }
                }
            }
        }
    }

    pub fn failures(&self) -> usize {
        self.failures
    }

    pub fn process_events(&mut self, events: impl IntoIterator<Item = ObjectEvent>) -> Vec<WatchEvent> {
        events.into_iter().map(|e| self.accept(e.key, e.body)).collect()
    }
}

/// Polls a directory for new files. Each path is handed out once; a path that
/// could not be read is retried on the next poll.
#[derive(Debug)]
pub struct DirectoryWatcher {
    dir: PathBuf,
    seen_paths: HashSet<PathBuf>,
    dedup: Deduplicator,
}

impl DirectoryWatcher {
    pub fn new(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        if !dir.is_dir() {
            return Err(PipelineError::WatchTarget(dir));
        }
        Ok(Self {
            dir,
            seen_paths: HashSet::new(),
            dedup: Deduplicator::default(),
        })
    }

    pub fn failures(&self) -> usize {
        self.dedup.failures()
    }

    /// One scan of the directory, in file-name order.
    pub fn poll_once(&mut self) -> Result<Vec<WatchEvent>> {
        let mut paths: Vec<PathBuf> = fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| !p.is_dir() && !self.seen_paths.contains(p))
            .collect();
        paths.sort();
        let mut events = Vec::with_capacity(paths.len());
        for path in paths {
            let source = path.display().to_string();
            let body = fs::read(&path).map_err(|e| e.to_string());
            if body.is_ok() {
                self.seen_paths.insert(path);
            }
            events.push(self.dedup.accept(source, body));
        }
        Ok(events)
    }
}
