//! Hash-chained JSON-lines audit log.
//!
//! Each record stores the hash of its predecessor, and its own hash covers
//! the predecessor hash plus its canonical serialization. Redaction runs
//! before hashing, so the persisted bytes never contain the original PII.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use crossbeam_channel::{bounded, Receiver, Sender, TrySendError};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::clock::Clock;
use crate::error::{Result, SecurityError};
use crate::redact::Redactor;

pub const GENESIS_HASH: [u8; 32] = [0; 32];
pub const DEFAULT_BUFFER: usize = 8192;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestContext {
    pub subject: String,
    pub endpoint: String,
    /// SHA-256 hex digest of the request body.
    pub input_digest: String,
    /// Free-form request metadata; redacted before it is hashed.
    #[serde(default)]
    pub attributes: BTreeMap<String, Value>,
}

/// Fields supplied by the caller; the chain fills in the rest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditEntry {
    pub context: RequestContext,
    pub model_version: String,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditRecord {
    pub seq: u64,
    pub timestamp_ms: u64,
    pub context: RequestContext,
    pub model_version: String,
    pub outcome: String,
    pub prev_hash: String,
    pub this_hash: String,
}

/// The record without its own hash, in the field order that is hashed.
#[derive(Serialize)]
struct Unsealed<'a> {
    seq: u64,
    timestamp_ms: u64,
    context: &'a RequestContext,
    model_version: &'a str,
    outcome: &'a str,
    prev_hash: &'a str,
}

impl AuditRecord {
    fn compute_hash(&self) -> Result<[u8; 32]> {
        let prev = hex::decode(&self.prev_hash).map_err(|e| SecurityError::Audit(format!("prev_hash: {e}")))?;
        let body = serde_json::to_vec(&Unsealed {
            seq: self.seq,
            timestamp_ms: self.timestamp_ms,
            context: &self.context,
            model_version: &self.model_version,
            outcome: &self.outcome,
            prev_hash: &self.prev_hash,
        })?;
        let mut h = Sha256::new();
        h.update(&prev);
        h.update(&body);
        Ok(h.finalize().into())
    }

    pub fn to_line(&self) -> Vec<u8> {
        let mut line = serde_json::to_vec(self).expect("audit record serializes");
        line.push(b'\n');
        line
    }
}

/// Synchronous chain state: next sequence number and last hash.
#[derive(Debug, Clone)]
pub struct AuditChain {
    next_seq: u64,
    last_hash: [u8; 32],
    redactor: Redactor,
}

impl AuditChain {
    pub fn new(redactor: Redactor) -> Self {
        Self {
            next_seq: 1,
            last_hash: GENESIS_HASH,
            redactor,
        }
    }

    /// Continues an existing log after verifying it.
    pub fn resume(bytes: &[u8], redactor: Redactor) -> Result<Self> {
        match verify_audit_chain(bytes) {
            Verification::Ok { records, last_hash } => Ok(Self {
                next_seq: records + 1,
                last_hash,
                redactor,
            }),
            Verification::Tampered { seq, reason } => Err(SecurityError::Audit(format!(
                "existing log fails verification at seq {seq}: {reason}"
            ))),
        }
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Builds the next record without committing it.
    pub fn prepare(&self, entry: &AuditEntry, timestamp_ms: u64) -> Result<AuditRecord> {
        let mut context = entry.context.clone();
        context.subject = self.redactor.redact_str(&context.subject);
        context.endpoint = self.redactor.redact_str(&context.endpoint);
        context.attributes = context
            .attributes
            .into_iter()
            .filter_map(|(k, v)| {
                let wrapped = Value::Object([(k, v)].into_iter().collect());
                match self.redactor.redact(&wrapped) {
                    Value::Object(m) => m.into_iter().next(),
                    _ => None,
                }
            })
            .collect();
        let mut record = AuditRecord {
            seq: self.next_seq,
            timestamp_ms,
            context,
            model_version: self.redactor.redact_str(&entry.model_version),
            outcome: self.redactor.redact_str(&entry.outcome),
            prev_hash: hex::encode(self.last_hash),
            this_hash: String::new(),
        };
        record.this_hash = hex::encode(record.compute_hash()?);
        Ok(record)
    }

    pub fn commit(&mut self, record: &AuditRecord) {
        self.next_seq = record.seq + 1;
        let mut h = [0u8; 32];
        hex::decode_to_slice(&record.this_hash, &mut h).expect("hash produced by prepare");
        self.last_hash = h;
    }

    pub fn append(&mut self, entry: &AuditEntry, timestamp_ms: u64) -> Result<AuditRecord> {
        let r = self.prepare(entry, timestamp_ms)?;
        self.commit(&r);
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verification {
    Ok { records: u64, last_hash: [u8; 32] },
    /// The first sequence number that fails; a record that cannot be parsed
    /// is reported under the sequence number it should have carried.
    Tampered { seq: u64, reason: String },
}

impl Verification {
    pub fn is_ok(&self) -> bool {
        matches!(self, Verification::Ok { .. })
    }

    pub fn tampered_seq(&self) -> Option<u64> {
        match self {
            Verification::Tampered { seq, .. } => Some(*seq),
            Verification::Ok { .. } => None,
        }
    }
}

/// Recomputes the whole chain from the genesis hash.
pub fn verify_audit_chain(bytes: &[u8]) -> Verification {
    let mut prev = GENESIS_HASH;
    let mut expected = 1u64;
    if bytes.is_empty() {
        return Verification::Ok {
            records: 0,
            last_hash: prev,
        };
    }
    let Some(body) = bytes.strip_suffix(b"\n") else {
        let last_line_index = bytes.split(|&b| b == b'\n').count() as u64;
        return Verification::Tampered {
            seq: last_line_index,
            reason: "log does not end with a newline".into(),
        };
    };
    for line in body.split(|&b| b == b'\n') {
        let tampered = |reason: String| Verification::Tampered { seq: expected, reason };
        let Ok(text) = std::str::from_utf8(line) else {
            return tampered("invalid utf-8".into());
        };
        let record: AuditRecord = match serde_json::from_str(text) {
            Ok(r) => r,
            Err(e) => return tampered(format!("unparsable record: {e}")),
        };
        if record.to_line()[..] != [line, b"\n"].concat()[..] {
            return tampered("record is not in canonical form".into());
        }
        if record.seq != expected {
            return tampered(format!("sequence {} out of order", record.seq));
        }
        if record.prev_hash != hex::encode(prev) {
            return tampered("prev_hash does not match predecessor".into());
        }
        let hash = match record.compute_hash() {
            Ok(h) => h,
            Err(e) => return tampered(e.to_string()),
        };
        if record.this_hash != hex::encode(hash) {
            return tampered("this_hash does not match contents".into());
        }
        prev = hash;
        expected += 1;
    }
    Verification::Ok {
        records: expected - 1,
        last_hash: prev,
    }
}

pub fn verify_file(path: &Path) -> Result<Verification> {
    Ok(verify_audit_chain(&std::fs::read(path)?))
}

#[derive(Debug, Default)]
pub struct AuditCounters {
    pub enqueued: AtomicU64,
    pub written: AtomicU64,
    pub overflow: AtomicU64,
    pub flush_failures: AtomicU64,
    pub dropped_on_failure: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuditStats {
    pub enqueued: u64,
    pub written: u64,
    pub overflow: u64,
    pub flush_failures: u64,
    pub dropped_on_failure: u64,
    pub depth: usize,
}

enum Message {
    Entry(AuditEntry, u64),
    Flush(Sender<()>),
}

/// Asynchronous audit log. `append` never blocks: when the bounded buffer is
/// full the entry is counted as overflow and dropped. A single background
/// thread assigns sequence numbers, hashes and writes.
pub struct AuditLog {
    tx: Option<Sender<Message>>,
    counters: Arc<AuditCounters>,
    clock: Arc<dyn Clock>,
    path: Option<PathBuf>,
    worker: Option<JoinHandle<()>>,
}

impl std::fmt::Debug for AuditLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AuditLog")
            .field("path", &self.path)
            .field("stats", &self.stats())
            .finish_non_exhaustive()
    }
}

impl AuditLog {
    /// Opens (or continues) a log file.
    pub fn open(path: &Path, redactor: Redactor, capacity: usize, clock: Arc<dyn Clock>) -> Result<Self> {
        let existing = if path.exists() { std::fs::read(path)? } else { Vec::new() };
        let chain = AuditChain::resume(&existing, redactor)?;
        let file: File = OpenOptions::new().create(true).append(true).open(path)?;
        let mut log = Self::with_sink(Box::new(BufWriter::new(file)), chain, capacity, clock);
        log.path = Some(path.to_path_buf());
        Ok(log)
    }

    /// Writes to an arbitrary sink, starting from `chain`.
    pub fn with_sink(
        sink: Box<dyn Write + Send>,
        chain: AuditChain,
        capacity: usize,
        clock: Arc<dyn Clock>,
    ) -> Self {
        let (tx, rx) = bounded(capacity.max(1));
        let counters = Arc::new(AuditCounters::default());
        let worker_counters = counters.clone();
        let worker = std::thread::Builder::new()
            .name("audit-writer".into())
            .spawn(move || writer_loop(rx, sink, chain, &worker_counters))
            .expect("spawn audit writer");
        Self {
            tx: Some(tx),
            counters,
            clock,
            path: None,
            worker: Some(worker),
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Returns false when the entry was dropped because the buffer is full.
    pub fn append(&self, entry: AuditEntry) -> bool {
        let Some(tx) = &self.tx else { return false };
        match tx.try_send(Message::Entry(entry, self.clock.unix_millis())) {
            Ok(()) => {
                self.counters.enqueued.fetch_add(1, Ordering::Relaxed);
                true
            }
            Err(TrySendError::Full(_)) | Err(TrySendError::Disconnected(_)) => {
                self.counters.overflow.fetch_add(1, Ordering::Relaxed);
                false
            }
        }
    }

    /// Blocks until every entry enqueued before this call has been handled.
    pub fn flush(&self) {
        let Some(tx) = &self.tx else { return };
        let (done_tx, done_rx) = bounded(1);
        if tx.send(Message::Flush(done_tx)).is_ok() {
            let _ = done_rx.recv();
        }
    }

    pub fn stats(&self) -> AuditStats {
        AuditStats {
            enqueued: self.counters.enqueued.load(Ordering::Relaxed),
            written: self.counters.written.load(Ordering::Relaxed),
            overflow: self.counters.overflow.load(Ordering::Relaxed),
            flush_failures: self.counters.flush_failures.load(Ordering::Relaxed),
            dropped_on_failure: self.counters.dropped_on_failure.load(Ordering::Relaxed),
            depth: self.tx.as_ref().map_or(0, Sender::len),
        }
    }
}

impl Drop for AuditLog {
    fn drop(&mut self) {
        self.tx.take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn writer_loop(rx: Receiver<Message>, mut sink: Box<dyn Write + Send>, mut chain: AuditChain, counters: &AuditCounters) {
    while let Ok(first) = rx.recv() {
        let mut batch = vec![first];
        batch.extend(rx.try_iter());
        let mut pending = chain.clone();
        let mut bytes = Vec::new();
        let mut waiters = Vec::new();
        let mut entries = 0u64;
        for msg in batch {
            match msg {
                Message::Entry(entry, ts) => match pending.append(&entry, ts) {
                    Ok(r) => {
                        bytes.extend_from_slice(&r.to_line());
                        entries += 1;
                    }
                    Err(e) => {
                        tracing::error!(error = %e, "audit record could not be built");
                        counters.dropped_on_failure.fetch_add(1, Ordering::Relaxed);
                    }
                },
                Message::Flush(done) => waiters.push(done),
            }
        }
        if entries > 0 {
            match sink.write_all(&bytes).and_then(|()| sink.flush()) {
                Ok(()) => {
                    chain = pending;
                    counters.written.fetch_add(entries, Ordering::Relaxed);
                }
                Err(e) => {
                    // chain state stays at the last durable record
                    tracing::error!(error = %e, "audit flush failed");
                    counters.flush_failures.fetch_add(1, Ordering::Relaxed);
                    counters.dropped_on_failure.fetch_add(entries, Ordering::Relaxed);
                }
            }
        }
        for w in waiters {
            let _ = w.send(());
        }
    }
}

pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
