use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use bdaas_security::audit::{digest_hex, DEFAULT_BUFFER};
use bdaas_security::{
    verify_audit_chain, AuditChain, AuditEntry, AuditLog, ManualClock, Policy, RedactionRule, Redactor,
    RequestContext, ValueClass,
};
use proptest::prelude::*;
use serde_json::json;

fn entry(i: u32, email: &str) -> AuditEntry {
    let mut attributes = BTreeMap::new();
    attributes.insert("contact".to_string(), json!(email));
    attributes.insert("rows".to_string(), json!(i));
    AuditEntry {
        context: RequestContext {
            subject: format!("analyst-{i}"),
            endpoint: "/infer".into(),
            input_digest: digest_hex(format!("body-{i}").as_bytes()),
            attributes,
        },
        model_version: "tabnet-hr-1".into(),
        outcome: "ok".into(),
    }
}

fn log_bytes(n: u32) -> Vec<u8> {
    let mut chain = AuditChain::new(Redactor::standard());
    let mut out = Vec::new();
    for i in 0..n {
        out.extend(chain.append(&entry(i, "a@b.com"), 1_700_000_000_000 + u64::from(i)).unwrap().to_line());
    }
    out
}

#[test]
fn three_records_verify() {
    let bytes = log_bytes(3);
    let v = verify_audit_chain(&bytes);
    assert!(v.is_ok(), "{v:?}");
    assert!(verify_audit_chain(b"").is_ok());
}

#[test]
fn mutating_record_two_is_reported_as_two() {
    let bytes = log_bytes(3);
    let text = String::from_utf8(bytes).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[1] = lines[1].replace("\"outcome\":\"ok\"", "\"outcome\":\"no\"");
    let tampered = lines.join("\n") + "\n";
    assert_eq!(verify_audit_chain(tampered.as_bytes()).tampered_seq(), Some(2));

    // deleting a record breaks the chain at the following record
    let deleted = format!("{}\n{}\n", lines[0], text.lines().nth(2).unwrap());
    assert_eq!(verify_audit_chain(deleted.as_bytes()).tampered_seq(), Some(2));
}

#[test]
fn redacted_email_never_reaches_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.jsonl");
    let clock = Arc::new(ManualClock::new(1_700_000_000));
    {
        let log = AuditLog::open(&path, Redactor::standard(), DEFAULT_BUFFER, clock.clone()).unwrap();
        for i in 0..3 {
            let mut e = entry(i, "a@b.com");
            e.context.subject = "a@b.com".into();
            assert!(log.append(e));
        }
        log.flush();
        assert_eq!(log.stats().written, 3);
    }
    let bytes = std::fs::read(&path).unwrap();
    assert!(!bytes.windows(7).any(|w| w == b"a@b.com"));
    assert!(verify_audit_chain(&bytes).is_ok());

    // reopening continues the chain
    {
        let log = AuditLog::open(&path, Redactor::standard(), DEFAULT_BUFFER, clock).unwrap();
        log.append(entry(9, "x@y.org"));
        log.flush();
    }
    match verify_audit_chain(&std::fs::read(&path).unwrap()) {
        bdaas_security::Verification::Ok { records, .. } => assert_eq!(records, 4),
        other => panic!("{other:?}"),
    }
}

#[test]
fn reopening_a_tampered_log_fails() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.jsonl");
    let mut bytes = log_bytes(2);
    bytes[10] ^= 0x04;
    std::fs::write(&path, bytes).unwrap();
    let clock = Arc::new(ManualClock::new(0));
    assert!(AuditLog::open(&path, Redactor::standard(), 16, clock).is_err());
}

struct FailingSink;

impl Write for FailingSink {
    fn write(&mut self, _: &[u8]) -> std::io::Result<usize> {
        Err(std::io::Error::other("disk full"))
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

#[test]
fn flush_failure_is_counted_and_append_keeps_working() {
    let clock = Arc::new(ManualClock::new(0));
    let log = AuditLog::with_sink(Box::new(FailingSink), AuditChain::new(Redactor::standard()), 8, clock);
    for i in 0..3 {
        assert!(log.append(entry(i, "")));
    }
    log.flush();
    let s = log.stats();
    assert!(s.flush_failures >= 1);
    assert_eq!(s.dropped_on_failure, 3);
    assert_eq!(s.written, 0);
}

/// Sink that blocks until released, so the buffer can be filled.
struct GatedSink(crossbeam_channel::Receiver<()>);

impl Write for GatedSink {
    fn write(&mut self, b: &[u8]) -> std::io::Result<usize> {
        let _ = self.0.recv();
        Ok(b.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

#[test]
fn full_buffer_overflows_without_blocking() {
    let (release, gate) = crossbeam_channel::unbounded();
    let clock = Arc::new(ManualClock::new(0));
    let log = AuditLog::with_sink(Box::new(GatedSink(gate)), AuditChain::new(Redactor::standard()), 4, clock);
    let mut accepted = 0;
    for i in 0..50 {
        if log.append(entry(i, "")) {
            accepted += 1;
        }
    }
    let s = log.stats();
    assert!(s.overflow > 0);
    assert_eq!(s.overflow + accepted, 50);
    drop(release);
    log.flush();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn any_single_bit_flip_is_detected(byte in any::<prop::sample::Index>(), bit in 0u8..8) {
        let bytes = log_bytes(4);
        let idx = byte.index(bytes.len());
        let mut tampered = bytes.clone();
        tampered[idx] ^= 1 << bit;
        // which record the flipped byte belongs to (1-based)
        let record = bytes[..idx].iter().filter(|&&b| b == b'\n').count() as u64 + 1;
        let v = verify_audit_chain(&tampered);
        let seq = v.tampered_seq();
        prop_assert!(seq.is_some(), "flip at {} undetected", idx);
        prop_assert!(seq.unwrap() <= record, "reported {:?} after record {}", seq, record);
    }

    #[test]
    fn redaction_is_idempotent(
        text in "[a-z0-9@. ()\\-]{0,40}",
        key in "(name|email|note|id)",
    ) {
        let r = Redactor::new(
            vec![
                RedactionRule::value(ValueClass::Email, Policy::Mask),
                RedactionRule::value(ValueClass::Ssn, Policy::Hash),
                RedactionRule::value(ValueClass::Phone, Policy::Mask),
                RedactionRule::field("^name$", Policy::Hash).unwrap(),
                RedactionRule::field("^id$", Policy::Drop).unwrap(),
            ],
            "salt",
        );
        let v = json!({ key: text.clone(), "nested": [text.clone(), {"name": text}] });
        let once = r.redact(&v);
        prop_assert_eq!(r.redact(&once), once);
    }

    #[test]
    fn emails_never_survive(local in "[a-z]{1,8}", domain in "[a-z]{1,8}", pad in "[a-z ]{0,10}") {
        let email = format!("{local}@{domain}.com");
        let out = Redactor::standard().redact_str(&format!("{pad}{email}{pad}"));
        prop_assert!(!out.contains(&email));
        prop_assert!(!out.contains('@'));
    }
}
