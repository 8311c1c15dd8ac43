use std::fs;

use bdaas_pipeline::crypto::{load_decrypted, store_encrypted, EncryptedBlob};
use bdaas_pipeline::watch::{Deduplicator, ObjectEvent};
use bdaas_pipeline::{DatasetSchema, DirectoryWatcher, EncryptionKey, PipelineError, WatchEvent};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tabnet_core::FeatureMatrix;

fn matrix() -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rows: Vec<Vec<f64>> = (0..50).map(|_| (0..7).map(|_| rng.gen_range(-1e6..1e6)).collect()).collect();
    FeatureMatrix::from_rows(&rows).unwrap()
}

#[test]
fn round_trip_is_bit_exact() {
    let key = EncryptionKey::generate("store");
    let m = matrix();
    let blob = store_encrypted(&m, &key).unwrap();
    let back = load_decrypted(&EncryptedBlob::from_bytes(&blob.to_bytes()).unwrap(), &key).unwrap();
    assert_eq!(back.column_names(), m.column_names());
    let a: Vec<u64> = m.values().iter().map(|v| v.to_bits()).collect();
    let b: Vec<u64> = back.values().iter().map(|v| v.to_bits()).collect();
    assert_eq!(a, b);
}

#[test]
fn every_single_bit_flip_fails_authentication() {
    let key = EncryptionKey::generate("store");
    let blob = store_encrypted(&matrix(), &key).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let mut t = blob.clone();
        let which = rng.gen_range(0..3);
        match which {
            0 => {
                let i = rng.gen_range(0..t.ciphertext.len());
                t.ciphertext[i] ^= 1 << rng.gen_range(0..8);
            }
            1 => t.tag[rng.gen_range(0..16)] ^= 1 << rng.gen_range(0..8),
            _ => t.nonce[rng.gen_range(0..12)] ^= 1 << rng.gen_range(0..8),
        }
        assert!(matches!(load_decrypted(&t, &key), Err(PipelineError::AuthenticationFailed)));
    }
}

#[test]
fn perturbed_keys_never_decrypt() {
    let key = EncryptionKey::generate("store");
    let blob = store_encrypted(&matrix(), &key).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let mut bytes = *key.bytes();
        let flips = rng.gen_range(1..=8);
        for _ in 0..flips {
            bytes[rng.gen_range(0..32)] ^= 1 << rng.gen_range(0..8);
        }
        if &bytes == key.bytes() {
            bytes[0] ^= 1;
        }
        let other = EncryptionKey::from_bytes("store", bytes);
        assert!(matches!(load_decrypted(&blob, &other), Err(PipelineError::AuthenticationFailed)));
    }
}

#[test]
fn same_plaintext_gets_fresh_nonce_and_ciphertext() {
    let key = EncryptionKey::generate("store");
    let m = matrix();
    let a = store_encrypted(&m, &key).unwrap();
    let b = store_encrypted(&m, &key.clone()).unwrap();
    assert_ne!(a.nonce, b.nonce);
    assert_ne!(a.ciphertext, b.ciphertext);
    assert_eq!(a.plaintext_len(), b.plaintext_len());
}

fn hr_like(seed: u64) -> Vec<u8> {
    bdaas_pipeline::synth::hr_csv_rows(seed, 20)
}

#[test]
fn three_new_files_give_three_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let mut w = DirectoryWatcher::new(dir.path()).unwrap();
    for i in 0..3 {
        fs::write(dir.path().join(format!("f{i}.csv")), hr_like(i)).unwrap();
    }
    let events = w.poll_once().unwrap();
    let jobs: Vec<_> = events
        .iter()
        .filter_map(|e| match e {
            WatchEvent::Job(j) => Some(j),
            _ => None,
        })
        .collect();
    assert_eq!(jobs.len(), 3);
    for j in jobs {
        assert_eq!(j.run(&DatasetSchema::hr()).unwrap().len(), 20);
    }
    assert!(w.poll_once().unwrap().is_empty(), "files must not retrigger");
}

#[test]
fn identical_content_is_ingested_once() {
    let dir = tempfile::tempdir().unwrap();
    let mut w = DirectoryWatcher::new(dir.path()).unwrap();
    fs::write(dir.path().join("a.csv"), hr_like(9)).unwrap();
    let first = w.poll_once().unwrap();
    fs::write(dir.path().join("b.csv"), hr_like(9)).unwrap();
    let second = w.poll_once().unwrap();
    assert!(matches!(first.as_slice(), [WatchEvent::Job(_)]));
    assert!(matches!(second.as_slice(), [WatchEvent::Duplicate { .. }]));
}

#[test]
fn unreadable_file_does_not_stop_the_others() {
    let dir = tempfile::tempdir().unwrap();
    let mut w = DirectoryWatcher::new(dir.path()).unwrap();
    fs::write(dir.path().join("a.csv"), hr_like(1)).unwrap();
    // a dangling symlink cannot be read regardless of privileges
    std::os::unix::fs::symlink(dir.path().join("nowhere"), dir.path().join("b.csv")).unwrap();
    fs::write(dir.path().join("c.csv"), hr_like(2)).unwrap();
    let events = w.poll_once().unwrap();
    assert_eq!(events.len(), 3);
    assert!(matches!(events[0], WatchEvent::Job(_)));
    assert!(matches!(events[1], WatchEvent::Failed { .. }));
    assert!(matches!(events[2], WatchEvent::Job(_)));
    assert_eq!(w.failures(), 1);
}

#[test]
fn missing_directory_is_rejected() {
    assert!(matches!(
        DirectoryWatcher::new("/definitely/not/here"),
        Err(PipelineError::WatchTarget(_))
    ));
}

#[test]
fn object_event_stream_is_deduplicated() {
    let mut d = Deduplicator::default();
    let events = d.process_events(vec![
        ObjectEvent {
            key: "s3://b/1".into(),
            body: Ok(b"x,y\n".to_vec()),
        },
        ObjectEvent {
            key: "s3://b/2".into(),
            body: Err("access denied".into()),
        },
        ObjectEvent {
            key: "s3://b/1-retry".into(),
            body: Ok(b"x,y\n".to_vec()),
        },
    ]);
    assert!(matches!(events[0], WatchEvent::Job(_)));
    assert!(matches!(events[1], WatchEvent::Failed { .. }));
    assert!(matches!(events[2], WatchEvent::Duplicate { .. }));
}
