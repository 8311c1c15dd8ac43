use std::collections::HashSet;
use std::fmt;
use std::sync::{Arc, Mutex};

use aes_gcm::aead::{AeadInPlace, KeyInit};
use aes_gcm::{Aes256Gcm, Key, Nonce, Tag};
use rand::rngs::OsRng;
use rand::RngCore;
use tabnet_core::FeatureMatrix;

use crate::error::{PipelineError, Result};

pub const BLOB_MAGIC: &[u8; 4] = b"AEGB";
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;
const NONCE_ATTEMPTS: usize = 16;

/// A 256-bit key with an identifier. Clones share the record of nonces
/// already used, so a nonce is never reused under the same key.
#[derive(Clone)]
pub struct EncryptionKey {
    id: String,
    bytes: [u8; 32],
    used_nonces: Arc<Mutex<HashSet<[u8; NONCE_LEN]>>>,
}

impl fmt::Debug for EncryptionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EncryptionKey").field("id", &self.id).finish_non_exhaustive()
    }
}

impl EncryptionKey {
    pub fn from_bytes(id: impl Into<String>, bytes: [u8; 32]) -> Self {
        Self {
            id: id.into(),
            bytes,
            used_nonces: Arc::default(),
        }
    }

    pub fn generate(id: impl Into<String>) -> Self {
        let mut bytes = [0u8; 32];
        OsRng.fill_bytes(&mut bytes);
        Self::from_bytes(id, bytes)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn bytes(&self) -> &[u8; 32] {
        &self.bytes
    }

    fn fresh_nonce(&self) -> Result<[u8; NONCE_LEN]> {
        let mut used = self.used_nonces.lock().expect("nonce registry poisoned");
        for _ in 0..NONCE_ATTEMPTS {
            let mut n = [0u8; NONCE_LEN];
            OsRng.fill_bytes(&mut n);
            if used.insert(n) {
                return Ok(n);
            }
        }
        Err(PipelineError::NonceExhausted(self.id.clone()))
    }

    fn cipher(&self) -> Aes256Gcm {
        Aes256Gcm::new(Key::<Aes256Gcm>::from_slice(&self.bytes))
    }
}

/// AES-256-GCM sealed payload. File layout: magic "AEGB", u16 key-id length,
/// key id, 12-byte nonce, ciphertext, 16-byte tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncryptedBlob {
    pub key_id: String,
    pub nonce: [u8; NONCE_LEN],
    pub ciphertext: Vec<u8>,
    pub tag: [u8; TAG_LEN],
}

impl EncryptedBlob {
    /// GCM ciphertext has the same length as the plaintext.
    pub fn plaintext_len(&self) -> usize {
        self.ciphertext.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 2 + self.key_id.len() + NONCE_LEN + self.ciphertext.len() + TAG_LEN);
        out.extend_from_slice(BLOB_MAGIC);
        out.extend_from_slice(&(self.key_id.len() as u16).to_le_bytes());
        out.extend_from_slice(self.key_id.as_bytes());
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.tag);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| PipelineError::MalformedBlob(m.to_string());
        if bytes.len() < 6 || &bytes[..4] != BLOB_MAGIC {
            return Err(bad("missing AEGB magic"));
        }
        let id_len = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
        let rest = &bytes[6..];
        if rest.len() < id_len + NONCE_LEN + TAG_LEN {
            return Err(bad("blob shorter than its declared header"));
        }
        let key_id = std::str::from_utf8(&rest[..id_len])
            .map_err(|_| bad("key id is not UTF-8"))?
            .to_string();
        let rest = &rest[id_len..];
        let nonce: [u8; NONCE_LEN] = rest[..NONCE_LEN].try_into().expect("length checked");
        let body = &rest[NONCE_LEN..];
        let split = body.len() - TAG_LEN;
        Ok(Self {
            key_id,
            nonce,
            ciphertext: body[..split].to_vec(),
            tag: body[split..].try_into().expect("length checked"),
        })
    }
}

fn aad(key_id: &str) -> Vec<u8> {
    let mut a = BLOB_MAGIC.to_vec();
    a.extend_from_slice(key_id.as_bytes());
    a
}

pub fn seal(plaintext: &[u8], key: &EncryptionKey) -> Result<EncryptedBlob> {
    let nonce = key.fresh_nonce()?;
    let mut buf = plaintext.to_vec();
    let tag = key
        .cipher()
        .encrypt_in_place_detached(Nonce::from_slice(&nonce), &aad(&key.id), &mut buf)
        .map_err(|_| PipelineError::MalformedBlob("plaintext too large for GCM".into()))?;
    Ok(EncryptedBlob {
        key_id: key.id.clone(),
        nonce,
        ciphertext: buf,
        tag: tag.into(),
    })
}

/// Decrypts and verifies; nothing is returned unless the tag checks out.
pub fn open(blob: &EncryptedBlob, key: &EncryptionKey) -> Result<Vec<u8>> {
    if blob.key_id != key.id {
        return Err(PipelineError::KeyMismatch {
            blob: blob.key_id.clone(),
            given: key.id.clone(),
        });
    }
    let mut buf = blob.ciphertext.clone();
    key.cipher()
        .decrypt_in_place_detached(
            Nonce::from_slice(&blob.nonce),
            &aad(&blob.key_id),
            &mut buf,
            Tag::from_slice(&blob.tag),
        )
        .map_err(|_| PipelineError::AuthenticationFailed)?;
    Ok(buf)
}

/// Binary matrix encoding: u64 rows, u64 cols, names as (u32 len, bytes),
/// then little-endian f64 values.
pub fn encode_matrix(m: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + m.values().len() * 8);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for name in m.column_names() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    for v in m.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_matrix(bytes: &[u8]) -> Result<FeatureMatrix> {
    let bad = |m: &str| PipelineError::MalformedBlob(m.to_string());
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| bad("matrix payload truncated"))?;
        pos += n;
        Ok(s)
    };
    let rows = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
    let cols = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
    let mut names = Vec::with_capacity(cols);
    for _ in 0..cols {
        let len = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let name = std::str::from_utf8(take(len)?).map_err(|_| bad("column name is not UTF-8"))?;
        names.push(name.to_string());
    }
    let count = rows.checked_mul(cols).ok_or_else(|| bad("matrix dimensions overflow"))?;
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        values.push(f64::from_le_bytes(take(8)?.try_into().expect("8 bytes")));
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes after matrix payload"));
    }
    Ok(FeatureMatrix::new(rows, cols, values, names)?)
}

pub fn store_encrypted(matrix: &FeatureMatrix, key: &EncryptionKey) -> Result<EncryptedBlob> {
    seal(&encode_matrix(matrix), key)
}

pub fn load_decrypted(blob: &EncryptedBlob, key: &EncryptionKey) -> Result<FeatureMatrix> {
    decode_matrix(&open(blob, key)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_bytes_round_trip() {
        let key = EncryptionKey::from_bytes("k1", [7; 32]);
        let blob = seal(b"hello", &key).unwrap();
        let bytes = blob.to_bytes();
        assert_eq!(&bytes[..4], b"AEGB");
        assert_eq!(bytes.len(), 4 + 2 + 2 + 12 + 5 + 16);
        assert_eq!(EncryptedBlob::from_bytes(&bytes).unwrap(), blob);
        assert_eq!(open(&blob, &key).unwrap(), b"hello");
    }

    #[test]
    fn wrong_key_id_is_reported() {
        let blob = seal(b"x", &EncryptionKey::from_bytes("a", [1; 32])).unwrap();
        assert!(matches!(
            open(&blob, &EncryptionKey::from_bytes("b", [1; 32])),
            Err(PipelineError::KeyMismatch { .. })
        ));
    }

    #[test]
    fn truncated_blob_is_malformed() {
        assert!(matches!(EncryptedBlob::from_bytes(b"AEGB\x05\x00ab"), Err(PipelineError::MalformedBlob(_))));
        assert!(matches!(EncryptedBlob::from_bytes(b"XXXX"), Err(PipelineError::MalformedBlob(_))));
    }

    #[test]
    fn debug_hides_key_material() {
        let s = format!("{:?}", EncryptionKey::from_bytes("k", [0xAB; 32]));
        assert!(!s.contains("171"));
    }
}
