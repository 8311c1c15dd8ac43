//! JSON Web Key Sets with a TTL cache in front of the fetch.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use parking_lot::RwLock;
use rsa::traits::PublicKeyParts;
use rsa::{BigUint, RsaPublicKey};
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::error::{JwtError, Result, SecurityError};
use crate::jwt::{KeyResolver, VerificationKey};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Jwk {
    pub kid: String,
    pub kty: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alg: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e: Option<String>,
}

impl Jwk {
    pub fn from_key(kid: impl Into<String>, key: &VerificationKey) -> Self {
        match key {
            VerificationKey::Hmac(secret) => Jwk {
                kid: kid.into(),
                kty: "oct".into(),
                alg: Some("HS256".into()),
                k: Some(URL_SAFE_NO_PAD.encode(secret)),
                n: None,
                e: None,
            },
            VerificationKey::Rsa(public) => Jwk {
                kid: kid.into(),
                kty: "RSA".into(),
                alg: Some("RS256".into()),
                k: None,
                n: Some(URL_SAFE_NO_PAD.encode(public.n().to_bytes_be())),
                e: Some(URL_SAFE_NO_PAD.encode(public.e().to_bytes_be())),
            },
        }
    }

    pub fn to_key(&self) -> Result<VerificationKey> {
        let field = |v: &Option<String>, name: &str| -> Result<Vec<u8>> {
            let text = v
                .as_deref()
                .ok_or_else(|| SecurityError::Key(format!("key {:?} lacks {name}", self.kid)))?;
            URL_SAFE_NO_PAD
                .decode(text)
                .map_err(|e| SecurityError::Key(format!("key {:?} field {name}: {e}", self.kid)))
        };
        match self.kty.as_str() {
            "oct" => Ok(VerificationKey::Hmac(field(&self.k, "k")?)),
            "RSA" => {
                let n = BigUint::from_bytes_be(&field(&self.n, "n")?);
                let e = BigUint::from_bytes_be(&field(&self.e, "e")?);
                let public = RsaPublicKey::new(n, e).map_err(|e| SecurityError::Key(e.to_string()))?;
                Ok(VerificationKey::Rsa(public))
            }
            other => Err(SecurityError::Key(format!("unsupported key type {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JwkSet {
    pub keys: Vec<Jwk>,
}

impl JwkSet {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("key set serializes")
    }
}

/// Where the cache fetches key sets from.
pub trait KeySource: Send + Sync {
    fn fetch(&self) -> Result<JwkSet>;
}

/// In-process key set with an optional simulated fetch delay.
#[derive(Debug)]
pub struct StaticKeySource {
    set: RwLock<JwkSet>,
    latency: Duration,
    fetches: AtomicU64,
}

impl StaticKeySource {
    pub fn new(set: JwkSet, latency: Duration) -> Self {
        Self {
            set: RwLock::new(set),
            latency,
            fetches: AtomicU64::new(0),
        }
    }

    pub fn replace(&self, set: JwkSet) {
        *self.set.write() = set;
    }

    pub fn fetches(&self) -> u64 {
        self.fetches.load(Ordering::Relaxed)
    }
}

impl KeySource for StaticKeySource {
    fn fetch(&self) -> Result<JwkSet> {
        self.fetches.fetch_add(1, Ordering::Relaxed);
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        Ok(self.set.read().clone())
    }
}

/// Key set served as JSON at a URL.
#[derive(Debug)]
pub struct HttpKeySource {
    url: String,
    agent: ureq::Agent,
}

impl HttpKeySource {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        Self {
            url: url.into(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }
}

impl KeySource for HttpKeySource {
    fn fetch(&self) -> Result<JwkSet> {
        let resp = self
            .agent
            .get(&self.url)
            .call()
            .map_err(|e| SecurityError::KeyFetch(e.to_string()))?;
        resp.into_json::<JwkSet>()
            .map_err(|e| SecurityError::KeyFetch(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub fetches: u64,
    pub unknown: u64,
}

/// TTL cache of verification keys. A miss or a stale entry triggers one
/// fetch of the whole set, which replaces the cached keys.
pub struct JwksCache {
    source: Arc<dyn KeySource>,
    ttl: Duration,
    clock: Arc<dyn Clock>,
    entries: RwLock<HashMap<String, (VerificationKey, Duration)>>,
    hits: AtomicU64,
    fetches: AtomicU64,
    unknown: AtomicU64,
}

impl std::fmt::Debug for JwksCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JwksCache")
            .field("ttl", &self.ttl)
            .field("stats", &self.stats())
            .finish_non_exhaustive()
    }
}

impl JwksCache {
    pub fn new(source: Arc<dyn KeySource>, ttl: Duration, clock: Arc<dyn Clock>) -> Self {
        Self {
            source,
            ttl,
            clock,
            entries: RwLock::new(HashMap::new()),
            hits: AtomicU64::new(0),
            fetches: AtomicU64::new(0),
            unknown: AtomicU64::new(0),
        }
    }

    pub fn lookup(&self, kid: &str) -> Result<VerificationKey, JwtError> {
        let now = self.clock.monotonic();
        if let Some((key, fetched)) = self.entries.read().get(kid) {
            if now.saturating_sub(*fetched) < self.ttl {
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Ok(key.clone());
            }
        }
        self.fetches.fetch_add(1, Ordering::Relaxed);
        let set = self
            .source
            .fetch()
            .map_err(|e| JwtError::KeyUnavailable(e.to_string()))?;
        let fetched = self.clock.monotonic();
        let mut fresh = HashMap::with_capacity(set.keys.len());
        for jwk in &set.keys {
            match jwk.to_key() {
                Ok(key) => {
                    fresh.insert(jwk.kid.clone(), (key, fetched));
                }
                Err(e) => tracing::warn!(kid = %jwk.kid, error = %e, "skipping unusable key"),
            }
        }
        let found = fresh.get(kid).map(|(k, _)| k.clone());
        *self.entries.write() = fresh;
        found.ok_or_else(|| {
            self.unknown.fetch_add(1, Ordering::Relaxed);
            JwtError::UnknownKeyId(kid.to_string())
        })
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            fetches: self.fetches.load(Ordering::Relaxed),
            unknown: self.unknown.load(Ordering::Relaxed),
        }
    }
}

impl KeyResolver for JwksCache {
    fn resolve(&self, kid: &str) -> Result<VerificationKey, JwtError> {
        self.lookup(kid)
    }
}

/// Resolver that fetches the key set on every call, used when the chain
/// runs JWT validation with the cache disabled.
pub struct UncachedKeys(pub Arc<dyn KeySource>);

impl KeyResolver for UncachedKeys {
    fn resolve(&self, kid: &str) -> Result<VerificationKey, JwtError> {
        let set = self.0.fetch().map_err(|e| JwtError::KeyUnavailable(e.to_string()))?;
        set.keys
            .iter()
            .find(|k| k.kid == kid)
            .ok_or_else(|| JwtError::UnknownKeyId(kid.to_string()))?
            .to_key()
            .map_err(|e| JwtError::KeyUnavailable(e.to_string()))
    }
}
