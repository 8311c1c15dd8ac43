//! Compact JWT signing and validation for HS256 and RS256.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use hmac::{Hmac, Mac};
use parking_lot::Mutex;
use rsa::pkcs1v15::{Signature, SigningKey as RsaSigner, VerifyingKey as RsaVerifier};
use rsa::signature::{SignatureEncoding, Signer, Verifier};
use rsa::{RsaPrivateKey, RsaPublicKey};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::clock::Clock;
use crate::error::JwtError;

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    HrAnalyst,
    SystemAdmin,
    AutomatedService,
}

impl Role {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hr_analyst" => Some(Role::HrAnalyst),
            "system_admin" => Some(Role::SystemAdmin),
            "automated_service" => Some(Role::AutomatedService),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::HrAnalyst => "hr_analyst",
            Role::SystemAdmin => "system_admin",
            Role::AutomatedService => "automated_service",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Payload claims as carried on the wire. The role stays a string so an
/// unrecognised role reaches authorization and is denied there.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claims {
    pub sub: String,
    pub role: String,
    pub exp: u64,
    pub iss: String,
}

/// Claims after successful validation, with the key id that verified them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenClaims {
    pub subject: String,
    pub role: String,
    pub expiry: u64,
    pub issuer: String,
    pub key_id: String,
}

impl TokenClaims {
    pub fn role(&self) -> Option<Role> {
        Role::parse(&self.role)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    alg: String,
    #[serde(default)]
    typ: Option<String>,
    #[serde(default)]
    kid: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Hs256,
    Rs256,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Hs256 => "HS256",
            Algorithm::Rs256 => "RS256",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "HS256" => Some(Algorithm::Hs256),
            "RS256" => Some(Algorithm::Rs256),
            _ => None,
        }
    }
}

/// Key material able to check a signature.
#[derive(Clone, PartialEq, Eq)]
pub enum VerificationKey {
    Hmac(Vec<u8>),
    Rsa(RsaPublicKey),
}

impl VerificationKey {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            VerificationKey::Hmac(_) => Algorithm::Hs256,
            VerificationKey::Rsa(_) => Algorithm::Rs256,
        }
    }

    fn verify(&self, message: &[u8], signature: &[u8]) -> bool {
        match self {
            VerificationKey::Hmac(secret) => {
                let Ok(mut mac) = HmacSha256::new_from_slice(secret) else {
                    return false;
                };
                mac.update(message);
                mac.verify_slice(signature).is_ok()
            }
            VerificationKey::Rsa(public) => {
                let Ok(sig) = Signature::try_from(signature) else {
                    return false;
                };
                RsaVerifier::<Sha256>::new(public.clone()).verify(message, &sig).is_ok()
            }
        }
    }
}

impl fmt::Debug for VerificationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VerificationKey::Hmac(_) => f.write_str("VerificationKey::Hmac(..)"),
            VerificationKey::Rsa(_) => f.write_str("VerificationKey::Rsa(..)"),
        }
    }
}

/// Key material able to produce a signature.
#[derive(Clone)]
pub enum SigningKey {
    Hmac(Vec<u8>),
    Rsa(Box<RsaPrivateKey>),
}

impl SigningKey {
    pub fn verification_key(&self) -> VerificationKey {
        match self {
            SigningKey::Hmac(secret) => VerificationKey::Hmac(secret.clone()),
            SigningKey::Rsa(private) => VerificationKey::Rsa(private.to_public_key()),
        }
    }

    fn sign(&self, message: &[u8]) -> Vec<u8> {
        match self {
            SigningKey::Hmac(secret) => {
                let mut mac = HmacSha256::new_from_slice(secret).expect("hmac accepts any key length");
                mac.update(message);
                mac.finalize().into_bytes().to_vec()
            }
            SigningKey::Rsa(private) => RsaSigner::<Sha256>::new((**private).clone()).sign(message).to_vec(),
        }
    }
}

impl fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SigningKey::Hmac(_) => f.write_str("SigningKey::Hmac(..)"),
            SigningKey::Rsa(_) => f.write_str("SigningKey::Rsa(..)"),
        }
    }
}

/// Produces a compact token `header.payload.signature`.
pub fn encode(claims: &Claims, kid: &str, key: &SigningKey) -> String {
    let header = Header {
        alg: key.verification_key().algorithm().name().to_string(),
        typ: Some("JWT".into()),
        kid: Some(kid.to_string()),
    };
    let h = URL_SAFE_NO_PAD.encode(serde_json::to_vec(&header).expect("header serializes"));
    let p = URL_SAFE_NO_PAD.encode(serde_json::to_vec(claims).expect("claims serialize"));
    let signing_input = format!("{h}.{p}");
    let sig = URL_SAFE_NO_PAD.encode(key.sign(signing_input.as_bytes()));
    format!("{signing_input}.{sig}")
}

/// Resolves a key id to verification key material.
pub trait KeyResolver: Send + Sync {
    fn resolve(&self, kid: &str) -> Result<VerificationKey, JwtError>;
}

/// Fixed key table, useful when no key-set endpoint is involved.
#[derive(Debug, Default, Clone)]
pub struct StaticKeys {
    keys: BTreeMap<String, VerificationKey>,
}

impl StaticKeys {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, kid: impl Into<String>, key: VerificationKey) {
        self.keys.insert(kid.into(), key);
    }
}

impl KeyResolver for StaticKeys {
    fn resolve(&self, kid: &str) -> Result<VerificationKey, JwtError> {
        self.keys
            .get(kid)
            .cloned()
            .ok_or_else(|| JwtError::UnknownKeyId(kid.to_string()))
    }
}

/// Validates tokens and counts outcomes per rejection reason.
#[derive(Debug)]
pub struct JwtValidator {
    issuer: String,
    clock: Arc<dyn Clock>,
    counters: Mutex<BTreeMap<&'static str, u64>>,
}

impl JwtValidator {
    pub fn new(issuer: impl Into<String>, clock: Arc<dyn Clock>) -> Self {
        Self {
            issuer: issuer.into(),
            clock,
            counters: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn issuer(&self) -> &str {
        &self.issuer
    }

    /// Checks run in a fixed order: structure, algorithm and key id, key
    /// lookup, signature, then expiry and issuer. An expired but correctly
    /// signed token is therefore reported as expired.
    pub fn validate(&self, token: &str, keys: &dyn KeyResolver) -> Result<TokenClaims, JwtError> {
        let outcome = self.check(token, keys);
        let label = match &outcome {
            Ok(_) => "accepted",
            Err(e) => e.reason(),
        };
        *self.counters.lock().entry(label).or_insert(0) += 1;
        outcome
    }

    fn check(&self, token: &str, keys: &dyn KeyResolver) -> Result<TokenClaims, JwtError> {
        let mut parts = token.split('.');
        let (Some(h), Some(p), Some(s), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(JwtError::Malformed("expected three dot-separated parts".into()));
        };
        let header_bytes = decode_part(h, "header")?;
        let header: Header =
            serde_json::from_slice(&header_bytes).map_err(|e| JwtError::Malformed(format!("header: {e}")))?;
        let alg = Algorithm::parse(&header.alg).ok_or_else(|| JwtError::UnsupportedAlgorithm(header.alg.clone()))?;
        let kid = header
            .kid
            .ok_or_else(|| JwtError::Malformed("header has no kid".into()))?;
        let signature = decode_part(s, "signature")?;

        let key = keys.resolve(&kid)?;
        if key.algorithm() != alg {
            return Err(JwtError::UnsupportedAlgorithm(format!(
                "{} with a {} key",
                alg.name(),
                key.algorithm().name()
            )));
        }
        let signing_input = &token[..h.len() + 1 + p.len()];
        if !key.verify(signing_input.as_bytes(), &signature) {
            return Err(JwtError::BadSignature);
        }

        let payload = decode_part(p, "payload")?;
        let claims: Claims =
            serde_json::from_slice(&payload).map_err(|e| JwtError::Malformed(format!("payload: {e}")))?;
        let now = self.clock.unix_seconds();
        if now >= claims.exp {
            return Err(JwtError::Expired {
                expired_at: claims.exp,
                now,
            });
        }
        if claims.iss != self.issuer {
            return Err(JwtError::WrongIssuer {
                expected: self.issuer.clone(),
                found: claims.iss,
            });
        }
        Ok(TokenClaims {
            subject: claims.sub,
            role: claims.role,
            expiry: claims.exp,
            issuer: claims.iss,
            key_id: kid,
        })
    }

    /// Outcome counts keyed by "accepted" or a rejection reason.
    pub fn counters(&self) -> BTreeMap<&'static str, u64> {
        self.counters.lock().clone()
    }

    pub fn count(&self, label: &str) -> u64 {
        self.counters.lock().get(label).copied().unwrap_or(0)
    }
}

fn decode_part(part: &str, what: &str) -> Result<Vec<u8>, JwtError> {
    URL_SAFE_NO_PAD
        .decode(part)
        .map_err(|e| JwtError::Malformed(format!("{what}: {e}")))
}
