//! Self-contained credentials for running a chain locally: a test CA with
//! server and client identities, a signing key published through an
//! in-process key set, and token minting.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use rand::RngCore;
use rustls::{ClientConfig, ServerConfig};

use crate::audit::{AuditLog, DEFAULT_BUFFER};
use crate::chain::{ChainBuilder, SecurityChain, TlsStage, REQUESTS_PER_CONNECTION};
use crate::clock::Clock;
use crate::config::SecurityChainConfig;
use crate::error::Result;
use crate::jwks::{Jwk, JwkSet, StaticKeySource};
use crate::jwt::{encode, Claims, JwtValidator, Role, SigningKey};
use crate::redact::Redactor;
use crate::tls::{client_config, mutual_server_config, RotatingCertResolver, TestCa};
use crate::validate::InputLimits;

pub const ISSUER: &str = "bdaas-auth";
pub const KEY_ID: &str = "hs-1";
pub const CLIENT_ID: &str = "gateway-client";

pub struct SecurityFixture {
    pub ca: TestCa,
    pub resolver: Arc<RotatingCertResolver>,
    pub server_config: Arc<ServerConfig>,
    pub client_config: Arc<ClientConfig>,
    pub signing_key: SigningKey,
    pub key_source: Arc<StaticKeySource>,
    pub clock: Arc<dyn Clock>,
}

impl SecurityFixture {
    /// `fetch_latency` simulates the network round trip of a key-set fetch.
    pub fn generate(clock: Arc<dyn Clock>, fetch_latency: Duration) -> Result<Self> {
        let ca = TestCa::generate("bdaas test ca")?;
        let roots = ca.roots()?;
        let resolver = Arc::new(RotatingCertResolver::new(&ca.server_identity()?)?);
        let server_config = mutual_server_config(roots.clone(), resolver.clone())?;
        let client_config = client_config(roots, Some(&ca.client_identity(CLIENT_ID)?))?;
        let mut secret = vec![0u8; 32];
        rand::thread_rng().fill_bytes(&mut secret);
        let signing_key = SigningKey::Hmac(secret);
        let set = JwkSet {
            keys: vec![Jwk::from_key(KEY_ID, &signing_key.verification_key())],
        };
        Ok(Self {
            ca,
            resolver,
            server_config,
            client_config,
            signing_key,
            key_source: Arc::new(StaticKeySource::new(set, fetch_latency)),
            clock,
        })
    }

    pub fn token(&self, role: Role, subject: &str, ttl_s: u64) -> String {
        self.token_with_role(role.as_str(), subject, ttl_s)
    }

    pub fn token_with_role(&self, role: &str, subject: &str, ttl_s: u64) -> String {
        let claims = Claims {
            sub: subject.into(),
            role: role.into(),
            exp: self.clock.unix_seconds() + ttl_s,
            iss: ISSUER.into(),
        };
        encode(&claims, KEY_ID, &self.signing_key)
    }

    /// Builds a chain for `config`. `audit_path` is required when audit is
    /// enabled.
    pub fn chain(
        &self,
        config: SecurityChainConfig,
        feature_width: usize,
        audit_path: Option<&Path>,
    ) -> Result<SecurityChain> {
        let mut b = ChainBuilder::new(config, self.clock.clone())
            .tls(TlsStage::new(
                self.server_config.clone(),
                self.client_config.clone(),
                REQUESTS_PER_CONNECTION,
            ))
            .jwt(
                JwtValidator::new(ISSUER, self.clock.clone()),
                self.key_source.clone(),
                Duration::from_secs(300),
            )
            .input_limits(InputLimits::for_width(feature_width));
        if let Some(p) = audit_path {
            b = b.audit(AuditLog::open(p, Redactor::standard(), DEFAULT_BUFFER, self.clock.clone())?);
        }
        b.build()
    }
}
