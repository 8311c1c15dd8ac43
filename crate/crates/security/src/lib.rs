//! Defense-in-depth middleware for the inference service. Every component
//! can be switched on or off and is timed on its own.

pub mod audit;
pub mod chain;
pub mod clock;
pub mod config;
mod error;
pub mod fixture;
pub mod jwks;
pub mod jwt;
pub mod ratelimit;
pub mod rbac;
pub mod redact;
pub mod tls;
pub mod validate;

pub use audit::{verify_audit_chain, AuditChain, AuditEntry, AuditLog, AuditRecord, RequestContext, Verification};
pub use chain::{Admission, Admitted, ChainBuilder, ChainRequest, Rejection, SecurityChain, StageTimings, TlsStage};
pub use clock::{Clock, ManualClock, SystemClock};
pub use config::{Component, SecurityChainConfig};
pub use error::{JwtError, Result, SecurityError};
pub use fixture::SecurityFixture;
pub use jwks::{HttpKeySource, Jwk, JwkSet, JwksCache, KeySource, StaticKeySource};
pub use jwt::{Claims, JwtValidator, KeyResolver, Role, SigningKey, StaticKeys, TokenClaims, VerificationKey};
pub use ratelimit::{BucketConfig, RateDecision, RateLimiter};
pub use rbac::{Authorization, Grant, RolePolicy};
pub use redact::{Policy, RedactionRule, Redactor, ValueClass};
pub use validate::{InputLimits, ValidationError};
