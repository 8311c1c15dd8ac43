//! Per-request middleware pipeline.
//!
//! Order is fixed: tls, rate_limit, jwt (with key lookup), rbac,
//! input_validation, then the handler, then audit. Each enabled component is
//! timed with a monotonic clock and reported separately.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use rustls::{ClientConfig, ServerConfig};

use crate::audit::{digest_hex, AuditEntry, AuditLog, RequestContext};
use crate::clock::Clock;
use crate::config::{Component, SecurityChainConfig};
use crate::error::{JwtError, Result, SecurityError};
use crate::jwks::{JwksCache, KeySource, UncachedKeys};
use crate::jwt::{JwtValidator, KeyResolver, TokenClaims, VerificationKey};
use crate::ratelimit::{BucketConfig, RateDecision, RateLimiter};
use crate::rbac::{Authorization, RolePolicy};
use crate::tls::{connect_in_memory, MemoryChannel};
use crate::validate::InputLimits;

/// Handshake-to-request ratio used when the chain simulates connection
/// reuse: one new connection per this many requests.
pub const REQUESTS_PER_CONNECTION: u64 = 20;

/// Connection-level TLS stage. Requests ride on a shared connection that is
/// replaced every `requests_per_connection` requests; replacements resume
/// the previous session.
pub struct TlsStage {
    server: Arc<ServerConfig>,
    client: Arc<ClientConfig>,
    requests_per_connection: u64,
    state: Mutex<(Option<MemoryChannel>, u64)>,
    handshakes: AtomicU64,
    resumed: AtomicU64,
}

impl TlsStage {
    pub fn new(server: Arc<ServerConfig>, client: Arc<ClientConfig>, requests_per_connection: u64) -> Self {
        Self {
            server,
            client,
            requests_per_connection: requests_per_connection.max(1),
            state: Mutex::new((None, 0)),
            handshakes: AtomicU64::new(0),
            resumed: AtomicU64::new(0),
        }
    }

    /// Carries `payload` across the connection and returns the client id
    /// the server authenticated.
    fn carry(&self, payload: &[u8]) -> Result<String> {
        let mut state = self.state.lock();
        let (chan, served) = &mut *state;
        if chan.is_none() || *served >= self.requests_per_connection {
            let fresh = connect_in_memory(&self.client, &self.server)?;
            self.handshakes.fetch_add(1, Ordering::Relaxed);
            if fresh.resumed() {
                self.resumed.fetch_add(1, Ordering::Relaxed);
            }
            *chan = Some(fresh);
            *served = 0;
        }
        let c = chan.as_mut().expect("connection established above");
        let echoed = c.transfer(payload)?;
        if echoed.len() != payload.len() {
            return Err(SecurityError::Tls("payload truncated in transit".into()));
        }
        *served += 1;
        c.client_id()
            .ok_or_else(|| SecurityError::Tls("peer presented no certificate".into()))
    }

    /// (handshakes, of which resumed)
    pub fn handshake_counts(&self) -> (u64, u64) {
        (
            self.handshakes.load(Ordering::Relaxed),
            self.resumed.load(Ordering::Relaxed),
        )
    }
}

impl std::fmt::Debug for TlsStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TlsStage")
            .field("requests_per_connection", &self.requests_per_connection)
            .field("handshakes", &self.handshake_counts())
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ChainRequest<'a> {
    /// Connection-level caller id; replaced by the certificate name when
    /// mutual TLS is on.
    pub client_id: &'a str,
    pub bearer: Option<&'a str>,
    pub endpoint: &'a str,
    /// Inference records; `None` for calls that carry no records (admin
    /// operations), which skip input validation.
    pub rows: Option<&'a [Vec<f64>]>,
    pub body: &'a [u8],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageTimings {
    pub stages: Vec<(Component, Duration)>,
}

impl StageTimings {
    fn add(&mut self, c: Component, d: Duration) {
        match self.stages.iter_mut().find(|(k, _)| *k == c) {
            Some((_, t)) => *t += d,
            None => self.stages.push((c, d)),
        }
    }

    pub fn get(&self, c: Component) -> Option<Duration> {
        self.stages.iter().find(|(k, _)| *k == c).map(|(_, d)| *d)
    }

    pub fn total(&self) -> Duration {
        self.stages.iter().map(|(_, d)| *d).sum()
    }

    pub fn total_ms(&self) -> f64 {
        self.total().as_secs_f64() * 1e3
    }
}

#[derive(Debug, Clone)]
pub struct Admitted {
    pub principal: String,
    pub claims: Option<TokenClaims>,
    pub timings: StageTimings,
}

#[derive(Debug, Clone)]
pub struct Rejection {
    pub stage: Component,
    pub reason: String,
    pub status: u16,
    pub retry_after: Option<Duration>,
    pub principal: String,
    pub timings: StageTimings,
}

#[derive(Debug, Clone)]
pub enum Admission {
    Admitted(Admitted),
    Rejected(Rejection),
}

impl Admission {
    pub fn timings(&self) -> &StageTimings {
        match self {
            Admission::Admitted(a) => &a.timings,
            Admission::Rejected(r) => &r.timings,
        }
    }

    pub fn is_admitted(&self) -> bool {
        matches!(self, Admission::Admitted(_))
    }
}

/// Key resolver wrapper that records time spent resolving, so key lookup
/// can be reported apart from signature checking.
struct TimedResolver<'a> {
    inner: &'a dyn KeyResolver,
    spent: Mutex<Duration>,
}

impl KeyResolver for TimedResolver<'_> {
    fn resolve(&self, kid: &str) -> Result<VerificationKey, JwtError> {
        let t = Instant::now();
        let r = self.inner.resolve(kid);
        *self.spent.lock() += t.elapsed();
        r
    }
}

pub struct SecurityChain {
    config: SecurityChainConfig,
    tls: Option<TlsStage>,
    rate_limiter: Option<RateLimiter>,
    service_limiter: RateLimiter,
    validator: Option<JwtValidator>,
    resolver: Option<Box<dyn KeyResolver>>,
    policy: RolePolicy,
    limits: Option<InputLimits>,
    audit: Option<AuditLog>,
    admitted: AtomicU64,
    rejected: Mutex<BTreeMap<Component, u64>>,
}

impl std::fmt::Debug for SecurityChain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SecurityChain")
            .field("config", &self.config)
            .field("admitted", &self.admitted_count())
            .finish_non_exhaustive()
    }
}

pub struct ChainBuilder {
    config: SecurityChainConfig,
    clock: Arc<dyn Clock>,
    tls: Option<TlsStage>,
    bucket: BucketConfig,
    service_bucket: BucketConfig,
    jwt: Option<(JwtValidator, Arc<dyn KeySource>, Duration)>,
    policy: RolePolicy,
    limits: Option<InputLimits>,
    audit: Option<AuditLog>,
}

impl ChainBuilder {
    pub fn new(config: SecurityChainConfig, clock: Arc<dyn Clock>) -> Self {
        Self {
            config,
            clock,
            tls: None,
            bucket: BucketConfig::default(),
            service_bucket: BucketConfig::default(),
            jwt: None,
            policy: RolePolicy::default(),
            limits: None,
            audit: None,
        }
    }

    pub fn tls(mut self, stage: TlsStage) -> Self {
        self.tls = Some(stage);
        self
    }

    pub fn rate_limits(mut self, bucket: BucketConfig) -> Self {
        self.bucket = bucket;
        self
    }

    /// Bucket used for roles whose grant is marked rate limited.
    pub fn service_rate_limits(mut self, bucket: BucketConfig) -> Self {
        self.service_bucket = bucket;
        self
    }

    pub fn jwt(mut self, validator: JwtValidator, source: Arc<dyn KeySource>, cache_ttl: Duration) -> Self {
        self.jwt = Some((validator, source, cache_ttl));
        self
    }

    pub fn policy(mut self, policy: RolePolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn input_limits(mut self, limits: InputLimits) -> Self {
        self.limits = Some(limits);
        self
    }

    pub fn audit(mut self, log: AuditLog) -> Self {
        self.audit = Some(log);
        self
    }

    /// Fails when an enabled component lacks what it needs.
    pub fn build(self) -> Result<SecurityChain> {
        let cfg = &self.config;
        let missing = |c: Component| SecurityError::Config(format!("{c} is enabled but not configured"));
        if cfg.has(Component::Mtls) && self.tls.is_none() {
            return Err(missing(Component::Mtls));
        }
        if cfg.has(Component::Jwt) && self.jwt.is_none() {
            return Err(missing(Component::Jwt));
        }
        if cfg.has(Component::InputValidation) && self.limits.is_none() {
            return Err(missing(Component::InputValidation));
        }
        if cfg.has(Component::Audit) && self.audit.is_none() {
            return Err(missing(Component::Audit));
        }
        let (validator, resolver) = match self.jwt {
            Some((v, source, ttl)) if cfg.has(Component::Jwt) => {
                let r: Box<dyn KeyResolver> = if cfg.has(Component::JwksCache) {
                    Box::new(JwksCache::new(source, ttl, self.clock.clone()))
                } else {
                    Box::new(UncachedKeys(source))
                };
                (Some(v), Some(r))
            }
            _ => (None, None),
        };
        Ok(SecurityChain {
            tls: self.tls.filter(|_| cfg.has(Component::Mtls)),
            rate_limiter: cfg
                .has(Component::RateLimit)
                .then(|| RateLimiter::new(self.bucket, self.clock.clone())),
            service_limiter: RateLimiter::new(self.service_bucket, self.clock.clone()),
            validator,
            resolver,
            policy: self.policy,
            limits: self.limits.filter(|_| cfg.has(Component::InputValidation)),
            audit: self.audit.filter(|_| cfg.has(Component::Audit)),
            config: self.config,
            admitted: AtomicU64::new(0),
            rejected: Mutex::new(BTreeMap::new()),
        })
    }
}

impl SecurityChain {
    pub fn config(&self) -> &SecurityChainConfig {
        &self.config
    }

    pub fn audit_log(&self) -> Option<&AuditLog> {
        self.audit.as_ref()
    }

    pub fn validator(&self) -> Option<&JwtValidator> {
        self.validator.as_ref()
    }

    pub fn tls_stage(&self) -> Option<&TlsStage> {
        self.tls.as_ref()
    }

    /// Runs every enabled pre-handler component in order.
    pub fn admit(&self, req: &ChainRequest<'_>) -> Admission {
        let mut timings = StageTimings::default();
        let mut principal = req.client_id.to_string();

        macro_rules! reject {
            ($stage:expr, $status:expr, $reason:expr, $retry:expr) => {{
                *self.rejected.lock().entry($stage).or_insert(0) += 1;
                return Admission::Rejected(Rejection {
                    stage: $stage,
                    reason: $reason,
                    status: $status,
                    retry_after: $retry,
                    principal,
                    timings,
                });
            }};
        }

        if let Some(tls) = &self.tls {
            let t = Instant::now();
            let r = tls.carry(req.body);
            timings.add(Component::Mtls, t.elapsed());
            match r {
                Ok(id) => principal = id,
                Err(e) => reject!(Component::Mtls, 403, e.to_string(), None),
            }
        }

        if let Some(rl) = &self.rate_limiter {
            let t = Instant::now();
            let d = rl.check(&principal);
            timings.add(Component::RateLimit, t.elapsed());
            if let RateDecision::Throttle { retry_after } = d {
                reject!(Component::RateLimit, 429, "rate limit exceeded".into(), Some(retry_after));
            }
        }

        let mut claims = None;
        if let (Some(v), Some(resolver)) = (&self.validator, &self.resolver) {
            let t = Instant::now();
            let timed = TimedResolver {
                inner: resolver.as_ref(),
                spent: Mutex::new(Duration::ZERO),
            };
            let r = match req.bearer {
                Some(token) => v.validate(token, &timed),
                None => Err(JwtError::Malformed("missing bearer token".into())),
            };
            let total = t.elapsed();
            let lookup = *timed.spent.lock();
            if self.config.has(Component::JwksCache) {
                timings.add(Component::Jwt, total.saturating_sub(lookup));
                timings.add(Component::JwksCache, lookup);
            } else {
                timings.add(Component::Jwt, total);
            }
            match r {
                Ok(c) => claims = Some(c),
                Err(e) => reject!(Component::Jwt, 401, format!("{}: {e}", e.reason()), None),
            }
        }

        if self.config.has(Component::Rbac) {
            let t = Instant::now();
            let c = claims.as_ref().expect("rbac requires jwt, enforced by config");
            let auth = self.policy.authorize(&c.role, req.endpoint);
            let throttle = match auth {
                Authorization::Allow { rate_limited: true } => match self.service_limiter.check(&c.subject) {
                    RateDecision::Throttle { retry_after } => Some(retry_after),
                    RateDecision::Allow { .. } => None,
                },
                _ => None,
            };
            timings.add(Component::Rbac, t.elapsed());
            if let Authorization::Deny(reason) = auth {
                reject!(Component::Rbac, 403, reason, None);
            }
            if let Some(retry) = throttle {
                reject!(Component::RateLimit, 429, "service rate limit exceeded".into(), Some(retry));
            }
        }

        if let (Some(limits), Some(rows)) = (&self.limits, req.rows) {
            let t = Instant::now();
            let r = limits.check(rows, req.body.len());
            timings.add(Component::InputValidation, t.elapsed());
            if let Err(e) = r {
                let status = if matches!(e, crate::validate::ValidationError::TooLarge { .. }) {
                    413
                } else {
                    400
                };
                reject!(Component::InputValidation, status, e.to_string(), None);
            }
        }

        if let Some(c) = &claims {
            principal = c.subject.clone();
        }
        self.admitted.fetch_add(1, Ordering::Relaxed);
        Admission::Admitted(Admitted {
            principal,
            claims,
            timings,
        })
    }

    /// Enqueues the audit record for a finished request and adds the audit
    /// time to `timings`. A full buffer drops the record without failing
    /// the request.
    pub fn record_outcome(
        &self,
        req: &ChainRequest<'_>,
        principal: &str,
        outcome: &str,
        model_version: &str,
        attributes: BTreeMap<String, serde_json::Value>,
        timings: &mut StageTimings,
    ) {
        let Some(log) = &self.audit else { return };
        let t = Instant::now();
        log.append(AuditEntry {
            context: RequestContext {
                subject: principal.to_string(),
                endpoint: req.endpoint.to_string(),
                input_digest: digest_hex(req.body),
                attributes,
            },
            model_version: model_version.to_string(),
            outcome: outcome.to_string(),
        });
        timings.add(Component::Audit, t.elapsed());
    }

    /// Admits, runs `handler` only for admitted requests, then audits.
    /// The outer error is a security rejection; the inner one is the
    /// handler's own failure.
    #[allow(clippy::type_complexity)]
    pub fn process<T>(
        &self,
        req: &ChainRequest<'_>,
        model_version: &str,
        handler: impl FnOnce(&Admitted) -> std::result::Result<T, String>,
    ) -> (std::result::Result<std::result::Result<T, String>, Rejection>, StageTimings) {
        match self.admit(req) {
            Admission::Admitted(a) => {
                let result = handler(&a);
                let outcome = match &result {
                    Ok(_) => "ok".to_string(),
                    Err(e) => format!("error: {e}"),
                };
                let mut timings = a.timings;
                self.record_outcome(req, &a.principal, &outcome, model_version, BTreeMap::new(), &mut timings);
                (Ok(result), timings)
            }
            Admission::Rejected(mut r) => {
                let outcome = format!("rejected by {}: {}", r.stage, r.reason);
                let principal = r.principal.clone();
                self.record_outcome(req, &principal, &outcome, model_version, BTreeMap::new(), &mut r.timings);
                let timings = r.timings.clone();
                (Err(r), timings)
            }
        }
    }

    pub fn admitted_count(&self) -> u64 {
        self.admitted.load(Ordering::Relaxed)
    }

    pub fn rejected_counts(&self) -> BTreeMap<Component, u64> {
        self.rejected.lock().clone()
    }
}
