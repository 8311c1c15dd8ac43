use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use bdaas_security::jwt::encode;
use bdaas_security::{
    Authorization, BucketConfig, Claims, HttpKeySource, Jwk, JwkSet, JwksCache, JwtError, JwtValidator, KeySource,
    ManualClock, RateLimiter, RolePolicy, SigningKey, StaticKeySource, StaticKeys,
};
use rsa::RsaPrivateKey;

fn claims(exp: u64) -> Claims {
    Claims {
        sub: "analyst-7".into(),
        role: "hr_analyst".into(),
        exp,
        iss: "auth".into(),
    }
}

fn hmac_key() -> SigningKey {
    SigningKey::Hmac(b"a-thirty-two-byte-long-secret-xx".to_vec())
}

fn rsa_key() -> SigningKey {
    let mut rng = rand::thread_rng();
    SigningKey::Rsa(Box::new(RsaPrivateKey::new(&mut rng, 2048).unwrap()))
}

fn flip_payload_byte(token: &str) -> String {
    let parts: Vec<&str> = token.split('.').collect();
    let mut payload = URL_SAFE_NO_PAD.decode(parts[1]).unwrap();
    payload[5] ^= 0x01;
    format!("{}.{}.{}", parts[0], URL_SAFE_NO_PAD.encode(payload), parts[2])
}

#[test]
fn jwt_examples_for_both_algorithms() {
    for key in [hmac_key(), rsa_key()] {
        let clock = Arc::new(ManualClock::new(10_000));
        let v = JwtValidator::new("auth", clock.clone());
        let mut keys = StaticKeys::new();
        keys.insert("k", key.verification_key());

        let token = encode(&claims(10_600), "k", &key);
        let c = v.validate(&token, &keys).unwrap();
        assert_eq!((c.subject.as_str(), c.role.as_str(), c.key_id.as_str()), ("analyst-7", "hr_analyst", "k"));

        assert_eq!(v.validate(&flip_payload_byte(&token), &keys), Err(JwtError::BadSignature));

        let expired = encode(&claims(9_999), "k", &key);
        assert!(matches!(v.validate(&expired, &keys), Err(JwtError::Expired { .. })));

        // a correctly signed token becomes expired as time passes
        clock.advance(Duration::from_secs(600));
        assert!(matches!(v.validate(&token, &keys), Err(JwtError::Expired { .. })));

        let counts = v.counters();
        assert_eq!(counts.get("accepted"), Some(&1));
        assert_eq!(counts.get("bad_signature"), Some(&1));
        assert_eq!(counts.get("expired"), Some(&2));
    }
}

#[test]
fn forged_signature_from_other_key_is_rejected() {
    let clock = Arc::new(ManualClock::new(0));
    let v = JwtValidator::new("auth", clock);
    let mut keys = StaticKeys::new();
    keys.insert("k", hmac_key().verification_key());
    let forged = encode(&claims(100), "k", &SigningKey::Hmac(b"attacker".to_vec()));
    assert_eq!(v.validate(&forged, &keys), Err(JwtError::BadSignature));
    // algorithm confusion: an RS256 header against an HMAC key
    let rs = encode(&claims(100), "k", &rsa_key());
    assert!(matches!(v.validate(&rs, &keys), Err(JwtError::UnsupportedAlgorithm(_))));
}

fn jwk_set() -> JwkSet {
    JwkSet {
        keys: vec![Jwk::from_key("k", &hmac_key().verification_key())],
    }
}

#[test]
fn jwks_two_lookups_one_fetch() {
    let clock = Arc::new(ManualClock::new(0));
    let source = Arc::new(StaticKeySource::new(jwk_set(), Duration::ZERO));
    let cache = JwksCache::new(source.clone(), Duration::from_secs(300), clock);
    cache.lookup("k").unwrap();
    cache.lookup("k").unwrap();
    assert_eq!(source.fetches(), 1);
    assert_eq!(cache.stats().hits, 1);
}

#[test]
fn jwks_zero_ttl_always_fetches() {
    let clock = Arc::new(ManualClock::new(0));
    let source = Arc::new(StaticKeySource::new(jwk_set(), Duration::ZERO));
    let cache = JwksCache::new(source.clone(), Duration::ZERO, clock);
    for _ in 0..4 {
        cache.lookup("k").unwrap();
    }
    assert_eq!(source.fetches(), 4);
}

#[test]
fn jwks_unknown_kid_after_fetch() {
    let clock = Arc::new(ManualClock::new(0));
    let source = Arc::new(StaticKeySource::new(jwk_set(), Duration::ZERO));
    let cache = JwksCache::new(source.clone(), Duration::from_secs(300), clock);
    assert_eq!(cache.lookup("missing"), Err(JwtError::UnknownKeyId("missing".into())));
    assert_eq!(source.fetches(), 1);
}

#[test]
fn new_key_id_triggers_refetch() {
    let clock = ManualClock::new(0);
    let source = Arc::new(StaticKeySource::new(jwk_set(), Duration::ZERO));
    let cache = JwksCache::new(source.clone(), Duration::from_secs(60), Arc::new(clock.clone()));
    cache.lookup("k").unwrap();
    let new = SigningKey::Hmac(b"rotated".to_vec());
    source.replace(JwkSet {
        keys: vec![Jwk::from_key("k2", &new.verification_key())],
    });
    // a new kid misses the cache and triggers a fetch right away
    assert_eq!(cache.lookup("k2").unwrap(), new.verification_key());
    assert_eq!(source.fetches(), 2);
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    v[v.len() / 2]
}

#[test]
fn cache_hit_is_faster_than_fetch() {
    let clock = Arc::new(bdaas_security::SystemClock::default());
    let source = Arc::new(StaticKeySource::new(jwk_set(), Duration::ZERO));
    let fetching = JwksCache::new(source.clone(), Duration::ZERO, clock.clone());
    let caching = JwksCache::new(source, Duration::from_secs(300), clock);
    caching.lookup("k").unwrap();
    let time = |c: &JwksCache| {
        let t = Instant::now();
        c.lookup("k").unwrap();
        t.elapsed()
    };
    let fetch: Vec<_> = (0..200).map(|_| time(&fetching)).collect();
    let hit: Vec<_> = (0..200).map(|_| time(&caching)).collect();
    let (hit, fetch) = (median(hit), median(fetch));
    assert!(hit < fetch, "hit {hit:?} fetch {fetch:?}");
}

#[test]
fn key_set_over_http() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let body = jwk_set().to_json();
    let server = std::thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        let mut buf = [0u8; 2048];
        let _ = s.read(&mut buf).unwrap();
        write!(
            s,
            "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
            body.len(),
            body
        )
        .unwrap();
    });
    let src = HttpKeySource::new(format!("http://{addr}/.well-known/jwks.json"), Duration::from_secs(5));
    assert_eq!(src.fetch().unwrap(), jwk_set());
    server.join().unwrap();

    let unreachable = HttpKeySource::new(format!("http://{addr}/gone"), Duration::from_millis(300));
    assert!(unreachable.fetch().is_err());
}

#[test]
fn rbac_policy_table() {
    let p = RolePolicy::default();
    assert_eq!(p.authorize("hr_analyst", "/infer"), Authorization::Allow { rate_limited: false });
    assert!(!p.authorize("hr_analyst", "/admin/model-reload").is_allowed());
    assert!(p.authorize("system_admin", "/infer").is_allowed());
    assert!(p.authorize("system_admin", "/admin/model-reload").is_allowed());
    assert_eq!(
        p.authorize("automated_service", "/infer"),
        Authorization::Allow { rate_limited: true }
    );
    assert!(!p.authorize("automated_service", "/admin/model-reload").is_allowed());
    assert!(!p.authorize("intern", "/infer").is_allowed());
    assert!(!p.authorize("hr_analyst", "/metrics-secret").is_allowed());
}

#[test]
fn token_bucket_examples() {
    let clock = ManualClock::new(0);
    let rl = RateLimiter::new(
        BucketConfig {
            capacity: 5.0,
            refill_per_second: 1.0,
        },
        Arc::new(clock.clone()),
    );
    let decisions: Vec<bool> = (0..6).map(|_| rl.check("p").is_allowed()).collect();
    assert_eq!(decisions, vec![true, true, true, true, true, false]);
    match rl.check("p") {
        bdaas_security::RateDecision::Throttle { retry_after } => assert_eq!(retry_after, Duration::from_secs(1)),
        other => panic!("expected throttle, got {other:?}"),
    }
    // distinct principals do not share buckets
    assert!(rl.check("q").is_allowed());

    let rl = RateLimiter::new(
        BucketConfig {
            capacity: 10.0,
            refill_per_second: 10.0,
        },
        Arc::new(clock.clone()),
    );
    while rl.check("p").is_allowed() {}
    clock.advance(Duration::from_secs(1));
    let allowed = (0..20).take_while(|_| rl.check("p").is_allowed()).count();
    assert_eq!(allowed, 10);
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn tokens_stay_within_capacity(steps in proptest::collection::vec((0u64..3000, 0u8..4), 1..60)) {
            let clock = ManualClock::new(0);
            let cfg = BucketConfig { capacity: 7.0, refill_per_second: 3.0 };
            let rl = RateLimiter::new(cfg, Arc::new(clock.clone()));
            for (ms, n) in steps {
                clock.advance(Duration::from_millis(ms));
                for _ in 0..n {
                    rl.check("p");
                }
                let a = rl.available("p");
                prop_assert!((0.0..=cfg.capacity).contains(&a), "{a}");
            }
        }
    }
}
