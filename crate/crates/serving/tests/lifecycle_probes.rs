mod common;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use bdaas_serving::{InferenceRequest, Lifecycle, LifecycleConfig, LifecycleState, ModelLoader, Predictor, ServeError};
use common::*;

fn lifecycle(load_ms: u64, idle_ms: Option<u64>) -> Lifecycle {
    Lifecycle::new(
        LifecycleConfig {
            load_delay: Duration::from_millis(load_ms),
            idle_timeout: idle_ms.map(Duration::from_millis),
            wedge_after: Duration::from_secs(60),
        },
        loader_for(Arc::new(model())),
    )
}

#[test]
fn first_request_pays_load_delay_second_does_not() {
    let lc = lifecycle(200, None);
    assert_eq!(lc.state(), LifecycleState::Unloaded);
    let first = lc.acquire().unwrap();
    assert!(first.cold);
    assert!(first.waited >= Duration::from_millis(200));
    drop(first);
    let second = lc.acquire().unwrap();
    assert!(!second.cold);
    assert!(second.waited < Duration::from_millis(50));
    assert_eq!(lc.loads(), 1);
}

#[test]
fn idle_expiry_scales_to_zero_and_next_request_is_cold_again() {
    let lc = lifecycle(50, Some(100));
    drop(lc.acquire().unwrap());
    assert_eq!(lc.state(), LifecycleState::Warm);
    std::thread::sleep(Duration::from_millis(150));
    assert_eq!(lc.state(), LifecycleState::Unloaded);
    let again = lc.acquire().unwrap();
    assert!(again.cold);
    assert!(again.waited >= Duration::from_millis(50));
    assert_eq!(lc.loads(), 2);
}

#[test]
fn keep_warm_ping_inside_idle_window_prevents_unload() {
    let lc = lifecycle(10, Some(200));
    assert!(lc.ping().unwrap());
    for _ in 0..6 {
        std::thread::sleep(Duration::from_millis(80));
        assert!(!lc.ping().unwrap());
        assert_eq!(lc.state(), LifecycleState::Warm);
    }
    assert_eq!(lc.loads(), 1);
}

#[test]
fn service_keep_warm_thread_keeps_function_resident() {
    let fx = fixture();
    let mut cfg = fast_config(8);
    cfg.lifecycle.load_delay = Duration::from_millis(100);
    cfg.lifecycle.idle_timeout = Some(Duration::from_millis(150));
    cfg.keep_warm_interval = Some(Duration::from_millis(40));
    let svc = start(cfg, Arc::new(model()), chain(&fx, "baseline", None));
    svc.warm_up().unwrap();
    std::thread::sleep(Duration::from_millis(500));
    let r = svc.infer(InferenceRequest::new("a", row(0))).unwrap();
    assert_eq!(r.latency_ms.cold_start, 0.0);
    assert_eq!(svc.lifecycle().loads(), 1);
}

#[test]
fn service_without_keep_warm_scales_to_zero() {
    let fx = fixture();
    let mut cfg = fast_config(8);
    cfg.lifecycle.load_delay = Duration::from_millis(100);
    cfg.lifecycle.idle_timeout = Some(Duration::from_millis(80));
    let svc = start(cfg, Arc::new(model()), chain(&fx, "baseline", None));
    let first = svc.infer(InferenceRequest::new("a", row(0))).unwrap();
    assert!(first.latency_ms.cold_start >= 100.0);
    let warm = svc.infer(InferenceRequest::new("b", row(0))).unwrap();
    assert_eq!(warm.latency_ms.cold_start, 0.0);
    std::thread::sleep(Duration::from_millis(200));
    assert_eq!(svc.lifecycle().state(), LifecycleState::Unloaded);
    let cold = svc.infer(InferenceRequest::new("c", row(0))).unwrap();
    assert!(cold.latency_ms.cold_start >= 100.0);
}

#[test]
fn probes_report_live_not_ready_while_loading() {
    let lc = Arc::new(lifecycle(300, None));
    let p = lc.probe();
    assert!(p.live && !p.ready);
    let bg = {
        let lc = lc.clone();
        std::thread::spawn(move || lc.ping().unwrap())
    };
    std::thread::sleep(Duration::from_millis(100));
    let p = lc.probe();
    assert_eq!(p.state, LifecycleState::Loading);
    assert_eq!((p.live, p.ready), (true, false));
    assert!(bg.join().unwrap());
    let p = lc.probe();
    assert_eq!((p.live, p.ready), (true, true));
    assert!(p.cause.is_none());
}

#[test]
fn load_failure_keeps_readiness_false_with_cause() {
    let attempts = Arc::new(AtomicU64::new(0));
    let loader: ModelLoader = {
        let attempts = attempts.clone();
        Arc::new(move || {
            attempts.fetch_add(1, Ordering::SeqCst);
            Err::<Arc<dyn Predictor>, _>("weights file is corrupt".to_string())
        })
    };
    let lc = Lifecycle::new(
        LifecycleConfig {
            load_delay: Duration::from_millis(10),
            idle_timeout: None,
            wedge_after: Duration::from_secs(60),
        },
        loader,
    );
    assert!(lc.acquire().is_err());
    let p = lc.probe();
    assert!(p.live);
    assert!(!p.ready);
    assert_eq!(p.cause.as_deref(), Some("weights file is corrupt"));
    assert_eq!(attempts.load(Ordering::SeqCst), 1);
}

#[test]
fn load_failure_surfaces_as_unavailable_to_requests() {
    let fx = fixture();
    let loader: ModelLoader = Arc::new(|| Err::<Arc<dyn Predictor>, _>("no model".to_string()));
    let svc = bdaas_serving::InferenceService::start(fast_config(8), loader, chain(&fx, "baseline", None)).unwrap();
    let r = svc.infer(InferenceRequest::new("a", row(0)));
    assert!(matches!(r, Err(ServeError::Unavailable(ref c)) if c == "no model"), "{r:?}");
    assert!(!svc.probe().ready);
}

#[test]
fn concurrent_cold_requests_share_one_load() {
    let lc = Arc::new(lifecycle(150, None));
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let lc = lc.clone();
            std::thread::spawn(move || lc.acquire().map(|l| l.waited).unwrap())
        })
        .collect();
    for h in handles {
        assert!(h.join().unwrap() >= Duration::from_millis(100));
    }
    assert_eq!(lc.loads(), 1);
}

#[test]
fn reload_drains_and_loads_a_fresh_instance() {
    let lc = lifecycle(20, None);
    drop(lc.acquire().unwrap());
    lc.reload().unwrap();
    assert_eq!(lc.loads(), 2);
    assert_eq!(lc.state(), LifecycleState::Warm);
}
