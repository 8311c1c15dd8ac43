use bdaas_econ::reference::{reference_pricing, tradeoff_models, THROUGHPUT_ROWS, TRADEOFF_POINTS};
use bdaas_econ::{
    amortized_security_latency, break_even_batch, cold_fraction, cost_per_1k, cost_report, keep_warm_tradeoff,
    recommend, recommend_table, round_to, security_overhead_table, Advice, BatchInterval, ComponentLatencies,
    CurvePoint, EconError, HandshakeMode, PricingConfig, PricingModel, RowSource, Thresholds,
};
use proptest::prelude::*;

#[test]
fn worked_examples() {
    let gpu = cost_per_1k(0.90, 1, 4565.8).unwrap();
    assert!((gpu - 0.0000548).abs() < 5e-8);
    assert_eq!(round_to(gpu, 4), 0.0001);
    let s8 = cost_per_1k(0.40, 8, 877.2).unwrap();
    assert!((s8 - 0.001013).abs() < 5e-7);
    assert_eq!(round_to(s8, 4), 0.0010);
    let s2 = cost_per_1k(0.40, 2, 892.9).unwrap();
    assert!((s2 - 0.000249).abs() < 5e-7);
    assert_eq!(round_to(s2, 4), 0.0002);
}

#[test]
fn all_twelve_throughput_rows_reproduce_printed_cost() {
    for r in &THROUGHPUT_ROWS {
        // independent arithmetic: dollars per second divided by inferences per second, times 1000
        let oracle = r.price_per_hour * f64::from(r.nodes) / 3600.0 / r.throughput.mean * 1000.0;
        let c = cost_per_1k(r.price_per_hour, r.nodes, r.throughput.mean).unwrap();
        assert!((c - oracle).abs() <= 1e-15, "{} batch {}", r.configuration, r.batch);
        assert_eq!(
            round_to(c, 4),
            r.printed_cost,
            "{} batch {}: {c}",
            r.configuration,
            r.batch
        );
    }
}

#[test]
fn cost_report_rows_recompute() {
    let rows = cost_report(&reference_pricing()).unwrap();
    assert_eq!(rows.len(), 12);
    for r in &rows {
        assert!(r.cost_per_1k > 0.0);
        assert_eq!(r.recompute().unwrap(), r.cost_per_1k);
    }
    let csv = bdaas_econ::cost::cost_rows_csv(&rows).unwrap();
    assert!(csv.starts_with("configuration,batch,effective_hourly_price,throughput,cost_per_1k"));
}

#[test]
fn pricing_json_round_trip() {
    let text = r#"{"configurations":[{"name":"gpu","price_per_hour":0.9,"nodes":1,"curve":[{"batch":100,"throughput":472.0}]}]}"#;
    let cfg = PricingConfig::from_json(text).unwrap();
    assert_eq!(cfg.get("gpu").unwrap().throughput_at(100), Some(472.0));
    let bad = r#"{"configurations":[{"name":"gpu","price_per_hour":0.9,"nodes":1,"curve":[{"batch":100,"throughput":0}]}]}"#;
    assert!(matches!(PricingConfig::from_json(bad), Err(EconError::Config(_))));
}

proptest! {
    #[test]
    fn homogeneity(price in 0.01f64..10.0, nodes in 1u32..16, tput in 1.0f64..1e5) {
        let c = cost_per_1k(price, nodes, tput).unwrap();
        prop_assert_eq!(cost_per_1k(2.0 * price, nodes, tput).unwrap(), 2.0 * c);
        prop_assert_eq!(cost_per_1k(price, nodes, 2.0 * tput).unwrap(), c / 2.0);
    }

    #[test]
    fn cold_fraction_strictly_decreasing(rate in 0.01f64..5.0, t in 0.0f64..5.0, d in 0.01f64..1.0) {
        let base = cold_fraction(rate, t).unwrap();
        prop_assert!(cold_fraction(rate + d, t + 0.01).unwrap() < base);
        prop_assert!(cold_fraction(rate, t + d).unwrap() < base);
        prop_assert!(cold_fraction(rate + d, t.max(0.01)).unwrap() < cold_fraction(rate, t.max(0.01)).unwrap());
    }
}

fn curve(name: &str, price: f64, points: &[(u32, f64)]) -> PricingModel {
    PricingModel {
        name: name.into(),
        price_per_hour: price,
        nodes: 1,
        curve: points
            .iter()
            .map(|&(batch, throughput)| CurvePoint { batch, throughput })
            .collect(),
    }
}

#[test]
fn break_even_from_tradeoff_points() {
    let (gpu, cpu) = tradeoff_models();
    assert_eq!(break_even_batch(&gpu, &cpu).unwrap(), Some(200));
}

#[test]
fn break_even_edge_cases() {
    let a = curve("a", 1.0, &[(10, 100.0), (20, 200.0)]);
    assert_eq!(break_even_batch(&a, &a.clone()).unwrap(), Some(10));
    let cheaper = curve("c", 0.5, &[(10, 100.0), (20, 200.0)]);
    assert_eq!(break_even_batch(&cheaper, &a).unwrap(), Some(10));
    let pricier = curve("p", 5.0, &[(10, 100.0), (20, 200.0)]);
    assert_eq!(break_even_batch(&pricier, &a).unwrap(), None);
    let disjoint = curve("d", 1.0, &[(30, 100.0)]);
    assert!(matches!(break_even_batch(&a, &disjoint), Err(EconError::Config(_))));
}

#[test]
fn tradeoff_rows_map_to_published_advice() {
    let recs = recommend_table(&TRADEOFF_POINTS, &Thresholds::default()).unwrap();
    let advice: Vec<Advice> = recs.iter().map(|r| r.advice).collect();
    assert_eq!(
        advice,
        vec![
            Advice::Cpu,
            Advice::Mixed,
            Advice::GpuCostEffective,
            Advice::GpuStronglyPreferred
        ]
    );
    // intervals partition [1, inf) without overlap
    for w in recs.windows(2) {
        assert_eq!(w[0].interval.hi, Some(w[1].interval.lo));
    }
    assert_eq!(recs.last().unwrap().interval.hi, None);
    assert_eq!(recs[1].interval.to_string(), "50-200");
}

#[test]
fn single_recommendations() {
    let t = Thresholds::default();
    let i = BatchInterval { lo: 1, hi: Some(50) };
    assert_eq!(recommend(i, 0.0008, 0.0004, &t).unwrap().advice, Advice::Cpu);
    assert_eq!(recommend(i, 0.0002, 0.0003, &t).unwrap().advice, Advice::GpuCostEffective);
    assert_eq!(recommend(i, 0.0001, 0.0003, &t).unwrap().advice, Advice::GpuStronglyPreferred);
    assert!(matches!(recommend(i, 0.0, 0.0003, &t), Err(EconError::Domain(_))));
}

#[test]
fn security_composition() {
    let t = ComponentLatencies::reference();
    let tls = amortized_security_latency(&t, &["mtls"], HandshakeMode::Session).unwrap();
    assert_eq!(tls, 2.8);
    assert_eq!(round_to(t.baseline_ms + tls, 1), 14.2);
    let amort = amortized_security_latency(
        &t,
        &["mtls"],
        HandshakeMode::Amortized {
            handshakes: 1,
            requests: 20,
        },
    )
    .unwrap();
    assert!((amort - (8.2 + 19.0 * 2.8) / 20.0).abs() < 1e-12);
    assert_eq!(round_to(amort, 2), 3.07);
    let jwt = amortized_security_latency(&t, &["jwt", "jwks_cache"], HandshakeMode::Session).unwrap();
    assert!((jwt - 2.4).abs() < 1e-12);
    assert_eq!(round_to(t.baseline_ms + jwt, 1), 13.8);
}

#[test]
fn overhead_table_rows() {
    let rows = security_overhead_table(&ComponentLatencies::reference()).unwrap();
    let find = |name: &str| rows.iter().find(|r| r.configuration == name).unwrap();
    assert_eq!(find("mTLS Only").latency_ms, 14.2);
    assert_eq!(find("mTLS Only").overhead_pct, Some(24.6));
    assert_eq!(find("OAuth2/JWT Only").latency_ms, 13.8);
    assert_eq!(find("OAuth2/JWT Only").overhead_pct, Some(21.1));
    let full = find("Full IL4 Stack");
    assert_eq!(full.source, RowSource::Reported);
    assert_eq!(full.overhead_pct, Some(50.0));
    assert_eq!(rows.len(), 10);
}

#[test]
fn cold_fraction_examples() {
    assert_eq!(cold_fraction(1.0, 0.0).unwrap(), 1.0);
    let f = cold_fraction(1.0, 3.0).unwrap();
    assert!((f - 0.049787).abs() < 1e-6 && f < 0.05);
}

#[test]
fn keep_warm_decisions() {
    // rate chosen so the cold fraction is 10%: e^(-λ·60) = 0.1
    let rate = 10f64.ln() / 60.0;
    let r = keep_warm_tradeoff(rate, 60.0, 0.02, 3.5, 0.05).unwrap();
    assert!((r.cold_fraction - 0.1).abs() < 1e-12);
    assert!(r.recommend_keep_warm);
    assert_eq!(r.keep_warm_usd_per_hour, 0.02);
    assert!(r.delay_avoided_s_per_hour > 0.0);

    let none = keep_warm_tradeoff(0.0, 60.0, 0.02, 3.5, 0.05).unwrap();
    assert_eq!(none.cold_fraction, 0.0);
    assert!(!none.recommend_keep_warm);

    let always_cold = keep_warm_tradeoff(1.0, 0.0, 0.02, 3.5, 1.0).unwrap();
    assert!(!always_cold.recommend_keep_warm);
}
