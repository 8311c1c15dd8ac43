//! Acceptance gate. Each test checks one criterion at its stated tolerance and
//! prints a single PASS/FAIL line, then fails if the criterion was not met.
//! Tests are serialized so timing-sensitive measurements do not overlap.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::{Arc, Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use bdaas_econ::reference::{tradeoff_models, THROUGHPUT_ROWS, TRADEOFF_POINTS};
use bdaas_econ::{
    amortized_security_latency, break_even_batch, cold_fraction, cost_per_1k, recommend_table, round_to,
    security_overhead_table, Advice, ComponentLatencies, HandshakeMode, RowSource, Thresholds,
};
use bdaas_security::audit::{digest_hex, DEFAULT_BUFFER};
use bdaas_security::jwt::encode;
use bdaas_security::tls::{client_config, connect_in_memory, mutual_server_config, presents_certificate, RotatingCertResolver, TestCa};
use bdaas_security::{
    verify_audit_chain, Admission, AuditChain, AuditEntry, AuditLog, ChainRequest, Claims, JwtError, JwtValidator,
    ManualClock, Redactor, RequestContext, Role, SecurityChainConfig, SecurityFixture, SigningKey, StaticKeys,
    SystemClock,
};
use bdaas_serving::{simulate_cold_fraction, ArrivalPattern, Predictor};
use bench::stats::{mean, sample_sd};
use bench::{measure_composition, run_scenario, train_and_evaluate, MeasurementSet, Scenario, TrainOutcome, TrainRecipe};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use tabnet_core::{sparsemax, FeatureMatrix, ModelConfig, TrainedModel};

static SERIAL: Mutex<()> = Mutex::new(());
static HR: OnceLock<TrainOutcome> = OnceLock::new();

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn hr() -> &'static TrainOutcome {
    HR.get_or_init(|| train_and_evaluate(&TrainRecipe::hr(), None).expect("HR training"))
}

/// Prints the verdict line past the test harness's output capture.
fn verdict(n: u32, name: &str, checks: &[(&str, bool, String)]) {
    let passed = checks.iter().all(|(_, ok, _)| *ok);
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {n} {name}: {}", if passed { "PASS" } else { "FAIL" });
    for (label, ok, detail) in checks {
        let _ = writeln!(out, "    [{}] {label}: {detail}", if *ok { "ok" } else { "FAIL" });
    }
    let _ = out.flush();
    assert!(passed, "criterion {n} ({name}) not met");
}

#[test]
fn criterion_1_cost_model() {
    let _g = serial();
    let start = Instant::now();
    let mut matched = 0;
    let mut mismatches = Vec::new();
    for r in &THROUGHPUT_ROWS {
        let c = cost_per_1k(r.price_per_hour, r.nodes, r.throughput.mean).unwrap();
        if round_to(c, 4) == r.printed_cost {
            matched += 1;
        } else {
            mismatches.push(format!("{}@{}", r.configuration, r.batch));
        }
    }
    let elapsed = start.elapsed();
    let gpu = cost_per_1k(0.90, 1, 4565.8).unwrap();
    let spark8 = cost_per_1k(0.40, 8, 877.2).unwrap();
    verdict(
        1,
        "cost model",
        &[
            (
                "rows reproduce printed cost",
                matched == THROUGHPUT_ROWS.len() && THROUGHPUT_ROWS.len() == 12,
                format!("{matched}/{} {mismatches:?}", THROUGHPUT_ROWS.len()),
            ),
            (
                "worked examples",
                (gpu - 0.90 / 3600.0 * 1000.0 / 4565.8).abs() < 1e-15
                    && round_to(gpu, 4) == 0.0001
                    && round_to(spark8, 4) == 0.0010,
                format!("gpu {gpu:.7}, spark-8 {spark8:.7}"),
            ),
            ("runtime under 1 s", elapsed < Duration::from_secs(1), format!("{elapsed:?}")),
        ],
    );
}

#[test]
fn criterion_2_security_composition() {
    let _g = serial();
    let reference = ComponentLatencies::reference();
    let rows = security_overhead_table(&reference).unwrap();
    let find = |name: &str| rows.iter().find(|r| r.configuration == name).unwrap();
    let mtls = find("mTLS Only");
    let jwt = find("OAuth2/JWT Only");
    let full = find("Full IL4 Stack");
    let amort = amortized_security_latency(
        &reference,
        &["mtls"],
        HandshakeMode::Amortized {
            handshakes: 1,
            requests: 20,
        },
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let row = hr().test.row(0).to_vec();
    let comp = measure_composition(&row, 30, 200, dir.path()).unwrap();
    let individual: BTreeMap<&str, String> =
        comp.individual.iter().map(|d| (d.config.as_str(), format!("{:.4}", d.delta_ms))).collect();
    verdict(
        2,
        "security composition",
        &[
            (
                "mTLS only",
                mtls.latency_ms == 14.2 && mtls.overhead_pct == Some(24.6),
                format!("{} ms ({:?}%)", mtls.latency_ms, mtls.overhead_pct),
            ),
            (
                "OAuth2/JWT only",
                jwt.latency_ms == 13.8 && jwt.overhead_pct == Some(21.1),
                format!("{} ms ({:?}%)", jwt.latency_ms, jwt.overhead_pct),
            ),
            ("amortized 1:20 handshake", round_to(amort, 2) == 3.07, format!("{amort:.4} ms")),
            (
                "full stack row flagged as reported",
                full.source == RowSource::Reported && full.latency_ms == 17.1,
                format!("{} ms, {:?}", full.latency_ms, full.source),
            ),
            (
                "measured full chain within [max, 1.25 x sum] of parts",
                comp.within_bounds(),
                format!(
                    "full {:.4} ms, max {:.4}, sum {:.4}, parts {individual:?}",
                    comp.full.delta_ms, comp.max_individual_ms, comp.sum_individual_ms
                ),
            ),
        ],
    );
}

fn scenario(preset: &str, batches: Vec<usize>, reps: usize, requests: usize, seed: u64) -> Scenario {
    let mut s = Scenario::new("hr");
    s.batch_sizes = batches;
    s.security_preset = preset.into();
    s.repetitions = reps;
    s.warmup_requests = 200;
    s.requests_per_repetition = requests;
    s.parallelism = 1;
    s.seed = seed;
    s
}

fn snapshots_ordered(sets: &[&MeasurementSet]) -> (bool, usize) {
    let mut n = 0;
    let mut ok = true;
    for set in sets {
        for p in &set.points {
            for r in &p.repetitions {
                match &r.latency {
                    Some(s) => {
                        n += 1;
                        ok &= s.p50 <= s.p95 && s.p95 <= s.p99;
                    }
                    None => ok = false,
                }
            }
        }
    }
    (ok && n > 0, n)
}

#[test]
fn criterion_3_local_throughput_and_latency() {
    let _g = serial();
    let model: Arc<dyn Predictor> = Arc::new(hr().model.clone());
    let pool = &hr().test;
    let dir = tempfile::tempdir().unwrap();

    let scaling = run_scenario(&scenario("baseline", vec![1, 256], 5, 3000, 31), model.clone(), pool, dir.path()).unwrap();
    let t1 = mean(&scaling.points[0].throughputs());
    let t256 = mean(&scaling.points[1].throughputs());

    let base = run_scenario(&scenario("baseline", vec![32], 10, 20_000, 32), model.clone(), pool, dir.path()).unwrap();
    let full = run_scenario(&scenario("full_il4", vec![32], 10, 20_000, 32), model, pool, dir.path()).unwrap();
    let deltas: Vec<f64> = full.points[0]
        .security_means()
        .iter()
        .zip(base.points[0].security_means())
        .map(|(f, b)| f - b)
        .collect();
    let delta_mean = mean(&deltas);
    let cov = sample_sd(&deltas) / delta_mean;
    let (ordered, snapshots) = snapshots_ordered(&[&scaling, &base, &full]);
    let complete = !scaling.incomplete && !base.incomplete && !full.incomplete;

    verdict(
        3,
        "local throughput and latency",
        &[
            (
                "throughput(256) > 2 x throughput(1), one worker",
                t256 > 2.0 * t1,
                format!("{t256:.0}/s vs {t1:.0}/s (x{:.2})", t256 / t1),
            ),
            ("p50 <= p95 <= p99 on every snapshot", ordered, format!("{snapshots} snapshots")),
            (
                "full_il4 security-stage delta positive, CoV < 25% over 10 reps",
                deltas.len() == 10 && delta_mean > 0.0 && cov < 0.25,
                format!("mean {delta_mean:.4} ms/request, CoV {:.1}%", cov * 100.0),
            ),
            ("runs complete", complete, format!("{complete}")),
        ],
    );
}

#[test]
fn criterion_4_model_quality() {
    let _g = serial();
    let first = hr();
    let again = train_and_evaluate(&TrainRecipe::hr(), None).unwrap();
    let auc = first.auc.unwrap_or(0.0);
    verdict(
        4,
        "HR model quality",
        &[
            ("accuracy >= 0.80", first.accuracy >= 0.80, format!("{:.4}", first.accuracy)),
            ("AUC >= 0.65", auc >= 0.65, format!("{auc:.4}")),
            ("held-out 20%", first.test.rows() * 5 == first.train.rows() + first.test.rows(), format!("{} test rows", first.test.rows())),
            ("trained within 10 minutes", first.elapsed < Duration::from_secs(600), format!("{:?}", first.elapsed)),
            (
                "seeded and reproducible",
                again.model.model_version() == first.model.model_version() && again.accuracy == first.accuracy,
                format!("{} / {}", first.model.model_version(), again.model.model_version()),
            ),
        ],
    );
}

#[test]
fn criterion_5_interpretability() {
    let _g = serial();
    let outcome = hr();
    let samples = outcome.test.select_rows(&(0..100).collect::<Vec<_>>());
    let report = interpret_eval::stability_score(&outcome.model, &samples, 10).unwrap();
    let top: Vec<String> = report.top(5).iter().map(|f| format!("{} {:.3}", f.feature, f.stability)).collect();
    let top_ok = report.top(5).len() == 5 && report.top(5).iter().all(|f| f.stability > 0.85);
    let inv = interpret_eval::load_invariance_check(Arc::new(outcome.model.clone()), &samples, 32, 256).unwrap();
    verdict(
        5,
        "interpretability",
        &[
            ("top-5 stability > 0.85", top_ok, format!("{top:?}")),
            ("rank variance < 0.05", report.rank_variance < 0.05, format!("{:.4}", report.rank_variance)),
            ("bitwise invariance, concurrency 1 vs 32 and batch 1 vs 256", inv.passed(), format!("{}", inv.passed())),
        ],
    );
}

fn projection_by_enumeration(z: &[f64]) -> Vec<f64> {
    let n = z.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for bits in 1u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|i| bits & (1 << i) != 0).collect();
        let tau = (support.iter().map(|&i| z[i]).sum::<f64>() - 1.0) / support.len() as f64;
        let mut p = vec![0.0; n];
        if support.iter().any(|&i| z[i] - tau < 0.0) {
            continue;
        }
        for &i in &support {
            p[i] = z[i] - tau;
        }
        let dist: f64 = p.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().map_or(true, |(d, _)| dist < *d) {
            best = Some((dist, p));
        }
    }
    best.unwrap().1
}

fn gradient_check() -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let rows: Vec<Vec<f64>> = (0..10).map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let x = FeatureMatrix::from_rows(&rows).unwrap();
    let y = vec![0, 1, 1, 0, 1, 0, 0, 1, 1, 0];
    let mut cfg = ModelConfig::new(4, 2).with_seed(9);
    cfg.lambda_sparse = 0.1;
    let model = TrainedModel::initialize(cfg).unwrap();
    let (_, grads) = model.objective_and_gradients(&x, &y, 128).unwrap();
    let support = |m: &TrainedModel| -> Vec<Vec<bool>> {
        m.forward(&x)
            .unwrap()
            .iter()
            .flat_map(|o| o.explanation.step_masks.iter().map(|r| r.iter().map(|&v| v > 0.0).collect()))
            .collect()
    };
    let h = 1e-6;
    let (mut checked, mut worst) = (0, 0.0f64);
    for (t, g) in grads.iter().enumerate() {
        for k in 0..g.data.len() {
            let mut plus = model.clone();
            plus.parameters_mut()[t].data[k] += h;
            let mut minus = model.clone();
            minus.parameters_mut()[t].data[k] -= h;
            // a support change means the objective is not smooth here
            if support(&plus) != support(&minus) {
                continue;
            }
            let fd = (plus.objective(&x, &y, 128).unwrap() - minus.objective(&x, &y, 128).unwrap()) / (2.0 * h);
            let an = g.data[k];
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6));
            checked += 1;
        }
    }
    (checked, worst)
}

#[test]
fn criterion_6_numerics() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_sum = 0.0f64;
    let mut negative = 0;
    for _ in 0..100_000 {
        let n = rng.gen_range(1..=64);
        let scale = [0.01, 1.0, 100.0][rng.gen_range(0..3)];
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
        let p = sparsemax(&z).unwrap();
        negative += p.iter().filter(|&&v| v < 0.0).count();
        worst_sum = worst_sum.max((p.iter().sum::<f64>() - 1.0).abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_oracle = 0.0f64;
    for _ in 0..1000 {
        let z: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let fast = sparsemax(&z).unwrap();
        for (a, b) in fast.iter().zip(projection_by_enumeration(&z)) {
            worst_oracle = worst_oracle.max((a - b).abs());
        }
    }
    let (checked, worst_grad) = gradient_check();
    verdict(
        6,
        "numerics",
        &[
            (
                "simplex property on 1e5 vectors",
                negative == 0 && worst_sum <= 1e-12,
                format!("{negative} negative entries, worst |sum - 1| {worst_sum:.2e}"),
            ),
            (
                "gradients vs central differences within 1e-4",
                checked > 500 && worst_grad < 1e-4,
                format!("{checked} coordinates, worst relative error {worst_grad:.2e}"),
            ),
            (
                "brute-force projection within 1e-8 on 1e3 vectors",
                worst_oracle <= 1e-8,
                format!("worst {worst_oracle:.2e}"),
            ),
        ],
    );
}

fn audit_entry(i: u32, email: &str) -> AuditEntry {
    let mut attributes = BTreeMap::new();
    attributes.insert("contact".to_string(), json!(email));
    AuditEntry {
        context: RequestContext {
            subject: format!("analyst-{i}"),
            endpoint: "/infer".into(),
            input_digest: digest_hex(format!("body-{i}").as_bytes()),
            attributes,
        },
        model_version: "tabnet-hr".into(),
        outcome: "ok".into(),
    }
}

fn bit_flip_detection(trials: usize) -> usize {
    let mut chain = AuditChain::new(Redactor::standard());
    let mut bytes = Vec::new();
    for i in 0..4 {
        bytes.extend(chain.append(&audit_entry(i, "a@b.com"), 1_700_000_000_000 + u64::from(i)).unwrap().to_line());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut detected = 0;
    for _ in 0..trials {
        let idx = rng.gen_range(0..bytes.len());
        let mut tampered = bytes.clone();
        tampered[idx] ^= 1 << rng.gen_range(0..8);
        let record = bytes[..idx].iter().filter(|&&b| b == b'\n').count() as u64 + 1;
        if verify_audit_chain(&tampered).tampered_seq().is_some_and(|s| s <= record) {
            detected += 1;
        }
    }
    detected
}

fn jwt_reasons() -> (Option<&'static str>, Option<&'static str>) {
    let clock = Arc::new(ManualClock::new(10_000));
    let validator = JwtValidator::new("auth", clock);
    let key = SigningKey::Hmac(b"a-thirty-two-byte-long-secret-xx".to_vec());
    let mut keys = StaticKeys::new();
    keys.insert("k", key.verification_key());
    let claims = |exp| Claims {
        sub: "analyst-7".into(),
        role: "hr_analyst".into(),
        exp,
        iss: "auth".into(),
    };
    let expired = validator.validate(&encode(&claims(9_999), "k", &key), &keys);
    let forged = validator.validate(&encode(&claims(20_000), "k", &SigningKey::Hmac(b"attacker".to_vec())), &keys);
    let reason = |r: Result<_, JwtError>| r.err().map(|e| e.reason());
    let (e, f) = (reason(expired.map(|_| ())), reason(forged.map(|_| ())));
    (e, f)
}

/// Runs the full chain with e-mail addresses in the subject and attributes
/// and returns the persisted audit bytes.
fn audited_bytes(dir: &std::path::Path) -> Vec<u8> {
    let fixture = SecurityFixture::generate(Arc::new(SystemClock::default()), Duration::ZERO).unwrap();
    let token = fixture.token(Role::HrAnalyst, "a@b.com", 3600);
    let path = dir.join("audit.jsonl");
    let chain = fixture.chain(SecurityChainConfig::parse("full_il4").unwrap(), 3, Some(&path)).unwrap();
    let rows = [vec![1.0, 2.0, 3.0]];
    for i in 0..20 {
        let body = format!("{{\"contact\":\"a@b.com\",\"i\":{i}}}");
        let req = ChainRequest {
            client_id: "svc",
            bearer: Some(&token),
            endpoint: "/infer",
            rows: Some(&rows),
            body: body.as_bytes(),
        };
        if let Admission::Admitted(a) = chain.admit(&req) {
            let mut timings = a.timings;
            let mut attrs = BTreeMap::new();
            attrs.insert("contact".to_string(), json!("a@b.com"));
            attrs.insert("note".to_string(), json!("reach me at a@b.com"));
            chain.record_outcome(&req, &a.principal, "ok", "tabnet-hr", attrs, &mut timings);
        }
    }
    chain.audit_log().unwrap().flush();
    // a directly written log with the same payloads
    let direct = dir.join("direct.jsonl");
    {
        let log = AuditLog::open(&direct, Redactor::standard(), DEFAULT_BUFFER, Arc::new(ManualClock::new(1))).unwrap();
        for i in 0..5 {
            let mut e = audit_entry(i, "a@b.com");
            e.context.subject = "a@b.com".into();
            log.append(e);
        }
        log.flush();
    }
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.extend(std::fs::read(&direct).unwrap());
    bytes
}

#[test]
fn criterion_7_security_correctness() {
    let _g = serial();
    let detected = bit_flip_detection(1000);
    let (expired, forged) = jwt_reasons();

    let ca = TestCa::generate("ca").unwrap();
    let resolver = Arc::new(RotatingCertResolver::new(&ca.server_identity().unwrap()).unwrap());
    let server = mutual_server_config(ca.roots().unwrap(), resolver).unwrap();
    let anonymous = client_config(ca.roots().unwrap(), None).unwrap();
    let refused = (0..20).filter(|_| connect_in_memory(&anonymous, &server).is_err()).count();
    let with_cert = client_config(ca.roots().unwrap(), Some(&ca.client_identity("svc").unwrap())).unwrap();
    let control = connect_in_memory(&with_cert, &server).is_ok();

    let dir = tempfile::tempdir().unwrap();
    let bytes = audited_bytes(dir.path());
    let leaks = bytes.windows(7).filter(|w| *w == b"a@b.com").count();
    let records = bytes.iter().filter(|&&b| b == b'\n').count();

    verdict(
        7,
        "security correctness",
        &[
            ("single-bit tamper detected", detected == 1000, format!("{detected}/1000")),
            (
                "expired and forged tokens rejected with distinct reasons",
                expired.is_some() && forged.is_some() && expired != forged,
                format!("expired {expired:?}, forged {forged:?}"),
            ),
            (
                "mTLS without client certificate refused",
                refused == 20 && !presents_certificate(&anonymous) && control,
                format!("{refused}/20 refused, certified control connects: {control}"),
            ),
            ("no e-mail in persisted audit bytes", leaks == 0 && records >= 25, format!("{leaks} hits in {records} records")),
        ],
    );
}

#[test]
fn criterion_8_economics() {
    let _g = serial();
    let mut worst = 0.0f64;
    let mut cells = Vec::new();
    for (k, rate) in [0.2, 1.0, 5.0].into_iter().enumerate() {
        for (j, timeout) in [1.0, 3.0, 10.0].into_iter().enumerate() {
            let sim = simulate_cold_fraction(ArrivalPattern::Poisson { rate }, timeout, 100_000, 100 + (k * 3 + j) as u64)
                .unwrap();
            let model = cold_fraction(rate, timeout).unwrap();
            worst = worst.max((sim.fraction - model).abs());
            cells.push(format!("{rate}x{timeout}:{:.4}/{model:.4}", sim.fraction));
        }
    }
    let labels: Vec<Advice> = recommend_table(&TRADEOFF_POINTS, &Thresholds::default())
        .unwrap()
        .iter()
        .map(|r| r.advice)
        .collect();
    let expected = [Advice::Cpu, Advice::Mixed, Advice::GpuCostEffective, Advice::GpuStronglyPreferred];
    let (gpu, cpu) = tradeoff_models();
    let be = break_even_batch(&gpu, &cpu).unwrap();
    verdict(
        8,
        "economics",
        &[
            ("cold fraction vs simulation within 1 pp", worst < 0.01, format!("worst {:.4} pp {cells:?}", worst * 100.0)),
            ("four batch ranges map to their labels", labels == expected, format!("{labels:?}")),
            ("break-even batch in 200-500", be.is_some_and(|b| (200..=500).contains(&b)), format!("{be:?}")),
        ],
    );
}
