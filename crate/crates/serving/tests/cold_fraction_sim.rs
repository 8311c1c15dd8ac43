use bdaas_serving::{simulate_cold_fraction, ArrivalPattern};

#[test]
fn poisson_cold_fraction_converges_to_exponential_survival() {
    for (k, &rate) in [0.2, 1.0, 5.0].iter().enumerate() {
        for (j, &timeout) in [1.0, 3.0, 10.0].iter().enumerate() {
            let sim = simulate_cold_fraction(ArrivalPattern::Poisson { rate }, timeout, 100_000, (k * 3 + j) as u64)
                .unwrap();
            let analytic = (-rate * timeout).exp();
            assert!(
                (sim.fraction - analytic).abs() < 0.01,
                "rate {rate}, timeout {timeout}: simulated {} vs {analytic}",
                sim.fraction
            );
        }
    }
}

#[test]
fn mean_gap_matches_rate() {
    let sim = simulate_cold_fraction(ArrivalPattern::Poisson { rate: 2.0 }, 1.0, 200_000, 5).unwrap();
    let mean_gap = sim.span_s / (sim.arrivals - 1) as f64;
    assert!((mean_gap - 0.5).abs() < 0.01, "{mean_gap}");
}

#[test]
fn bursty_traffic_is_colder_than_poisson_at_the_same_mean_rate() {
    // on 10% of the time at 10/s gives a mean rate of 1/s
    let bursty = ArrivalPattern::OnOff {
        rate: 10.0,
        mean_on_s: 0.5,
        mean_off_s: 4.5,
    };
    let b = simulate_cold_fraction(bursty, 3.0, 100_000, 1).unwrap();
    let p = simulate_cold_fraction(ArrivalPattern::Poisson { rate: 1.0 }, 3.0, 100_000, 1).unwrap();
    let b_rate = b.arrivals as f64 / b.span_s;
    assert!((b_rate - 1.0).abs() < 0.1, "bursty mean rate {b_rate}");
    assert!(b.fraction > p.fraction, "bursty {} vs poisson {}", b.fraction, p.fraction);
}
