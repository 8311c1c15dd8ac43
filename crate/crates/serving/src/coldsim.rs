//! Discrete-event simulation of scale-to-zero: which arrivals find the
//! function unloaded.
//!
//! Service time is treated as negligible next to inter-arrival gaps, so an
//! arrival is cold when it is the first one or when the gap since the
//! previous arrival exceeds the idle timeout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArrivalPattern {
    /// Homogeneous Poisson arrivals at `rate` per second.
    Poisson { rate: f64 },
    /// Bursty traffic: Poisson at `rate` during exponentially distributed
    /// on periods, silence during exponentially distributed off periods.
    OnOff { rate: f64, mean_on_s: f64, mean_off_s: f64 },
}

impl ArrivalPattern {
    fn validate(&self) -> Result<(), String> {
        let ok = match *self {
            ArrivalPattern::Poisson { rate } => rate > 0.0 && rate.is_finite(),
            ArrivalPattern::OnOff {
                rate,
                mean_on_s,
                mean_off_s,
            } => [rate, mean_on_s, mean_off_s].iter().all(|v| *v > 0.0 && v.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(format!("arrival parameters must be positive and finite: {self:?}"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ColdSimReport {
    pub arrivals: u64,
    pub cold: u64,
    pub fraction: f64,
    /// Simulated wall time covered by the arrivals, in seconds.
    pub span_s: f64,
}

/// Simulates `arrivals` requests and counts cold starts for the given idle
/// timeout. Deterministic for a given seed.
pub fn simulate_cold_fraction(
    pattern: ArrivalPattern,
    idle_timeout_s: f64,
    arrivals: u64,
    seed: u64,
) -> Result<ColdSimReport, String> {
    pattern.validate()?;
    if !(idle_timeout_s >= 0.0) || arrivals == 0 {
        return Err("need a non-negative timeout and at least one arrival".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaps = ArrivalGaps::new(pattern)?;
    let mut cold = 1u64;
    let mut span = 0.0;
    for _ in 1..arrivals {
        let gap = gaps.sample(&mut rng);
        span += gap;
        if gap > idle_timeout_s {
            cold += 1;
        }
    }
    Ok(ColdSimReport {
        arrivals,
        cold,
        fraction: cold as f64 / arrivals as f64,
        span_s: span,
    })
}

enum ArrivalGaps {
    Poisson(Exp<f64>),
    OnOff { within: Exp<f64>, on: Exp<f64>, off: Exp<f64> },
}

impl ArrivalGaps {
    fn new(pattern: ArrivalPattern) -> Result<Self, String> {
        let exp = |rate: f64| Exp::new(rate).map_err(|e| e.to_string());
        Ok(match pattern {
            ArrivalPattern::Poisson { rate } => ArrivalGaps::Poisson(exp(rate)?),
            ArrivalPattern::OnOff {
                rate,
                mean_on_s,
                mean_off_s,
            } => ArrivalGaps::OnOff {
                within: exp(rate)?,
                on: exp(1.0 / mean_on_s)?,
                off: exp(1.0 / mean_off_s)?,
            },
        })
    }

    /// Time to the next arrival. For on/off traffic the on period is
    /// memoryless, so each gap independently either lands inside the current
    /// burst or crosses one or more off periods first.
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            ArrivalGaps::Poisson(e) => e.sample(rng),
            ArrivalGaps::OnOff { within, on, off } => {
                let mut gap = 0.0;
                loop {
                    let next = within.sample(rng);
                    let remaining_on = on.sample(rng);
                    if next <= remaining_on {
                        return gap + next;
                    }
                    gap += remaining_on + off.sample(rng);
                }
            }
        }
    }
}
