//! Published reference measurements used to calibrate and check the cost
//! model. Values are copied as printed.

use crate::cost::{CurvePoint, PricingConfig, PricingModel};

pub const GPU_PRICE_PER_HOUR: f64 = 0.90;
pub const SPARK_NODE_PRICE_PER_HOUR: f64 = 0.40;

/// A steady-state measurement: mean and 95% CI half-width in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measured {
    pub mean: f64,
    pub ci_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThroughputRow {
    pub configuration: &'static str,
    pub nodes: u32,
    pub price_per_hour: f64,
    pub batch: u32,
    pub throughput: Measured,
    pub latency_ms: Measured,
    /// Cost per 1K as printed (4 decimals).
    pub printed_cost: f64,
}

const fn m(mean: f64, ci_pct: f64) -> Measured {
    Measured { mean, ci_pct }
}

const fn row(
    configuration: &'static str,
    nodes: u32,
    price_per_hour: f64,
    batch: u32,
    throughput: Measured,
    latency_ms: Measured,
    printed_cost: f64,
) -> ThroughputRow {
    ThroughputRow {
        configuration,
        nodes,
        price_per_hour,
        batch,
        throughput,
        latency_ms,
        printed_cost,
    }
}

pub const GPU: &str = "single_node_gpu";
pub const SPARK_2: &str = "spark_2_nodes";
pub const SPARK_4: &str = "spark_4_nodes";
pub const SPARK_8: &str = "spark_8_nodes";

/// Throughput, latency and cost for the GPU node and three Spark clusters.
pub const THROUGHPUT_ROWS: [ThroughputRow; 12] = [
    row(GPU, 1, GPU_PRICE_PER_HOUR, 100, m(472.0, 2.1), m(4.0, 1.8), 0.0005),
    row(SPARK_2, 2, SPARK_NODE_PRICE_PER_HOUR, 100, m(497.5, 8.3), m(201.0, 9.1), 0.0004),
    row(SPARK_4, 4, SPARK_NODE_PRICE_PER_HOUR, 100, m(490.2, 7.9), m(204.0, 8.7), 0.0009),
    row(SPARK_8, 8, SPARK_NODE_PRICE_PER_HOUR, 100, m(480.8, 8.5), m(208.0, 9.3), 0.0018),
    row(GPU, 1, GPU_PRICE_PER_HOUR, 500, m(2307.4, 1.9), m(8.5, 2.2), 0.0001),
    row(SPARK_2, 2, SPARK_NODE_PRICE_PER_HOUR, 500, m(826.5, 7.6), m(605.0, 10.2), 0.0003),
    row(SPARK_4, 4, SPARK_NODE_PRICE_PER_HOUR, 500, m(806.5, 8.1), m(620.0, 9.8), 0.0006),
    row(SPARK_8, 8, SPARK_NODE_PRICE_PER_HOUR, 500, m(775.2, 8.8), m(645.0, 10.5), 0.0011),
    row(GPU, 1, GPU_PRICE_PER_HOUR, 1000, m(4565.8, 1.7), m(11.4, 2.5), 0.0001),
    row(SPARK_2, 2, SPARK_NODE_PRICE_PER_HOUR, 1000, m(892.9, 9.2), m(1120.0, 11.3), 0.0002),
    row(SPARK_4, 4, SPARK_NODE_PRICE_PER_HOUR, 1000, m(877.2, 8.7), m(1140.0, 10.9), 0.0005),
    row(SPARK_8, 8, SPARK_NODE_PRICE_PER_HOUR, 1000, m(877.2, 9.1), m(1140.0, 11.1), 0.0010),
];

/// CPU baselines at batch 1000: (configuration, throughput, latency ms, printed cost).
pub const CPU_BASELINES: [(&str, Measured, Measured, f64); 4] = [
    ("tabnet_cpu_8_cores", m(387.2, 4.3), m(258.4, 5.1), 0.0003),
    ("xgboost_8_cores", m(1842.6, 2.8), m(54.3, 3.2), 0.0001),
    ("lightgbm_8_cores", m(2156.3, 2.5), m(46.4, 2.9), 0.0001),
    ("tabnet_gpu_t4", m(4565.8, 1.7), m(11.4, 2.5), 0.0001),
];

/// Cost/batch trade-off points: (interval start, GPU cost, CPU cost).
pub const TRADEOFF_POINTS: [(u32, f64, f64); 4] = [
    (1, 0.0008, 0.0004),
    (50, 0.0005, 0.0004),
    (200, 0.0002, 0.0003),
    (500, 0.0001, 0.0003),
];

/// Pricing config with one model per configuration in [`THROUGHPUT_ROWS`].
pub fn reference_pricing() -> PricingConfig {
    let mut configurations: Vec<PricingModel> = Vec::new();
    for r in &THROUGHPUT_ROWS {
        let point = CurvePoint {
            batch: r.batch,
            throughput: r.throughput.mean,
        };
        match configurations.iter_mut().find(|c| c.name == r.configuration) {
            Some(c) => c.curve.push(point),
            None => configurations.push(PricingModel {
                name: r.configuration.into(),
                price_per_hour: r.price_per_hour,
                nodes: r.nodes,
                curve: vec![point],
            }),
        }
    }
    PricingConfig { configurations }
}

/// GPU and single-CPU pricing models whose costs at each trade-off interval
/// start equal the [`TRADEOFF_POINTS`] costs (throughput back-derived from
/// price and cost).
pub fn tradeoff_models() -> (PricingModel, PricingModel) {
    let derive = |price: f64, cost: f64| price / 3600.0 * 1000.0 / cost;
    let gpu = PricingModel {
        name: "gpu".into(),
        price_per_hour: GPU_PRICE_PER_HOUR,
        nodes: 1,
        curve: TRADEOFF_POINTS
            .iter()
            .map(|&(b, g, _)| CurvePoint {
                batch: b,
                throughput: derive(GPU_PRICE_PER_HOUR, g),
            })
            .collect(),
    };
    let cpu = PricingModel {
        name: "cpu".into(),
        price_per_hour: SPARK_NODE_PRICE_PER_HOUR,
        nodes: 1,
        curve: TRADEOFF_POINTS
            .iter()
            .map(|&(b, _, c)| CurvePoint {
                batch: b,
                throughput: derive(SPARK_NODE_PRICE_PER_HOUR, c),
            })
            .collect(),
    };
    (gpu, cpu)
}
