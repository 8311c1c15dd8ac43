use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use bdaas_econ::reference::{tradeoff_models, TRADEOFF_POINTS};
use bdaas_econ::{break_even_batch, keep_warm_tradeoff, recommend_table, Thresholds};
use bdaas_security::{Component, Role, SecurityChainConfig, SecurityFixture, SystemClock};
use bdaas_serving::{BatcherConfig, InferenceService, LifecycleConfig, ModelLoader, ServiceConfig};
use bench::report::{COMPOSITION_FILE, STABILITY_FILE};
use bench::scenario::{read_json, read_pricing, ServeConfig};
use bench::training::{prepare, train_and_evaluate, TrainRecipe};
use bench::{emit_reports, load_measurements, measure_composition, run_scenario, write_reports, BenchError, Extras, Scenario};
use clap::{Parser, Subcommand};
use tabnet_core::{load_model, save_model, TrainedModel};

#[derive(Parser)]
#[command(name = "bench", about = "Train, serve, load-test and report on the tabular inference service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the dataset's recipe and write the model file.
    Train {
        #[arg(long, default_value = "hr")]
        dataset: String,
        /// CSV file; a seeded synthetic stand-in is used when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the model over HTTP.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a load scenario and persist its measurements.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Also time each security component against the full chain.
        #[arg(long)]
        composition: bool,
        /// Also score importance stability on held-out samples.
        #[arg(long)]
        stability: bool,
    },
    /// Build report tables and plot CSVs from persisted measurements.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        pricing: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score feature-importance stability across sample partitions.
    Stability {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "hr")]
        dataset: String,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 10)]
        partitions: usize,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cost table, batch-size advice, break-even and keep-warm trade-off.
    Econ {
        #[arg(long)]
        pricing: PathBuf,
        /// Requests per second for the keep-warm analysis.
        #[arg(long, default_value_t = 0.2)]
        rate: f64,
        #[arg(long, default_value_t = 3.0)]
        idle_timeout_s: f64,
        #[arg(long, default_value_t = 0.05)]
        keep_warm_usd_per_hour: f64,
        #[arg(long, default_value_t = 2.0)]
        cold_penalty_s: f64,
        #[arg(long, default_value_t = 0.01)]
        sla_budget: f64,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, category) = e
                .downcast_ref::<BenchError>()
                .map_or((1, "internal"), |b| (b.exit_code(), b.category()));
            eprintln!("error [{category}]: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { dataset, data, out } => train(&dataset, data.as_deref(), &out),
        Command::Serve { config } => serve(&config),
        Command::Run {
            scenario,
            out,
            data,
            composition,
            stability,
        } => run_bench(&scenario, &out, data.as_deref(), composition, stability),
        Command::Report { input, pricing, out } => {
            let sets = load_measurements(&input)?;
            let pricing = read_pricing(&pricing)?;
            let files = emit_reports(&sets, &pricing, &Extras::load(&input)?)?;
            write_reports(&out, &files)?;
            for f in &files {
                println!("{}", out.join(&f.name).display());
            }
            Ok(())
        }
        Command::Stability {
            model,
            dataset,
            data,
            samples,
            partitions,
            out,
        } => {
            let model = read_model(&model)?;
            let split = prepare(&TrainRecipe::for_dataset(&dataset), data.as_deref())?;
            let json = stability_json(&model, &split.test, samples, partitions)?;
            match out {
                Some(p) => std::fs::write(&p, json).map_err(BenchError::from)?,
                None => println!("{json}"),
            }
            Ok(())
        }
        Command::Econ {
            pricing,
            rate,
            idle_timeout_s,
            keep_warm_usd_per_hour,
            cold_penalty_s,
            sla_budget,
        } => {
            let pricing = read_pricing(&pricing)?;
            let rows = bdaas_econ::cost_report(&pricing).map_err(BenchError::from)?;
            println!("{}", bdaas_econ::cost::cost_rows_table(&rows));
            let recs = recommend_table(&TRADEOFF_POINTS, &Thresholds::default()).map_err(BenchError::from)?;
            for r in &recs {
                println!("batch {:<8} gpu/cpu {:.3}  {}", r.interval.to_string(), r.ratio, r.advice);
            }
            let (gpu, cpu) = tradeoff_models();
            match break_even_batch(&gpu, &cpu).map_err(BenchError::from)? {
                Some(b) => println!("break-even batch: {b}"),
                None => println!("break-even batch: none on the grid"),
            }
            let kw = keep_warm_tradeoff(rate, idle_timeout_s, keep_warm_usd_per_hour, cold_penalty_s, sla_budget)
                .map_err(BenchError::from)?;
            println!("{}", serde_json::to_string_pretty(&kw)?);
            Ok(())
        }
    }
}

fn read_model(path: &Path) -> Result<TrainedModel> {
    let bytes = std::fs::read(path)
        .map_err(BenchError::from)
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(load_model(&bytes).map_err(BenchError::from)?)
}

fn train(dataset: &str, data: Option<&Path>, out: &Path) -> Result<()> {
    let outcome = train_and_evaluate(&TrainRecipe::for_dataset(dataset), data)?;
    std::fs::write(out, save_model(&outcome.model)).map_err(BenchError::from)?;
    println!("{}", serde_json::to_string_pretty(&outcome.summary(dataset))?);
    Ok(())
}

fn model_for(dataset: &str, path: Option<&Path>, data: Option<&Path>) -> Result<TrainedModel> {
    match path {
        Some(p) => read_model(p),
        None => {
            tracing::info!(dataset, "no model file given, training the dataset recipe");
            Ok(train_and_evaluate(&TrainRecipe::for_dataset(dataset), data)?.model)
        }
    }
}

fn stability_json(model: &TrainedModel, pool: &tabnet_core::FeatureMatrix, samples: usize, partitions: usize) -> Result<String> {
    if samples > pool.rows() {
        return Err(BenchError::Data(format!("{samples} samples requested, {} held out", pool.rows())).into());
    }
    let rows = pool.select_rows(&(0..samples).collect::<Vec<_>>());
    let report = interpret_eval::stability_score(model, &rows, partitions).map_err(BenchError::from)?;
    Ok(report.to_json().map_err(BenchError::from)?)
}

fn run_bench(path: &Path, out: &Path, data: Option<&Path>, composition: bool, stability: bool) -> Result<()> {
    let scenario: Scenario = read_json(path)?;
    scenario.validate()?;
    let split = prepare(&TrainRecipe::for_dataset(&scenario.dataset), data)?;
    let model = model_for(&scenario.dataset, scenario.model.as_deref(), data)?;
    let set = run_scenario(&scenario, Arc::new(model.clone()), &split.test, out)?;
    let written = set.persist(out)?;
    println!("{}", written.display());
    if composition {
        let report = measure_composition(split.test.row(0), 30, 200, out)?;
        let p = out.join(COMPOSITION_FILE);
        std::fs::write(&p, serde_json::to_string_pretty(&report)?).map_err(BenchError::from)?;
        println!("{}", p.display());
    }
    if stability {
        let p = out.join(STABILITY_FILE);
        std::fs::write(&p, stability_json(&model, &split.test, 100, 10)?).map_err(BenchError::from)?;
        println!("{}", p.display());
    }
    if set.incomplete {
        eprintln!("warning: run incomplete, some requests failed; see the flags in {}", written.display());
    }
    Ok(())
}

fn serve(path: &Path) -> Result<()> {
    let cfg: ServeConfig = read_json(path)?;
    cfg.validate()?;
    let model: Arc<TrainedModel> = Arc::new(model_for(&cfg.dataset, cfg.model.as_deref(), None)?);
    let security = SecurityChainConfig::parse(&cfg.security_preset).map_err(BenchError::from)?;
    let fixture =
        SecurityFixture::generate(Arc::new(SystemClock::default()), Duration::ZERO).map_err(BenchError::from)?;
    let audit = cfg.audit_log.as_deref().filter(|_| security.has(Component::Audit));
    let chain = fixture
        .chain(security.clone(), model.config().feature_count, audit)
        .map_err(BenchError::from)?;
    if security.has(Component::Jwt) {
        println!("bearer token (hr_analyst, 1 h): {}", fixture.token(Role::HrAnalyst, "cli-user", 3600));
        println!("bearer token (system_admin, 1 h): {}", fixture.token(Role::SystemAdmin, "cli-admin", 3600));
    }
    let service_config = ServiceConfig {
        batcher: BatcherConfig {
            max_batch: cfg.max_batch,
            max_delay: Duration::from_secs_f64(cfg.max_delay_ms / 1e3),
            queue_capacity: cfg.queue_capacity,
        },
        lifecycle: LifecycleConfig {
            load_delay: Duration::from_secs_f64(cfg.cold_start_ms / 1e3),
            idle_timeout: cfg.idle_timeout_s.map(Duration::from_secs_f64),
            wedge_after: Duration::from_secs(60),
        },
        parallelism: cfg.parallelism,
        keep_warm_interval: cfg.keep_warm_s.map(Duration::from_secs_f64),
        latency_window: 65_536,
    };
    let loader: ModelLoader = Arc::new(move || Ok(model.clone()));
    let service = Arc::new(
        InferenceService::start(service_config, loader, Arc::new(chain)).map_err(|e| BenchError::Run(e.to_string()))?,
    );
    let runtime = tokio::runtime::Runtime::new().map_err(BenchError::from)?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&cfg.listen)
            .await
            .map_err(BenchError::from)
            .with_context(|| format!("binding {}", cfg.listen))?;
        println!("listening on {}", listener.local_addr().map_err(BenchError::from)?);
        bdaas_serving::http::serve(listener, service).await.map_err(BenchError::from)?;
        Ok(())
    })
}
