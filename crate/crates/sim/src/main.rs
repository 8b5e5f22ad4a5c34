use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use cytotune_core::dataset::load_samples;
use cytotune_core::event_log::{read_log, EventBody};
use cytotune_core::tree::evaluate;
use cytotune_core::{Engine, EngineSetup, InterventionLog};
use cytotune_server::ServiceConfig;
use cytotune_sim::backend::{Backend, Http};
use cytotune_sim::experiment::{run_experiment, ExperimentSpec};
use cytotune_sim::expert::ExpertKind;
use cytotune_sim::generator::{gen_dataset, read_oracle, write_dataset, GeneratedData, HOLDOUT_FILE, ORACLE_FILE, REVIEW_FILE, TRAIN_FILE};
use cytotune_sim::session::{run_session, write_curve, CurvePoint};
use cytotune_sim::{in_process, review_pool};

#[derive(Parser)]
#[command(name = "cytotune", version, about = "Explanation-driven intervention harness for a cytology classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train, holdout and oracle CSVs plus a service config.
    Gen(GenArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Run a scripted review session, or the multi-seed experiment.
    Simulate(SimulateArgs),
    /// Replay a log and check every recorded content hash.
    ReplayVerify(LogArgs),
    /// Rebuild the accuracy-per-intervention CSV from a log.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Simulation config (TOML); its `generator` table is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_holdout: Option<usize>,
    #[arg(long)]
    n_review: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args)]
struct ServeArgs {
    /// Service config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `log.path` from the config.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Simulation config (TOML) with `generator`, `session`, `policy` and `train` tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Log file; defaults to `<out>/interventions.jsonl` in-process.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value = "sim-out")]
    out: PathBuf,
    /// always-override, edit-explanation, accept-all or mixed.
    #[arg(long)]
    policy: Option<ExpertKind>,
    /// Number of interventions.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    error_rate: Option<f64>,
    /// Drive a running service at this base URL instead of an in-process engine.
    #[arg(long, requires = "data")]
    service: Option<String>,
    /// Directory written by `gen`, for the oracle labels in service mode.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run the multi-seed convergence experiment; exits 2 if it fails.
    #[arg(long)]
    experiment: bool,
    #[arg(long)]
    seeds: Option<usize>,
}

#[derive(Args)]
struct LogArgs {
    /// Service config (TOML) naming the data the log was built on.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `log.path` from the config.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    source: LogArgs,
    #[arg(long)]
    out: PathBuf,
}

/// Failure of an acceptance check, as opposed to an error.
struct CheckFailed(String);

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Serve(a) => serve(a),
        Command::Simulate(a) => simulate(a),
        Command::ReplayVerify(a) => replay_verify(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(CheckFailed(msg))) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

type Outcome = Result<Result<(), CheckFailed>>;

fn load_spec(path: Option<&Path>) -> Result<ExperimentSpec> {
    match path {
        None => Ok(ExperimentSpec::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?)
        }
    }
}

/// Service config pointing at the files `write_dataset` put in `dir`.
fn service_config_for(dir: &Path, data: &GeneratedData, spec: &ExperimentSpec, log: &Path) -> String {
    let mut t = toml::Table::new();
    let mut d = toml::Table::new();
    d.insert("train".into(), TRAIN_FILE.into());
    d.insert("holdout".into(), HOLDOUT_FILE.into());
    if !data.review.is_empty() {
        d.insert("review".into(), REVIEW_FILE.into());
    }
    t.insert("data".into(), d.into());
    let log = log.strip_prefix(dir).unwrap_or(log);
    let mut l = toml::Table::new();
    l.insert("path".into(), log.to_string_lossy().into_owned().into());
    t.insert("log".into(), l.into());
    t.insert("policy".into(), toml::Value::try_from(&spec.policy).expect("policy serializes"));
    t.insert("train".into(), toml::Value::try_from(&spec.train).expect("config serializes"));
    toml::to_string(&t).expect("table serializes")
}

fn generate(spec: &ExperimentSpec, out: &Path, log: &Path) -> Result<GeneratedData> {
    let schema = cytotune_core::FeatureSchema::morphological();
    let data = gen_dataset(&spec.generator, &schema)?;
    write_dataset(out, &schema, &data)?;
    std::fs::write(out.join("service.toml"), service_config_for(out, &data, spec, log))?;
    Ok(data)
}

fn gen(a: GenArgs) -> Outcome {
    let mut spec = load_spec(a.config.as_deref())?;
    let g = &mut spec.generator;
    g.seed = a.seed;
    g.n_train = a.n_train.unwrap_or(g.n_train);
    g.n_holdout = a.n_holdout.unwrap_or(g.n_holdout);
    g.n_review = a.n_review.unwrap_or(g.n_review);
    g.label_noise_rate = a.noise.unwrap_or(g.label_noise_rate);
    let data = generate(&spec, &a.out, &a.out.join("interventions.jsonl"))?;
    println!(
        "wrote {} train ({} noisy labels), {} holdout, {} review samples to {}",
        data.train.len(),
        data.flipped,
        data.holdout.len(),
        data.review.len(),
        a.out.display()
    );
    Ok(Ok(()))
}

fn serve(a: ServeArgs) -> Outcome {
    let mut config = ServiceConfig::load(&a.config)?;
    if let Some(log) = a.log {
        config.log.path = log;
    }
    let state = cytotune_server::build_state(&config)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(cytotune_server::serve(
        &config,
        state,
        |addr| println!("listening on http://{addr}"),
        async {
            let _ = tokio::signal::ctrl_c().await;
        },
    ))?;
    Ok(Ok(()))
}

fn simulate(a: SimulateArgs) -> Outcome {
    let mut spec = load_spec(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        spec.base_seed = seed;
        spec.generator.seed = seed;
        spec.session.seed = seed;
    }
    if let Some(kind) = a.policy {
        spec.session.expert.kind = kind;
    }
    spec.session.k_interventions = a.k.unwrap_or(spec.session.k_interventions);
    spec.session.expert.error_rate = a.error_rate.unwrap_or(spec.session.expert.error_rate);
    spec.seeds = a.seeds.unwrap_or(spec.seeds);
    std::fs::create_dir_all(&a.out)?;

    if a.experiment {
        let outcome = run_experiment(&spec)?;
        let path = a.out.join("experiment.csv");
        outcome.write_csv(std::fs::File::create(&path)?)?;
        println!(
            "{} of {} seeds improved, {} not worse, median improvement {:.4}; wrote {}",
            outcome.strictly_better(),
            outcome.rows.len(),
            outcome.not_worse(),
            outcome.median_improvement(),
            path.display()
        );
        return Ok(if outcome.passes() {
            Ok(())
        } else {
            Err(CheckFailed("held-out accuracy did not improve in at least 9 of 10 seeds".into()))
        });
    }

    let report = if let Some(url) = &a.service {
        let dir = a.data.as_deref().expect("clap requires --data");
        let pool = read_oracle(&dir.join(ORACLE_FILE))?;
        let mut backend = Http::new(url);
        run_session(&mut backend, &pool, &spec.session)?
    } else {
        let log_path = a.log.clone().unwrap_or_else(|| a.out.join("interventions.jsonl"));
        if std::fs::metadata(&log_path).map(|m| m.len() > 0).unwrap_or(false) {
            bail!("{} already exists; choose a fresh --log or --out", log_path.display());
        }
        let data = generate(&spec, &a.out, &log_path)?;
        let log = InterventionLog::open(&log_path)?;
        let schema = cytotune_core::FeatureSchema::morphological();
        let mut backend = in_process(&data, &schema, &spec.policy, &spec.train, log)?;
        let mut report = run_session(&mut backend, &review_pool(&data, spec.session.pool), &spec.session)?;
        report.log_path = Some(log_path.display().to_string());
        debug_assert_eq!(backend.current_hash()?, report.final_hash);
        report
    };
    report.save(&a.out)?;
    print!("{}", report.summary());
    println!("wrote {}", a.out.join("report.csv").display());
    Ok(Ok(()))
}

struct Loaded {
    setup: EngineSetup,
    holdout: Vec<cytotune_core::CellSample>,
    log: PathBuf,
}

fn load_for_replay(a: &LogArgs) -> Result<Loaded> {
    let config = ServiceConfig::load(&a.config)?;
    let schema = &config.schema;
    let mut setup = EngineSetup::new(schema.clone(), load_samples(&config.data.train, schema)?);
    if let Some(r) = &config.data.review {
        setup.review = load_samples(r, schema)?;
    }
    let holdout = match &config.data.holdout {
        Some(h) => load_samples(h, schema)?,
        None => Vec::new(),
    };
    Ok(Loaded {
        setup,
        holdout,
        log: a.log.clone().unwrap_or(config.log.path),
    })
}

/// Replays with the parameters recorded in the log's bootstrap event.
fn replay_file(
    loaded: Loaded,
    observe: impl FnMut(&Engine, &cytotune_core::LogEvent),
) -> Result<Result<Engine, CheckFailed>> {
    let read = read_log(&loaded.log)?;
    if let Some(c) = &read.corruption {
        return Ok(Err(CheckFailed(format!("{}: corrupt event at seq {}: {}", loaded.log.display(), c.seq, c.message))));
    }
    let mut setup = loaded.setup;
    match read.events.first().map(|e| &e.body) {
        Some(EventBody::Bootstrap(b)) => {
            setup.policy = b.policy.clone();
            setup.config = b.train_config.clone();
        }
        _ => return Ok(Err(CheckFailed("log does not start with a bootstrap event".into()))),
    }
    let base = setup.train_base()?;
    Ok(Engine::replay_observed(setup, base, &read.events, observe).map_err(|e| CheckFailed(e.to_string())))
}

fn replay_verify(a: LogArgs) -> Outcome {
    let loaded = load_for_replay(&a)?;
    let path = loaded.log.clone();
    let engine = match replay_file(loaded, |_, _| {})? {
        Ok(e) => e,
        Err(f) => return Ok(Err(f)),
    };
    let v = engine.current();
    println!(
        "{}: {} events replayed, final version {}, content hash {}",
        path.display(),
        engine.log().len(),
        v.version,
        v.content_hash
    );
    Ok(Ok(()))
}

fn report(a: ReportArgs) -> Outcome {
    let loaded = load_for_replay(&a.source)?;
    let holdout = loaded.holdout.clone();
    if holdout.is_empty() {
        bail!("the config names no holdout data");
    }
    let mut rows: Vec<CurvePoint> = Vec::new();
    let mut failed: Option<anyhow::Error> = None;
    let observe = |engine: &Engine, event: &cytotune_core::LogEvent| {
        let index = match event.body {
            EventBody::Bootstrap(_) => 0,
            EventBody::Intervention(_) => rows.len(),
            EventBody::Retrain(_) => return,
        };
        match evaluate(&engine.current().model, &holdout) {
            Ok(e) => rows.push(CurvePoint {
                intervention_index: index,
                holdout_accuracy: e.accuracy,
                version: engine.current().version,
            }),
            Err(e) => failed = Some(e.into()),
        }
    };
    if let Err(f) = replay_file(loaded, observe)? {
        return Ok(Err(f));
    }
    if let Some(e) = failed {
        return Err(e);
    }
    write_curve(std::fs::File::create(&a.out)?, &rows)?;
    println!("wrote {} rows to {}", rows.len(), a.out.display());
    Ok(Ok(()))
}
