//! `sustain`: operator entry point for the analytics pipeline.
//!
//! Usage errors exit with status 2 and pipeline failures with status 1.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use sustain_core::corpusgen::{self, GenSpec};
use sustain_core::forecast::{self, ForecastError, Hyperparams, DEFAULT_TURN_THRESHOLD};
use sustain_core::graph::ListPatterns;
use sustain_core::metrics::FEATURE_DIM;
use sustain_core::store::{self, StoreError};
use sustain_service::{ApiConfig, ServiceError};
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "sustain", version, about = "Socio-technical sustainability analytics for incubator projects")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a CSV corpus directory into a new artifact tree.
    Import {
        csv_dir: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Build networks, metrics and month bundles for every project.
    Build {
        tree: PathBuf,
        /// Mailing-list address regex; repeat to give several. Replaces the defaults.
        #[arg(long = "list-pattern")]
        list_patterns: Vec<String>,
    },
    /// Train the forecaster on all graduated and retired projects.
    Train {
        tree: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Write forecast.json (probabilities and turning points) for every project.
    Forecast {
        tree: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TURN_THRESHOLD)]
        threshold: f64,
    },
    /// Serve the read-only HTTP API.
    Serve {
        tree: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Dashboard build to serve for non-API paths.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
        /// Allowed CORS origin; repeatable.
        #[arg(long = "cors-origin")]
        cors_origins: Vec<String>,
    },
    /// Generate a synthetic CSV corpus from a JSON generator spec.
    Gen {
        spec: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Print corpus statistics as JSON.
    Summary { tree: PathBuf },
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    Gen(#[from] corpusgen::GenError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn import(csv_dir: &Path, out: &Path) -> Result<(), CliError> {
    let import = store::import_csv_corpus(csv_dir)?;
    store::write_import(&import, out)?;
    for e in import.errors.iter().take(20) {
        log::warn!("{e}");
    }
    println!(
        "imported {} projects, {} emails, {} commits, {} reports ({} rejected rows, {} warnings; see {})",
        import.corpus.projects.len(),
        import.corpus.emails.len(),
        import.corpus.commits.len(),
        import.corpus.reports.len(),
        import.errors.len(),
        import.warnings.len(),
        out.join(store::ERRORS_FILE).display()
    );
    Ok(())
}

fn build(tree: &Path, list_patterns: &[String]) -> Result<(), CliError> {
    let patterns = if list_patterns.is_empty() {
        ListPatterns::default()
    } else {
        ListPatterns::new(list_patterns).map_err(|e| CliError::Usage(format!("invalid --list-pattern: {e}")))?
    };
    let t0 = Instant::now();
    let months = store::build_tree(tree, &patterns)?;
    println!("built {months} project-months in {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}

fn train(tree: &Path, out: &Path, seed: u64, epochs: Option<usize>) -> Result<(), CliError> {
    let data: Vec<_> = store::load_training_set(tree)?.into_iter().map(|(_, s)| s).collect();
    let mut hp = Hyperparams::default();
    if let Some(e) = epochs {
        if e == 0 {
            return Err(CliError::Usage("--epochs must be at least 1".into()));
        }
        hp.epochs = e;
    }
    let t0 = Instant::now();
    let (model, history) = forecast::train(&data, &hp, seed)?;
    forecast::save_checkpoint(&model, out)?;
    let last = history.last().expect("at least one epoch");
    println!(
        "trained on {} sequences for {} epochs in {:.1}s: loss {:.6}, accuracy {:.4}",
        data.len(),
        last.epoch,
        t0.elapsed().as_secs_f64(),
        last.loss,
        last.accuracy
    );
    Ok(())
}

fn run_forecast(tree: &Path, model_path: &Path, threshold: f64) -> Result<(), CliError> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(CliError::Usage(format!("--threshold must be positive, got {threshold}")));
    }
    let model = forecast::load_checkpoint(model_path)?;
    if model.input_dim() != FEATURE_DIM {
        return Err(ForecastError::Checkpoint(format!(
            "model expects {} features, the tree provides {FEATURE_DIM}",
            model.input_dim()
        ))
        .into());
    }
    let mut n = 0;
    for id in store::list_projects(tree)? {
        let info = store::read_project_info(tree, &id)?;
        let features = store::load_features(tree, &info)?;
        if features.is_empty() {
            continue;
        }
        let series = forecast::forecast_series(&model, &id, &features)?;
        let turns = forecast::detect_turns(&series, threshold);
        store::write_forecast(tree, &series, &turns)?;
        n += 1;
    }
    println!("wrote forecasts for {n} projects");
    Ok(())
}

fn serve(config: ApiConfig) -> Result<(), CliError> {
    let rt = tokio::runtime::Runtime::new().map_err(|source| CliError::Io { path: config.root.clone(), source })?;
    rt.block_on(sustain_service::serve(config))?;
    Ok(())
}

fn gen(spec_path: &Path, out: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(spec_path).map_err(|source| CliError::Io { path: spec_path.to_owned(), source })?;
    let spec: GenSpec = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: invalid generator spec: {e}", spec_path.display())))?;
    corpusgen::generate_synthetic_corpus(&spec, out)?;
    println!("wrote {} projects to {}", spec.num_projects, out.display());
    Ok(())
}

fn summary(tree: &Path) -> Result<(), CliError> {
    let corpus = store::read_corpus(tree)?;
    let s = store::dataset_summary(&corpus);
    println!("{}", serde_json::to_string_pretty(&s).expect("summary serializes"));
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Import { csv_dir, out } => import(&csv_dir, &out),
        Command::Build { tree, list_patterns } => build(&tree, &list_patterns),
        Command::Train { tree, out, seed, epochs } => train(&tree, &out, seed, epochs),
        Command::Forecast { tree, model, threshold } => run_forecast(&tree, &model, threshold),
        Command::Serve { tree, addr, static_dir, cors_origins } => {
            serve(ApiConfig { addr, root: tree, static_dir, cors_origins })
        }
        Command::Gen { spec, out } => gen(&spec, &out),
        Command::Summary { tree } => summary(&tree),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with status 2 on usage errors and 0 for --help/--version
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
