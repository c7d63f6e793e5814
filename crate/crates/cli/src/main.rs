use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use teamspace_bots::{run_cohort, CohortSpec, HarnessError};
use teamspace_core::analysis::{AnalysisContext, AnalysisError, AnalysisOptions, MeasureRegistry};
use teamspace_core::config::{ConfigError, ConfigFormat, ExperimentConfig};
use teamspace_core::persistence::{export_tidy, read_log, ExportError, FsyncPolicy, LogError, Table, UnknownTable};
use teamspace_core::sociometrics::LiwcDictionary;
use teamspace_server::{Server, ServerError, ServerOptions};
use thiserror::Error;

#[derive(Parser)]
#[command(name = "teamspace", version, about = "Run, export and analyze small-team chat experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the HTTP and WebSocket API for one run.
    Serve(ServeArgs),
    /// Write tidy CSV tables from an event log.
    Export(ExportArgs),
    /// Recompute one measure from an event log.
    Analyze(AnalyzeArgs),
    /// Scripted participants.
    Bots {
        #[command(subcommand)]
        command: BotsCommand,
    },
}

#[derive(Args)]
struct ServeArgs {
    /// Experiment config, JSON or TOML. Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "TEAMSPACE_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,
    #[arg(long, env = "TEAMSPACE_BIND", default_value = "127.0.0.1:8080")]
    bind: String,
    /// Overrides the condition assignment seed.
    #[arg(long, env = "TEAMSPACE_SEED")]
    seed: Option<u64>,
    /// Events go to <data-dir>/<run-id>/events.jsonl.
    #[arg(long, default_value = "run")]
    run_id: String,
    /// Skip fsync after each batch. For load tests only.
    #[arg(long)]
    no_fsync: bool,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Restrict to these tables. Repeatable.
    #[arg(long = "table")]
    tables: Vec<String>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// disagreement, climate, accuracy, compromise, scales, liwc or report.
    measure: String,
    #[arg(long)]
    log: PathBuf,
    /// LIWC-style dictionary, JSON {category: [patterns]}. The demo dictionary is used when omitted.
    #[arg(long)]
    dict: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Separate discussion and decision profiles.
    #[arg(long)]
    by_phase: bool,
    /// Percent change per category from discussion to decision.
    #[arg(long)]
    shift: bool,
    /// The run's config, for its survey items. Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BotsCommand {
    /// Drive a cohort of bots against a running server.
    Run {
        #[arg(long)]
        server: String,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the full run summary, with captured frames, here.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("cohort: {0}")]
    Cohort(serde_json::Error),
    #[error(transparent)]
    Server(#[from] ServerError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error(transparent)]
    UnknownTable(#[from] UnknownTable),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("{0} protocol violation(s)")]
    Violations(usize),
    #[error("{path}: {source}")]
    Write { path: String, source: std::io::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Analysis(e) => e.exit_code() as u8,
            CliError::Config(_) | CliError::Cohort(_) | CliError::Log(_) => 2,
            CliError::UnknownTable(_) => 2,
            _ => 1,
        }
    }
}

fn read(path: &PathBuf) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.display().to_string(), source })
}

fn load_config(path: Option<&PathBuf>) -> Result<ExperimentConfig, CliError> {
    match path {
        Some(p) => Ok(ExperimentConfig::parse(&read(p)?, ConfigFormat::from_path(p))?),
        None => Ok(ExperimentConfig::default()),
    }
}

async fn serve(args: ServeArgs) -> Result<(), CliError> {
    let mut config = load_config(args.config.as_ref())?;
    if let Some(seed) = args.seed {
        config.condition_assignment.seed = seed;
    }
    let mut options = ServerOptions::new(&args.data_dir, &args.run_id);
    if args.no_fsync {
        options.fsync = FsyncPolicy::Never;
    }
    let server = Server::bind(&args.bind, config, options).await?;
    tracing::info!(url = %server.url(), log = %server.log_path.display(), "serving");
    let handle = server.handle.clone();
    tokio::spawn(async move {
        if tokio::signal::ctrl_c().await.is_ok() {
            handle.stop().await;
        }
    });
    server.wait().await?;
    Ok(())
}

fn export(args: ExportArgs) -> Result<(), CliError> {
    let tables = if args.tables.is_empty() {
        Table::ALL.to_vec()
    } else {
        args.tables.iter().map(|t| t.parse::<Table>()).collect::<Result<_, _>>()?
    };
    let log = read_log(&args.log)?;
    for path in export_tidy(&log.events, &args.out, &tables)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> Result<(), CliError> {
    let registry = MeasureRegistry::standard();
    // Unknown names fail before any file is read.
    registry.get(&args.measure)?;
    let dictionary = match &args.dict {
        Some(p) => LiwcDictionary::from_json(&read(p)?)
            .map_err(|source| AnalysisError::Dictionary { path: p.display().to_string(), source })?,
        None => LiwcDictionary::demo(),
    };
    let config = load_config(args.config.as_ref())?;
    let log = read_log(&args.log).map_err(AnalysisError::from)?;
    let options = AnalysisOptions { by_phase: args.by_phase, shift: args.shift };
    let cx = AnalysisContext::new(&log.events, config.survey_items, dictionary, options)?;
    let output = registry.run(&args.measure, &cx)?;
    output.write_to(&args.out)?;
    print!("{}", output.summary());
    Ok(())
}

async fn bots_run(server: String, cohort: PathBuf, seed: u64, summary_path: Option<PathBuf>) -> Result<(), CliError> {
    let spec: CohortSpec = serde_json::from_str(&read(&cohort)?).map_err(CliError::Cohort)?;
    let summary = run_cohort(&server, &spec, seed).await?;
    println!("{}", serde_json::to_string_pretty(&summary.brief()).expect("json"));
    if let Some(path) = summary_path {
        let text = serde_json::to_string_pretty(&summary).expect("json");
        std::fs::write(&path, text).map_err(|source| CliError::Write { path: path.display().to_string(), source })?;
    }
    let violations = summary.violations();
    for v in &violations {
        eprintln!("violation: {v}");
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Violations(violations.len()))
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve(args) => serve(args).await,
        Command::Export(args) => export(args),
        Command::Analyze(args) => analyze(args),
        Command::Bots { command: BotsCommand::Run { server, cohort, seed, summary } } => {
            bots_run(server, cohort, seed, summary).await
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
