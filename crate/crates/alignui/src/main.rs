use std::error::Error;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use alignui::{router, AppState, ServiceConfig};
use alignui_core::codegen::{emit_abstract_spec, generate_code, CodeGuidance};
use alignui_core::dataset::fixtures;
use alignui_core::experiment::{plan, render_svg, study_task, summarize, Condition, GroupBy};
use alignui_core::llm::{Gateway, ReqwestTransport};
use alignui_core::reasoning::{
    fallback_recommendation, reason_ensemble, UserContext, WeightedRecommendation,
};
use alignui_core::selections::{read_log, study_selections};
use alignui_core::{default_catalog, Aspect, PreferenceDataset, RequirementTag};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

type Result<T> = std::result::Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(
    name = "alignui",
    version,
    about = "Preference-guided UI control generation"
)]
struct Cli {
    /// Config file (defaults to ./alignui.toml when present).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        bind: Option<SocketAddr>,
        /// Recommend from dataset counts instead of calling a model.
        #[arg(long)]
        offline: bool,
    },
    /// Reason recommended controls for a task.
    Reason(ReasonArgs),
    /// Reason, then emit control specs or model-written code.
    Generate {
        #[command(flatten)]
        reason: ReasonArgs,
        #[arg(long, value_enum, default_value_t = Emit::Spec)]
        emit: Emit,
    },
    #[command(subcommand)]
    Dataset(DatasetCommand),
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

#[derive(Args)]
struct ReasonArgs {
    #[arg(long)]
    task: String,
    /// Comma-separated aspects: predictability, efficiency, explorability.
    #[arg(long, value_delimiter = ',', required = true)]
    aspects: Vec<Aspect>,
    /// Dataset JSON; defaults to the configured or bundled dataset.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// withpref10, withpref25, withpref30 or withoutpref.
    #[arg(long)]
    condition: Option<Condition>,
    #[arg(long)]
    runs: Option<u32>,
    #[arg(long)]
    offline: bool,
    /// Comma-separated requirement tags for the offline recommender.
    #[arg(long, value_delimiter = ',')]
    tags: Vec<RequirementTag>,
    /// Dataset-style task name, used to name the control parameter.
    #[arg(long)]
    task_name: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Emit {
    Spec,
    Code,
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Per-cell counts and totals.
    Stats {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// The control candidate pool.
    Catalog,
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Counterbalanced assignments for N participants.
    Plan {
        #[arg(long)]
        participants: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Selection counts and pairwise chi-squared tests.
    Analyze {
        #[arg(long)]
        selections: PathBuf,
        #[arg(long, default_value = "aspect")]
        group_by: GroupBy,
        /// Also write a bar chart.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let runtime = tokio::runtime::Runtime::new().expect("tokio runtime starts");
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

async fn run(cli: Cli) -> Result<()> {
    let config = ServiceConfig::discover(cli.config.as_deref())?;
    match cli.command {
        Command::Serve { bind, offline } => serve(config, bind, offline).await,
        Command::Reason(args) => {
            let gw = model(&config, &args)?;
            let rec = recommend(&config, &args, gw.as_ref()).await?;
            emit(&rec.to_json())?;
            Ok(())
        }
        Command::Generate { reason, emit: mode } => {
            let gw = model(&config, &reason)?;
            let rec = recommend(&config, &reason, gw.as_ref()).await?;
            match mode {
                Emit::Spec => {
                    let entry = reason
                        .task_name
                        .as_deref()
                        .and_then(|n| study_task(n).map(|t| t.entry()));
                    let specs = emit_abstract_spec(&rec, entry.as_ref())?;
                    emit(&serde_json::to_string_pretty(&specs)?)?;
                }
                Emit::Code => {
                    let gw = gw.ok_or("code generation needs a model; drop --offline")?;
                    let ui = generate_code(&rec, &CodeGuidance::default(), &gw).await?;
                    emit(&serde_json::to_string_pretty(&ui.envelope())?)?;
                }
            }
            Ok(())
        }
        Command::Dataset(DatasetCommand::Stats { dataset }) => {
            let d = load_dataset(dataset.as_deref().or(config.service.dataset.as_deref()))?;
            emit(&serde_json::to_string_pretty(&d.summary())?)?;
            Ok(())
        }
        Command::Dataset(DatasetCommand::Catalog) => {
            emit(&default_catalog().to_json())?;
            Ok(())
        }
        Command::Experiment(ExperimentCommand::Plan { participants, seed }) => {
            emit(&serde_json::to_string_pretty(&plan(participants, seed))?)?;
            Ok(())
        }
        Command::Experiment(ExperimentCommand::Analyze {
            selections,
            group_by,
            svg,
        }) => {
            let events = read_log(&selections)?;
            let summary = summarize(&study_selections(&events), group_by);
            if let Some(path) = svg {
                std::fs::write(&path, render_svg(&summary))?;
            }
            emit(&serde_json::to_string_pretty(&summary)?)?;
            Ok(())
        }
    }
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|()| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn gateway(config: &ServiceConfig) -> Result<Gateway> {
    Ok(Gateway::from_config(
        &config.gateway,
        Arc::new(ReqwestTransport::default()),
    )?)
}

fn load_dataset(path: Option<&Path>) -> Result<PreferenceDataset> {
    match path {
        Some(p) => Ok(PreferenceDataset::load(&std::fs::read(p)?)?),
        None => Ok(fixtures::full()),
    }
}

/// The model gateway, or `None` when running offline. One gateway serves
/// the whole command so a mock script is consumed in order.
fn model(config: &ServiceConfig, args: &ReasonArgs) -> Result<Option<Gateway>> {
    if args.offline || config.service.offline {
        Ok(None)
    } else {
        gateway(config).map(Some)
    }
}

async fn recommend(
    config: &ServiceConfig,
    args: &ReasonArgs,
    gw: Option<&Gateway>,
) -> Result<WeightedRecommendation> {
    let base = load_dataset(
        args.dataset
            .as_deref()
            .or(config.service.dataset.as_deref()),
    )?;
    let dataset = match args.condition {
        Some(c) => c.dataset(&base, config.service.condition_seed)?,
        None => Some(base),
    };
    let mut ctx = UserContext::new(args.task.clone(), args.aspects.clone())?;
    if !args.tags.is_empty() {
        ctx = ctx.with_tags(args.tags.iter().copied());
    }
    let Some(gw) = gw else {
        let d = dataset
            .ok_or("the offline recommender needs a dataset; withoutpref requires a model")?;
        return Ok(fallback_recommendation(&ctx, &d)?);
    };
    let runs = args.runs.unwrap_or(config.service.n_runs);
    Ok(reason_ensemble(&ctx, dataset.as_ref(), &default_catalog(), gw, runs).await?)
}

async fn serve(mut config: ServiceConfig, bind: Option<SocketAddr>, offline: bool) -> Result<()> {
    if let Some(b) = bind {
        config.service.bind = b;
    }
    config.service.offline |= offline;
    let gw = if config.service.offline {
        None
    } else {
        Some(gateway(&config)?)
    };
    let addr = config.service.bind;
    let state = Arc::new(AppState::new(config, gw)?);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
