use std::path::PathBuf;
use std::process::ExitCode;

use caf_cli::config::{Overrides, ProviderConfig, ProviderMode, RunConfig};
use caf_cli::runner::{cmd_baseline, cmd_consistency, cmd_eval};
use caf_cli::service::{self, AppState, ServiceOptions, ENV_SERVICE_TOKEN};
use caf_cli::CliError;
use clap::{Args, Parser, Subcommand};
use tracing::warn;

#[derive(Parser)]
#[command(
    name = "caf",
    version,
    about = "Structured answers to questions about contract clauses"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate, canonicalize and score answers for every clause.
    Eval(RunArgs),
    /// Score the embedding-similarity baseline.
    Baseline(RunArgs),
    /// Repeat a generation run and report answer stability.
    Consistency {
        #[command(flatten)]
        run: RunArgs,
        /// Number of runs.
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Serve the exploration API on localhost.
    Serve(ServeArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    template: Option<String>,
    /// Option set id.
    #[arg(long)]
    options: Option<String>,
    /// Comma-separated example set ids; pass an empty string for none.
    #[arg(long)]
    examples: Option<String>,
    #[arg(long, value_enum)]
    provider_mode: Option<ProviderMode>,
    #[arg(long)]
    cassette: Option<PathBuf>,
    /// Report path; the text table goes next to it with a .txt extension.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn load(self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(&self.config)?;
        Overrides {
            template_id: self.template,
            option_set_id: self.options,
            example_set_ids: self.examples.map(|e| {
                e.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            }),
            provider_mode: self.provider_mode,
            cassette_path: self.cassette,
            output_path: self.out,
        }
        .apply(&mut cfg);
        Ok(cfg)
    }
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8787)]
    port: u16,
    /// Directory holding registry.json.
    #[arg(long, default_value = "assets")]
    assets: PathBuf,
    /// Where the session log lives.
    #[arg(long, default_value = "caf-data")]
    data_dir: PathBuf,
    #[arg(long, value_enum, default_value = "live")]
    provider_mode: ProviderMode,
    #[arg(long)]
    cassette: Option<PathBuf>,
    #[arg(long)]
    mock_script: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Eval(args) => {
            let report = cmd_eval(&args.load()?)?;
            print!("{}", headline(&report));
            summarize(&report);
        }
        Command::Baseline(args) => {
            let report = cmd_baseline(&args.load()?)?;
            print!("{}", headline(&report));
            summarize(&report);
        }
        Command::Consistency { run, k } => {
            let report = cmd_consistency(&run.load()?, k)?;
            let c = &report.consistency;
            println!(
                "runs {} clauses {} changed {} stability {:.4}",
                c.runs,
                c.total,
                c.changed_clauses.len(),
                c.stability
            );
            for id in &c.changed_clauses {
                println!("changed: {id}");
            }
        }
        Command::Serve(args) => serve(args)?,
    }
    Ok(())
}

fn headline(report: &caf_core::RunReport) -> String {
    let m = &report.metrics;
    format!(
        "{}: {}/{} correct, accuracy {:.4}\n",
        report.label, m.correct, m.total, m.accuracy
    )
}

fn summarize(report: &caf_core::RunReport) {
    let m = &report.metrics;
    println!(
        "unmapped {} escape {} cleanup {} failures {}",
        m.unmapped_count,
        m.escape_count,
        m.cleanup_count,
        report.failures.len()
    );
}

fn serve(args: ServeArgs) -> Result<(), CliError> {
    let mut provider = ProviderConfig::new(args.provider_mode);
    provider.cassette_path = args.cassette;
    provider.mock_script = args.mock_script;
    if let Some(model) = args.model {
        provider.model = model;
    }
    provider.validate(true)?;
    let token = std::env::var(ENV_SERVICE_TOKEN)
        .ok()
        .filter(|t| !t.is_empty());
    if token.is_none() {
        warn!("{ENV_SERVICE_TOKEN} is not set; the API accepts unauthenticated requests");
    }
    let base_dir = std::env::current_dir().map_err(|e| CliError::io(".", e))?;
    let state = AppState::new(ServiceOptions {
        assets_dir: args.assets,
        data_dir: args.data_dir,
        token,
        provider,
        base_dir,
    })?;
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::io("tokio runtime", e))?
        .block_on(service::serve(state, args.port))
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
