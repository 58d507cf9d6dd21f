//! `groupfield` command line: synth → scales → train → decompose → eval, and
//! a read-only HTTP service for interactive selection.

pub mod commands;
pub mod config;
pub mod error;
pub mod service;

use std::ffi::OsString;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;
pub use error::CliError;

/// Environment variable holding the log filter, e.g. `info` or `groupfield=debug`.
pub const LOG_ENV: &str = "GROUPFIELD_LOG";

#[derive(Debug, Parser)]
#[command(name = "groupfield", version, about = "Scale-conditioned 3D grouping from multi-view masks")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; missing sections keep their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config value, e.g. `--set train.steps=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub sets: Vec<String>,
    /// Seed for the scene, field initialisation and ray sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 gives bit-reproducible outputs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic hierarchical scene and write it as a dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign a 3D scale to every mask and fit the scale normalizer.
    Scales {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train the affinity field; writes a checkpoint and JSONL metrics.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Build the group tree; writes tree JSON and a `.bin` point sidecar.
    Decompose {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score completeness, recall and ARI against ground-truth labels.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve points, tree and click selection over HTTP.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
        bind: IpAddr,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tree: PathBuf,
    },
}

pub fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "info");
    let _ = env_logger::Builder::from_env(env).format_timestamp_millis().try_init();
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    if let Some(t) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    if let Some(path) = &cli.global.config {
        error::require(path)?;
    }
    let cfg = RunConfig::load(cli.global.config.as_deref(), &cli.global.sets, cli.global.seed)?;
    match cli.command {
        Command::Synth { out } => commands::synth(&cfg, &out).map(drop),
        Command::Scales { data } => commands::scales(&cfg, &data).map(drop),
        Command::Train { data, out, metrics } => commands::train(&cfg, &data, &out, metrics.as_deref()).map(drop),
        Command::Decompose { data, checkpoint, out } => commands::decompose(&cfg, &data, &checkpoint, &out).map(drop),
        Command::Eval {
            data,
            checkpoint,
            tree,
            out,
        } => commands::eval(&cfg, &data, &checkpoint, &tree, &out).map(drop),
        Command::Serve {
            port,
            bind,
            data,
            checkpoint,
            tree,
        } => {
            let ds = commands::load_dataset(&data)?;
            let model = commands::load_model(&checkpoint)?;
            let (tree, _) = commands::load_tree(&tree)?;
            let positions = ds
                .points
                .ok_or_else(|| CliError::Input("dataset has no point cloud (points.bin)".into()))?;
            let state = Arc::new(service::ServiceState::new(model, positions, tree, &cfg.decompose)?);
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Input(format!("runtime: {e}")))?;
            rt.block_on(service::serve(SocketAddr::new(bind, port), state))
                .map_err(|e| CliError::Input(format!("serve on {bind}:{port}: {e}")))
        }
    }
}

/// Parse, run and map the outcome to a process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
