//! `fog-pipeline`: preprocess recordings, train and federate models,
//! evaluate them, run channel-fallback inference and export GASF images.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error,
//! 3 inference failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use fog_core::windowing::SplitTag;

use commands::InferenceError;
use config::{ConfigError, RunConfig};

const THREADS_ENV: &str = "FOG_PIPELINE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "fog-pipeline", version, about)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Number of split repetitions; overrides the configuration.
    #[arg(long, global = true)]
    repetitions: Option<u32>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Segment recordings and write per-split window and GASF archives.
    Preprocess {
        /// Directory of recording CSV files.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train one model per configured channel combination.
    Train {
        /// Channel combination such as `AccV,AccAP`; repeatable.
        #[arg(long = "channels")]
        channel_sets: Vec<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Federated training with weighted averaging over subject shards.
    Federate {
        #[arg(long)]
        channels: Option<String>,
        #[arg(long)]
        clients: Option<usize>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        local_epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Window and episode reports, channel ranking and averaged summary.
    Evaluate {
        /// Weight files to evaluate instead of the trained ones.
        #[arg(long = "model")]
        models: Vec<PathBuf>,
        /// Evaluate a single repetition.
        #[arg(long)]
        rep: Option<u32>,
    },
    /// Classify one window with channel fallback.
    Infer {
        /// Ranking file; defaults to the first repetition's.
        #[arg(long)]
        ranking: Option<PathBuf>,
        /// CSV with columns AccV, AccML, AccAP; empty cells are missing.
        #[arg(long)]
        window: PathBuf,
    },
    /// Write GASF images of archived windows as PNG files.
    GafExport {
        #[arg(long, default_value_t = 0)]
        rep: u32,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: SplitTag,
        /// Window key `SUBJECT:START`; repeatable.
        #[arg(long = "key", required = true)]
        keys: Vec<String>,
        /// Also write the difference map of the first two keys.
        #[arg(long)]
        diff: bool,
    },
}

fn parse_split(s: &str) -> Result<SplitTag, String> {
    SplitTag::ALL
        .into_iter()
        .find(|t| t.name() == s)
        .ok_or_else(|| format!("unknown split {s:?}; expected train, val or test"))
}

fn setup_threads() -> Result<(), ConfigError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize =
        value.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            ConfigError(format!("{THREADS_ENV}={value:?} is not a positive integer"))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| ConfigError(e.to_string()))
}

fn resolve(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(r) = cli.repetitions {
        cfg.repetitions = r;
    }
    match &cli.command {
        Command::Preprocess { data: Some(d) } => cfg.data_dir = Some(d.clone()),
        Command::Train {
            channel_sets,
            epochs,
            batch_size,
        } => {
            if !channel_sets.is_empty() {
                cfg.train.channel_sets = channel_sets.clone();
            }
            cfg.train.epochs = epochs.unwrap_or(cfg.train.epochs);
            cfg.train.batch_size = batch_size.unwrap_or(cfg.train.batch_size);
        }
        Command::Federate {
            channels,
            clients,
            rounds,
            local_epochs,
            batch_size,
        } => {
            let f = &mut cfg.federated;
            f.channels = channels.clone().unwrap_or(f.channels.clone());
            f.num_clients = clients.unwrap_or(f.num_clients);
            f.rounds = rounds.unwrap_or(f.rounds);
            f.local_epochs = local_epochs.unwrap_or(f.local_epochs);
            cfg.train.batch_size = batch_size.unwrap_or(cfg.train.batch_size);
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    setup_threads()?;
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::Preprocess { .. } => commands::preprocess(&cfg),
        Command::Train { .. } => commands::train(&cfg),
        Command::Federate { .. } => commands::federate(&cfg),
        Command::Evaluate { models, rep } => commands::evaluate(&cfg, models, *rep),
        Command::Infer { ranking, window } => {
            let ranking = ranking
                .clone()
                .unwrap_or_else(|| cfg.rep_dir(0).join(commands::RANKING_FILE));
            commands::infer(&cfg, &ranking, window)
        }
        Command::GafExport {
            rep,
            split,
            keys,
            diff,
        } => commands::gaf_export(&cfg, *rep, *split, keys, *diff),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<InferenceError>()) {
        3
    } else if err.chain().any(|e| e.is::<ConfigError>()) {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
