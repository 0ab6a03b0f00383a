//! `clab`: generate data, pretrain encoders, evaluate checkpoints and run
//! the label-efficiency benchmark.

use std::path::PathBuf;
use std::process::ExitCode;

use clab_core::bench::Variant;
use clab_core::eval::Protocol;
use clap::{ArgAction, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Debug, Parser)]
#[command(name = "clab", version, about = "Momentum-contrast pretraining and label-efficiency benchmark")]
struct Cli {
    /// More log output (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,

    /// Only log errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
struct SeedArg {
    /// Master seed, overriding the config's seed.
    #[arg(long, env = "CLAB_SEED")]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset as PNG images plus metadata.csv.
    GenData {
        /// Synthetic dataset spec (JSON); defaults to the standard benchmark.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Pretrain (or initialize) the encoder of one variant.
    Pretrain {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        variant: VariantArg,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Evaluate one checkpoint with one protocol on one labeled subset.
    Evaluate {
        /// Experiment config (JSON) providing data, splits and protocol settings.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        protocol: ProtocolArg,
        /// Label fraction in (0, 1].
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        repeat: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Run the full benchmark grid; resumes an interrupted run in `--out`.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Maximum concurrent jobs (defaults to the number of CPUs).
        #[arg(long)]
        jobs: Option<usize>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Render CSV tables and SVG charts from a report directory.
    Report {
        /// Directory holding report.json.
        #[arg(long)]
        dir: PathBuf,
        /// Output directory for the tables (defaults to `<dir>/tables`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    None,
    Supervised,
    Moco,
    Mocotp,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::None => Variant::None,
            VariantArg::Supervised => Variant::Supervised,
            VariantArg::Moco => Variant::Moco,
            VariantArg::Mocotp => Variant::Mocotp,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Knn,
    Linear,
    Finetune,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Knn => Protocol::Knn,
            ProtocolArg::Linear => Protocol::Linear,
            ProtocolArg::Finetune => Protocol::Finetune,
        }
    }
}

fn init_logging(cli: &Cli) {
    let level = if cli.quiet {
        "error"
    } else {
        match cli.verbose {
            0 => "warn",
            1 => "info",
            2 => "debug",
            _ => "trace",
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli);
    let result = match cli.command {
        Command::GenData { config, out, seed } => commands::gen_data(config.as_deref(), &out, seed.seed),
        Command::Pretrain {
            config,
            variant,
            out,
            seed,
        } => commands::pretrain(&config, variant.into(), &out, seed.seed),
        Command::Evaluate {
            config,
            checkpoint,
            protocol,
            fraction,
            repeat,
            out,
            seed,
        } => commands::evaluate(
            &config,
            &checkpoint,
            commands::Cell {
                protocol: protocol.into(),
                fraction,
                repeat,
            },
            &out,
            seed.seed,
        ),
        Command::Benchmark {
            config,
            out,
            jobs,
            seed,
        } => commands::benchmark(&config, &out, jobs, seed.seed),
        Command::Report { dir, out } => commands::report(&dir, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
