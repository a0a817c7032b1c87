use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use covid_lstm::eval::SweepAxis;
use covid_lstm::CellKind;

mod commands;
mod config;

use config::{ConfigError, Overrides, RunConfig, THREADS_ENV};

#[derive(Parser, Debug)]
#[command(name = "covid-lstm", version, about = "Train and evaluate recurrent COVID-19 case-curve forecasters")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// First trial seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of trials (consecutive seeds).
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    iterations: Option<usize>,
    #[arg(long, global = true)]
    hidden: Option<usize>,
    #[arg(long, global = true)]
    layers: Option<usize>,
    /// lstm or rnn.
    #[arg(long, global = true)]
    cell: Option<CellKind>,
    /// Last observed day for `forecast` (YYYY-MM-DD).
    #[arg(long, global = true)]
    anchor_date: Option<NaiveDate>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model per trial seed; writes checkpoints and loss curves.
    Train,
    /// Score checkpoints on the validation regions; writes trial CSVs, plots and RMSE.
    Validate {
        /// Checkpoint files; defaults to `<out>/checkpoints/seed_<seed>.ckpt` per seed.
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
    },
    /// Architecture sweep over hidden size, depth or cell kind.
    Sweep {
        #[arg(value_parser = ["hidden", "layers", "cell"])]
        axis: String,
    },
    /// Continue predictions past the anchor date from the observed totals.
    Forecast {
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients on small networks.
    Gradcheck,
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .map_err(|_| ConfigError(format!("{THREADS_ENV}={value} is not a thread count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the thread pool")?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    init_threads()?;
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.apply(&Overrides {
        seed: cli.seed,
        trials: cli.trials,
        out: cli.out,
        iterations: cli.iterations,
        hidden: cli.hidden,
        layers: cli.layers,
        cell: cli.cell,
        anchor_date: cli.anchor_date,
    });
    if let Command::Gradcheck = cli.command {
        let trials = cli.trials.unwrap_or(10);
        return Ok(if commands::gradcheck(trials)? {
            ExitCode::SUCCESS
        } else {
            ExitCode::from(1)
        });
    }
    cfg.validate()?;
    match cli.command {
        Command::Train => commands::train(&cfg)?,
        Command::Validate { checkpoints } => {
            commands::validate(&cfg, &checkpoints)?;
        }
        Command::Sweep { axis } => commands::sweep(&cfg, axis.parse::<SweepAxis>()?)?,
        Command::Forecast { checkpoints } => commands::forecast(&cfg, &checkpoints)?,
        Command::Gradcheck => unreachable!(),
    }
    Ok(ExitCode::SUCCESS)
}

/// 2 for configuration and input-data problems, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    use covid_lstm::Error as E;
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Argument(_)
                | E::Schema { .. }
                | E::Format { .. }
                | E::Data { .. }
                | E::Region { .. }
                | E::Checkpoint(_)
                | E::Csv(_) => 2,
                E::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
