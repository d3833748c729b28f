use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use folio_cli::{CliError, CliResult, RunConfig, SynthArgs};
use folio_core::SynthModel;

#[derive(Parser)]
#[command(name = "folio", version, about = "Per-asset deep Q-learning portfolio pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic market (prices.csv, caps.csv) to --out.
    Synth(SynthFlags),
    /// Train the three-member ensemble and write checkpoints.
    Train(RunFlags),
    /// Backtest every cost level, portfolio and strategy on the test period.
    Backtest(RunFlags),
    /// Verify a finished run and print its results table and phase returns.
    Report(ReportFlags),
}

#[derive(Args)]
struct RunFlags {
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportFlags {
    /// Run config; its output directory is reported unless --out is given.
    #[arg(long, required_unless_present = "out")]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthFlags {
    #[arg(long, default_value = "sign_follow")]
    model: SynthModel,
    #[arg(long, default_value_t = 4)]
    assets: usize,
    #[arg(long, default_value_t = 600)]
    days: usize,
    #[arg(long, default_value_t = 0.0)]
    drift: f64,
    #[arg(long, default_value_t = 0.01)]
    volatility: f64,
    /// Mean next-day return magnitude of the sign_follow model.
    #[arg(long, default_value_t = 0.01)]
    signal: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value = "2010-01-04")]
    start: NaiveDate,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "data")]
    out: PathBuf,
}

fn load(flags: &RunFlags) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(&flags.config)?;
    if let Some(seed) = flags.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &flags.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(f) => {
            let paths = folio_cli::synth(&SynthArgs {
                model: f.model,
                assets: f.assets,
                days: f.days,
                drift: f.drift,
                volatility: f.volatility,
                signal: f.signal,
                noise: f.noise,
                start: f.start,
                seed: f.seed,
                out: f.out,
            })?;
            for p in paths {
                println!("{}", p.display());
            }
        }
        Command::Train(f) => {
            let cfg = load(&f)?;
            for (k, m) in folio_cli::train(&cfg)?.iter().enumerate() {
                println!(
                    "agent {} (seed {}): best validation return {:.4} at iteration {}",
                    k + 1,
                    m.seed,
                    m.validation_score,
                    m.iteration
                );
            }
            println!("wrote {}", cfg.out_dir.display());
        }
        Command::Backtest(f) => {
            let cfg = load(&f)?;
            let table = folio_cli::backtest(&cfg)?;
            print!("{}", table.to_text());
            println!("wrote {}", cfg.out_dir.display());
        }
        Command::Report(f) => {
            let dir = match (f.out, f.config) {
                (Some(out), _) => out,
                (None, Some(config)) => RunConfig::load(&config)?.out_dir,
                (None, None) => return Err(CliError::Config("need --config or --out".into())),
            };
            print!("{}", folio_cli::report(&dir)?.text);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("folio: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
