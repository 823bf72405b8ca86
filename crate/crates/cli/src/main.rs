use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use logicq_cli::commands::{
    cmd_backtest, cmd_fit, cmd_ingest, cmd_report, cmd_sketch_check, write_report, Prepared,
    Strategy,
};
use logicq_cli::config::RunConfig;
use logicq_cli::error::CliError;

#[derive(Parser)]
#[command(
    name = "logicq",
    version,
    about = "Fit program sketches over frozen trading policies and backtest them"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the configured series, write normalized copies, print the split plan.
    Ingest {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "ingested")]
        out: PathBuf,
    },
    /// Fit sketch parameters on every rolling split.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "fit")]
        out: PathBuf,
    },
    /// Run a strategy on every test window and seed.
    Backtest {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "logicq")]
        strategy: Strategy,
        /// Output directory of `fit`; needed for `logicq` and toy policies.
        #[arg(long)]
        fit_dir: Option<PathBuf>,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
    },
    /// Compare run reports and export their curves.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, default_value = "comparison")]
        out: PathBuf,
    },
    /// Rule-file utilities.
    Sketch {
        #[command(subcommand)]
        command: SketchCommand,
    },
}

#[derive(Subcommand)]
enum SketchCommand {
    /// Parse and validate a rule file.
    Check { path: PathBuf },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest { config, out } => {
            print!("{}", cmd_ingest(&RunConfig::load(&config)?, &out)?);
        }
        Command::Fit { config, out } => {
            let prepared = Prepared::load(&config)?;
            for s in cmd_fit(&prepared, &out)? {
                println!(
                    "split {}: validation objective {:.6}",
                    s.index,
                    s.best_value.unwrap_or(f64::NAN)
                );
            }
            println!("parameters written under {}", out.display());
        }
        Command::Backtest {
            config,
            strategy,
            fit_dir,
            out,
        } => {
            let prepared = Prepared::load(&config)?;
            let report = cmd_backtest(&prepared, strategy, fit_dir.as_deref())?;
            let text = write_report(&report, &out)?;
            print!("{}", report.to_text());
            println!("report written to {} and {}", out.display(), text.display());
        }
        Command::Report { reports, out } => {
            print!("{}", cmd_report(&reports, &out)?.to_text());
            println!("tables and curves written under {}", out.display());
        }
        Command::Sketch {
            command: SketchCommand::Check { path },
        } => print!("{}", cmd_sketch_check(&path)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
