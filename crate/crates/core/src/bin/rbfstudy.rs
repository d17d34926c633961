use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rbf_core::bounds::{gorny_campaign, FitModel};
use rbf_core::study::{fit_rows, read_rows_csv, run_study, StudyConfig, BASE_ALPHA};

/// Fill-distance refinement studies for RBF interpolation.
#[derive(Parser)]
#[command(name = "rbfstudy", version)]
struct Cli {
    /// Print condition estimates and per-level progress to stderr.
    #[arg(long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a study and write the rows CSV and summary JSON.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a decay model to a rows CSV and print the fit report.
    Fit {
        #[arg(long)]
        rows: PathBuf,
        #[arg(long)]
        model: FitModel,
        /// Multi-index label to fit ("0" for the function error).
        #[arg(long, default_value = BASE_ALPHA)]
        alpha: String,
    },
    /// Check Gorny's inequality on random univariate functions.
    Gorny {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: &Cli) -> rbf_core::Result<u8> {
    match &cli.command {
        Command::Run { config, out } => {
            let config = StudyConfig::load(config)?;
            let result = run_study(&config)?;
            if cli.verbose {
                for level in &result.summary.levels {
                    let cond = level.cond_estimate.map_or_else(|| "-".into(), |c| format!("{c:.3e}"));
                    match &level.failure {
                        Some(why) => eprintln!("level {} d={} N={} cond={cond} FAILED: {why}", level.level, level.d, level.n),
                        None => eprintln!("level {} d={} N={} cond={cond}", level.level, level.d, level.n),
                    }
                }
            }
            let (rows, summary) = result.write_outputs(out, &config.outputs)?;
            println!("{}", rows.display());
            println!("{}", summary.display());
            Ok(result.exit_code() as u8)
        }
        Command::Fit { rows, model, alpha } => {
            let rows = read_rows_csv(std::fs::File::open(rows)?)?;
            let report = fit_rows(&rows, *model, alpha)?;
            println!("{}", report.to_json()?);
            Ok(0)
        }
        Command::Gorny { trials, seed } => {
            let report = gorny_campaign(*trials, *seed)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(if report.violations == 0 { 0 } else { 3 })
        }
    }
}
