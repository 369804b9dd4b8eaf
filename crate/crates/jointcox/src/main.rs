use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use jointcox::commands::{self, DataSource, Method};
use jointcox::error::exit;
use jointcox::io::read_json;
use jointcox::jointcox_core::{FitConfig, SimConfig};
use jointcox::study::StudyConfig;
use jointcox::{CliError, Result};

/// NPML for the Cox model with a missing time-dependent covariate.
///
/// Set RUST_LOG (e.g. RUST_LOG=info) for progress output.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Npml,
    Lvcf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a dataset from the joint model.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a dataset with the NPML estimator or the LVCF partial-likelihood comparator.
    Fit {
        /// dataset.json, or subjects.csv together with --measurements, --grid-step and --tau
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "npml")]
        method: MethodArg,
        /// FitConfig JSON; defaults apply to missing fields
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the posterior atoms at the estimate
        #[arg(long)]
        dump_atoms: bool,
        #[arg(long, requires_all = ["grid_step", "tau"])]
        measurements: Option<PathBuf>,
        #[arg(long)]
        grid_step: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Run a Monte Carlo study.
    McStudy {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to output_dir from the config
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two study reports side by side.
    Compare {
        #[arg(long, num_args = 2, value_names = ["A", "B"])]
        report: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out } => {
            let config: SimConfig = read_json(&config)?;
            let manifest = commands::simulate(&config, &out)?;
            println!("wrote {} subjects to {}", manifest.n, out.display());
        }
        Command::Fit {
            data,
            method,
            config,
            out,
            dump_atoms,
            measurements,
            grid_step,
            tau,
        } => {
            let source = match measurements {
                Some(m) => DataSource::Csv {
                    subjects: data,
                    measurements: m,
                    grid_step: grid_step.expect("required by clap"),
                    tau: tau.expect("required by clap"),
                },
                None if data.extension().is_some_and(|e| e == "csv") => {
                    return Err(CliError::Usage(
                        "CSV input needs --measurements, --grid-step and --tau".into(),
                    ))
                }
                None => DataSource::Json(data),
            };
            let config: FitConfig = match config {
                Some(p) => read_json(&p)?,
                None => FitConfig::default(),
            };
            let method = match method {
                MethodArg::Npml => Method::Npml,
                MethodArg::Lvcf => Method::Lvcf,
            };
            let fit = commands::fit(&source, method, &config, &out, dump_atoms)?;
            println!(
                "{}: beta = {} after {} iterations (score norm {:e})",
                fit.method, fit.beta, fit.iterations, fit.score_norm
            );
        }
        Command::McStudy { config, out } => {
            let config: StudyConfig = read_json(&config)?;
            let out = out
                .or_else(|| config.output_dir.as_ref().map(PathBuf::from))
                .ok_or_else(|| CliError::Usage("no output directory (--out)".into()))?;
            let report = commands::mc_study(&config, &out)?;
            println!(
                "study {} finished in {:.1}s; reports in {}",
                &report.config_hash[..12],
                report.wall_time_seconds,
                out.display()
            );
        }
        Command::Compare { report } => {
            print!("{}", commands::compare_reports(&report[0], &report[1])?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
