use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use blowup_lab::lab::series::Table;
use blowup_lab::lab::{compare_oracles, run_scenario, ConfigError, Overrides, ScenarioConfig};
use blowup_lab::rates::{fit_rates, RateModel};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUN: u8 = 3;

#[derive(Parser)]
#[command(name = "blowup-lab", version, about = "Blowup experiments for the damped Euler and Boussinesq stagnation-point systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Base grid size per axis for quadrature.
    #[arg(long)]
    grid_n: Option<usize>,
    /// Relative tolerance for the ODE and the quadrature.
    #[arg(long)]
    tol_rel: Option<f64>,
    /// Seed for the generic watch labels.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for all outputs.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            grid_n: self.grid_n,
            tol_rel: self.tol_rel,
            seed: self.seed,
            out_dir: self.out_dir.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run every alpha of a scenario and write the time series and summary.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Compare characteristic and spectral solutions up to a fraction of the blowup time.
    Compare {
        config: PathBuf,
        #[arg(long)]
        horizon: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Fit an asymptotic rate model to a time-series CSV.
    Rates {
        timeseries: PathBuf,
        #[arg(long, value_enum)]
        model: RateModel,
    },
}

fn load(path: &PathBuf, common: &Common) -> Result<ScenarioConfig, ConfigError> {
    let mut cfg = ScenarioConfig::load(path)?;
    cfg.apply(&common.overrides())?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, common } => {
            let cfg = match load(&config, &common) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            match run_scenario(&cfg) {
                Ok(summary) => {
                    print_json(&summary);
                    for r in summary.records.iter().filter(|r| r.error.is_some()) {
                        eprintln!("alpha {}: {}", r.alpha, r.error.as_deref().unwrap_or(""));
                    }
                    if summary.failed() {
                        ExitCode::from(EXIT_RUN)
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_CONFIG)
                }
            }
        }
        Command::Compare { config, horizon, common } => {
            let cfg = match load(&config, &common) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            match compare_oracles(&cfg, horizon) {
                Ok(report) => {
                    print_json(&report);
                    if let Some(p) = &cfg.outputs.summary_json {
                        let path = p.with_extension("compare.json");
                        if let Err(e) = report.write_json(&path) {
                            eprintln!("error: {}: {e}", path.display());
                            return ExitCode::from(EXIT_RUN);
                        }
                    }
                    if report.failed() {
                        ExitCode::from(EXIT_RUN)
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_CONFIG)
                }
            }
        }
        Command::Rates { timeseries, model } => {
            let table = match Table::read_csv(&timeseries) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            match table.rate_series().and_then(|s| fit_rates(&s, model)) {
                Ok(fit) => {
                    print_json(&fit);
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_RUN)
                }
            }
        }
    }
}
