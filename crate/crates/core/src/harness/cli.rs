//! `dronesense` command line.
//!
//! ```text
//! dronesense list
//! dronesense run <scenario|config.toml> [--trials N] [--seed S] [--out DIR] [--workers W]
//! dronesense crlb <scenario|config.toml> [--out DIR]
//! dronesense verify
//! ```
//!
//! Exit status: 0 success, 1 usage error (bad flags, unknown scenario,
//! invalid config), 2 runtime failure.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use super::scenarios::{resolve, SCENARIOS};
use super::verify::run_checks;
use super::{analytic_report, emit_csv, run_experiment_with_workers, ExperimentSpec, HarnessError, MonteCarloReport};

#[derive(Debug, Parser)]
#[command(name = "dronesense", version, about = "Monte Carlo sweeps for multi-drone localisation and detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a registered scenario or an experiment config; one CSV per series.
    Run {
        /// Scenario name (see `list`) or path to a TOML config.
        config: String,
        /// Trials per sweep point.
        #[arg(long)]
        trials: Option<usize>,
        /// Base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Worker threads (default: all cores).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// List the registered scenarios.
    List,
    /// Check the closed-form expectations against quadrature and Monte Carlo.
    Verify,
    /// CRLB and rate predictions only, without simulation.
    Crlb {
        config: String,
        /// Also write `<series>_analytic.csv` files here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Accepted for symmetry with `run`; predictions do not depend on it.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::UnknownScenario { .. } | HarnessError::Invalid(_) | HarnessError::Config(_) => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn specs(config: &str, trials: Option<usize>, seed: Option<u64>) -> Result<Vec<ExperimentSpec>, HarnessError> {
    let mut specs = resolve(config)?;
    for s in &mut specs {
        if let Some(t) = trials {
            s.trials = t;
        }
        if let Some(b) = seed {
            s.base_seed = b;
        }
        s.validate()?;
    }
    Ok(specs)
}

fn fmt(x: f64) -> String {
    if x.is_nan() {
        "-".into()
    } else {
        format!("{x:.4}")
    }
}

fn print_report(report: &MonteCarloReport) {
    println!("{} ({} sweep, {})", report.name, report.sweep_variable, report.estimator);
    println!(
        "  {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>8} {:>8} {:>8} {:>8}",
        "value", "rmse_phi", "rmse_th", "rmse_fd", "crlb_phi", "crlb_th", "crlb_fd", "ser", "sdr", "sdr_1st", "sdr_2nd"
    );
    for r in report.rows() {
        println!(
            "  {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>8} {:>8} {:>8} {:>8}",
            fmt(r.sweep_value),
            fmt(r.rmse_phi_deg),
            fmt(r.rmse_theta_deg),
            fmt(r.rmse_fd_hz),
            fmt(r.crlb_phi_deg),
            fmt(r.crlb_theta_deg),
            fmt(r.crlb_fd_hz),
            fmt(r.ser),
            fmt(r.sdr_empirical),
            fmt(r.sdr_analytic_1st),
            fmt(r.sdr_analytic_2nd),
        );
    }
}

fn write(report: &MonteCarloReport, dir: &Path, stem: &str) -> Result<(), HarnessError> {
    let path = dir.join(format!("{stem}.csv"));
    emit_csv(report, &path)?;
    println!("  wrote {}", path.display());
    Ok(())
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::List => {
            for (name, about) in SCENARIOS {
                println!("{name}  {about}");
            }
        }
        Command::Run {
            config,
            trials,
            seed,
            out,
            workers,
        } => {
            let workers = workers.unwrap_or_else(rayon::current_num_threads);
            if workers == 0 {
                return Err(Failure::Usage("--workers must be at least 1".into()));
            }
            for spec in specs(&config, trials, seed)? {
                let report = run_experiment_with_workers(&spec, workers)?;
                print_report(&report);
                let wall: f64 = report.points.iter().map(|p| p.wall_time_s).sum();
                println!("  {} trials/point, {wall:.1} s", spec.trials);
                write(&report, &out, &spec.name)?;
            }
        }
        Command::Crlb { config, out, seed, trials } => {
            for spec in specs(&config, trials, seed)? {
                let report = analytic_report(&spec)?;
                print_report(&report);
                if let Some(dir) = &out {
                    write(&report, dir, &format!("{}_analytic", spec.name))?;
                }
            }
        }
        Command::Verify => {
            let checks = run_checks();
            let failed = checks.iter().filter(|c| !c.passed).count();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            println!("{} of {} checks passed", checks.len() - failed, checks.len());
            if failed > 0 {
                return Err(Failure::Runtime(format!("{failed} checks failed")));
            }
        }
    }
    Ok(())
}

/// Parses `argv` (including the program name) and runs the command.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            1
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            2
        }
    }
}
