//! Command-line front end. Exit codes: 0 success or pass, 1 failed
//! verification or numerical failure, 2 usage or configuration error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::coeffs::Grid;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::harness::{
    counterexample_with, synthesize, verify_settling_with, verify_sharpness_with, ControlConfig, CounterexampleOptions,
    ScenarioConfig, VerificationReport,
};
use crate::mintime::{sample_on, times_report, titchmarsh_check_with};
use crate::output::{write_grid_fn_csv, Report};
use crate::simulator::{simulate, Control, Signal};

#[derive(Debug, Parser)]
#[command(
    name = "minctl",
    version,
    about = "Minimal control time and backstepping stabilization of 2x2 hyperbolic systems"
)]
struct Cli {
    /// Run every loop on the current thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Crossing times and the minimal control time of a scenario.
    Mintime { config: PathBuf },
    /// Solve the kernels; write kernels.csv, g.csv, f1.csv, f2.csv.
    Kernels { config: PathBuf },
    /// Simulate the configured control; write snapshot and series CSVs.
    Simulate { config: PathBuf },
    /// Closed-loop settling at the configured horizon under refinement.
    VerifySettling { config: PathBuf },
    /// Least-squares residual of the canonical system at horizon T.
    VerifySharpness {
        config: PathBuf,
        #[arg(long = "T", value_name = "T", allow_hyphen_values = true)]
        t: f64,
    },
    /// Growing mode under the reflection y1(t, 1) = k y2(t, 1).
    Counterexample {
        #[arg(long, allow_hyphen_values = true)]
        k: f64,
        #[arg(long, default_value_t = 800)]
        n: usize,
    },
    /// Convolution of two functions vanishing on given prefixes of (0, tau).
    Titchmarsh {
        #[arg(long)]
        prefix_a: f64,
        #[arg(long)]
        prefix_b: f64,
        #[arg(long)]
        tau: f64,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    match run(cli.command, exec) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Usage and input errors map to 2, numerical failures to 1.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Precondition(_)
        | Error::Domain(_)
        | Error::InvalidSpeeds(_)
        | Error::InvalidCoefficient(_)
        | Error::SpeedOrdering(_)
        | Error::GridMismatch { .. }
        | Error::Json(_) => 2,
        _ => 1,
    }
}

fn run(command: Command, exec: Exec) -> Result<bool> {
    match command {
        Command::Mintime { config } => {
            let cfg = ScenarioConfig::load(&config)?;
            let report = times_report(&cfg.system()?)?.to_report();
            print!("{}", report.to_table());
            println!("{}", report.to_json());
            Ok(true)
        }
        Command::Kernels { config } => {
            let cfg = ScenarioConfig::load(&config)?;
            let system = cfg.system()?;
            let grid = Grid::new(cfg.n)?;
            let syn = synthesize(&system, &cfg.k0, grid, &cfg.kernel_options(exec))?;
            let dir = cfg.run_dir();
            std::fs::create_dir_all(&dir)?;
            syn.kernels.write_csv(&dir.join("kernels.csv"))?;
            write_grid_fn_csv(&syn.g, &dir.join("g.csv"))?;
            write_grid_fn_csv(&syn.gains.f1, &dir.join("f1.csv"))?;
            write_grid_fn_csv(&syn.gains.f2, &dir.join("f2.csv"))?;
            let mut r = Report::new();
            r.text("scenario", cfg.id.clone())
                .int("n", cfg.n)
                .int("iterations", syn.kernels.iterations)
                .num("residual", syn.kernels.residual)
                .num("g_max", syn.g.max_abs())
                .num("f1_max", syn.gains.f1.max_abs())
                .num("f2_max", syn.gains.f2.max_abs())
                .text("output_dir", dir.display().to_string());
            emit(&r, &dir)?;
            Ok(true)
        }
        Command::Simulate { config } => {
            let cfg = ScenarioConfig::load(&config)?;
            let system = cfg.system()?;
            let grid = Grid::new(cfg.n)?;
            let control = match &cfg.control {
                ControlConfig::Feedback => {
                    Control::Feedback(synthesize(&system, &cfg.k0, grid, &cfg.kernel_options(exec))?.gains)
                }
                ControlConfig::Zero => Control::Open(Signal::Zero),
                ControlConfig::Samples { times, values } => {
                    Control::Open(Signal::samples(times.clone(), values.clone()).map_err(|e| Error::Config(e.to_string()))?)
                }
                ControlConfig::Reflection { k } => Control::Reflection(*k),
            };
            let y0 = cfg.initial.sample(grid)?;
            let sim = simulate(&system, &control, &y0, cfg.horizon, grid, &cfg.sim_options(exec))?;
            let dir = cfg.run_dir();
            sim.write_csv(&dir)?;
            let mut r = Report::new();
            r.text("scenario", cfg.id.clone())
                .int("n", cfg.n)
                .num("T", cfg.horizon)
                .num("dt", sim.meta.dt)
                .int("steps", sim.meta.steps)
                .num("cfl", sim.meta.cfl)
                .text("scheme", sim.meta.scheme)
                .num("l2_initial", y0.l2_norm())
                .num("l2_final", sim.final_state().l2_norm())
                .int("snapshots", sim.snapshots.len())
                .text("output_dir", dir.display().to_string());
            emit(&r, &dir)?;
            Ok(true)
        }
        Command::VerifySettling { config } => {
            let cfg = ScenarioConfig::load(&config)?;
            verification(verify_settling_with(&cfg, exec)?, Some(&cfg.run_dir()))
        }
        Command::VerifySharpness { config, t } => {
            let cfg = ScenarioConfig::load(&config)?;
            verification(verify_sharpness_with(&cfg, t, exec)?, Some(&cfg.run_dir()))
        }
        Command::Counterexample { k, n } => {
            if n < 2 {
                return Err(Error::Config(format!("n must be at least 2, got {n}")));
            }
            let opts = CounterexampleOptions {
                n,
                exec,
                ..Default::default()
            };
            verification(counterexample_with(k, &opts)?.report, None)
        }
        Command::Titchmarsh {
            prefix_a,
            prefix_b,
            tau,
            n,
            tol,
        } => {
            if n < 2 {
                return Err(Error::Config(format!("n must be at least 2, got {n}")));
            }
            let alpha = sample_on(tau, n, |t| if t <= prefix_a { 0.0 } else { 1.0 + t });
            let beta = sample_on(tau, n, |t| if t <= prefix_b { 0.0 } else { 1.0 + t });
            let check = titchmarsh_check_with(&alpha, &beta, tau, tol, exec)?;
            println!("{}", check.to_report().to_json());
            Ok(check.consistent)
        }
    }
}

fn emit(report: &Report, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    report.write(&dir.join("report.json"))?;
    println!("{}", report.to_json());
    Ok(())
}

fn verification(report: VerificationReport, dir: Option<&Path>) -> Result<bool> {
    let flat = report.to_report();
    match dir {
        Some(d) => emit(&flat, d)?,
        None => println!("{}", flat.to_json()),
    }
    Ok(report.pass)
}
