//! Command-line front end.
//!
//! Exit codes: 0 converged / checks passed, 1 input error, 2 run stopped
//! without converging, 3 hypothesis checks failed.

mod file;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::engine::{run_general, run_jacobi, write_trace_csv, RunResult, RunStatus};
use crate::operators::{check_h2, check_h3, CheckReport, FixedPointOperator, UniformPairSampler};
use crate::schedule::validate_schedule;

pub use file::{
    parse_problem, render, AtomSpec, Bound, ChecksSpec, ProblemDescriptor, ProblemFile,
    ProblemSpec, RunSpec, ScheduleSpec, SpecError, TraceLevelSpec, FORMAT_VERSION,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT_ERROR: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_CHECKS_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "blockprox",
    version,
    about = "Block-parallel fixed-point and proximal-point solver"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the iteration and print a JSON summary.
    Run {
        file: PathBuf,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long = "max-iter")]
        max_iter: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        /// Write the per-iteration trace CSV here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Seed for the hypothesis checks.
        #[arg(long)]
        seed: Option<u64>,
        /// Skip checking the operator's claimed hypotheses.
        #[arg(long)]
        no_checks: bool,
    },
    /// Run the h2/h3 checks and print the reports.
    Check {
        file: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Validate the file's schedule over its horizon.
    ValidateSchedule {
        file: PathBuf,
        /// Window length; defaults to the number of blocks.
        #[arg(long)]
        window: Option<usize>,
    },
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub status: RunStatus,
    pub iterations: usize,
    pub final_point: Vec<f64>,
    pub residual_max: f64,
    pub warnings: Vec<String>,
}

impl Summary {
    pub fn new(result: &RunResult, extra: Vec<String>) -> Self {
        let mut warnings: Vec<String> = result.warnings.iter().map(|w| w.to_string()).collect();
        warnings.extend(extra);
        if let Some(f) = &result.failure {
            warnings.push(format!("operator failure: {f}"));
        }
        Self {
            status: result.status,
            iterations: result.iterations,
            final_point: result.final_point.as_slice().to_vec(),
            residual_max: result.final_residual,
            warnings,
        }
    }
}

#[derive(Debug, Serialize)]
struct CheckOutput {
    passed: bool,
    reports: Vec<CheckReport>,
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run_cli<I, T, O, E>(args: I, out: &mut O, err: &mut E) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
    O: Write,
    E: Write,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_INPUT_ERROR
            } else {
                EXIT_OK
            };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_INPUT_ERROR
        }
    }
}

fn load(path: &Path) -> Result<ProblemSpec, String> {
    let text =
        fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    parse_problem(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn run_checks(
    f: &dyn FixedPointOperator,
    h2: bool,
    h3: bool,
    trials: usize,
    seed: u64,
    slack: f64,
) -> Result<Vec<CheckReport>, String> {
    let mut reports = Vec::new();
    if h2 {
        let mut s = UniformPairSampler::new(seed);
        reports.push(check_h2(f, &mut s, trials, slack).map_err(|e| e.to_string())?);
    }
    if h3 {
        let mut s = UniformPairSampler::new(seed);
        reports.push(check_h3(f, &mut s, trials, slack).map_err(|e| e.to_string())?);
    }
    Ok(reports)
}

fn print_json<O: Write, T: Serialize>(out: &mut O, v: &T, pretty: bool) -> Result<(), String> {
    let text = if pretty {
        serde_json::to_string_pretty(v)
    } else {
        serde_json::to_string(v)
    }
    .map_err(|e| e.to_string())?;
    writeln!(out, "{text}").map_err(|e| e.to_string())
}

fn dispatch<O: Write, E: Write>(cmd: Command, out: &mut O, err: &mut E) -> Result<i32, String> {
    match cmd {
        Command::Run {
            file,
            tol,
            max_iter,
            workers,
            trace,
            seed,
            no_checks,
        } => {
            let spec = load(&file)?;
            let mut cfg = spec.run_config();
            if let Some(t) = tol {
                if !(t > 0.0) {
                    return Err("--tol must be > 0".into());
                }
                cfg.tol = t;
            }
            if let Some(m) = max_iter {
                cfg.max_iter = m;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let checks = &spec.file().checks;
            let op = spec.build_operator().map_err(|e| e.to_string())?;

            let mut extra = Vec::new();
            if !no_checks {
                let claims = op.claims();
                let seed = seed.unwrap_or(checks.seed);
                let reports = run_checks(
                    op.as_ref(),
                    claims.h2 && checks.run_h2,
                    claims.h3 && checks.run_h3,
                    checks.trials,
                    seed,
                    checks.slack,
                );
                match reports {
                    Ok(reports) => {
                        for r in reports.iter().filter(|r| !r.passed) {
                            extra.push(format!(
                                "claimed {} failed its check (worst violation {:e})",
                                r.hypothesis, r.worst_violation
                            ));
                        }
                    }
                    Err(e) => extra.push(format!("hypothesis check aborted: {e}")),
                }
            }

            let x0 = spec.x0();
            let result = if spec.is_plain_jacobi() {
                run_jacobi(op.as_ref(), &x0, &cfg)
            } else {
                let sched = spec
                    .build_schedule_with_default_horizon(cfg.max_iter)
                    .map_err(|e| e.to_string())?;
                run_general(op.as_ref(), &sched, &x0, &cfg)
            }
            .map_err(|e| e.to_string())?;

            if let Some(path) = trace {
                let f = fs::File::create(&path)
                    .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
                let mut w = BufWriter::new(f);
                write_trace_csv(&result, &mut w)
                    .and_then(|_| w.flush())
                    .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
            }
            for w in &result.warnings {
                let _ = writeln!(err, "warning: {w}");
            }
            print_json(out, &Summary::new(&result, extra), false)?;
            Ok(match result.status {
                RunStatus::Converged => EXIT_OK,
                _ => EXIT_NOT_CONVERGED,
            })
        }
        Command::Check { file, trials, seed } => {
            let spec = load(&file)?;
            let checks = &spec.file().checks;
            let trials = trials.unwrap_or(checks.trials);
            if trials < 1 {
                return Err("--trials must be >= 1".into());
            }
            let op = spec.build_operator().map_err(|e| e.to_string())?;
            let seed = seed.unwrap_or(checks.seed);
            match run_checks(
                op.as_ref(),
                checks.run_h2,
                checks.run_h3,
                trials,
                seed,
                checks.slack,
            ) {
                Ok(reports) => {
                    let passed = reports.iter().all(|r| r.passed);
                    print_json(out, &CheckOutput { passed, reports }, true)?;
                    Ok(if passed { EXIT_OK } else { EXIT_CHECKS_FAILED })
                }
                Err(e) => {
                    let _ = writeln!(err, "error: operator evaluation failed during checks: {e}");
                    Ok(EXIT_CHECKS_FAILED)
                }
            }
        }
        Command::ValidateSchedule { file, window } => {
            let spec = load(&file)?;
            let sched = spec.build_schedule().map_err(|e| e.to_string())?;
            let window = window.unwrap_or(sched.alpha());
            if window < 1 {
                return Err("--window must be >= 1".into());
            }
            print_json(out, &validate_schedule(&sched, window), true)?;
            Ok(EXIT_OK)
        }
    }
}
