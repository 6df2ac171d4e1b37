//! Driver for the block iteration under a [`Schedule`].
//!
//! Each step reads a frozen composite point `z = (x_1^{s_1(p)}, ..., x_a^{s_a(p)})`,
//! evaluates `F_i(z)` for the blocks in `J(p)` (possibly on several workers)
//! and merges the results at a barrier. Blocks never read each other's
//! in-flight writes, so the trace does not depend on the worker count.
//!
//! Stopping rule: `||x^p - F(x^p)||_max <= tol`. On synchronous steps `F(x^p)`
//! is the update itself; delayed steps pay one extra evaluation for it.

use std::collections::VecDeque;
use std::fmt;
use std::io::{self, Write};

use rayon::prelude::*;
use rayon::ThreadPool;
use serde::Serialize;
use thiserror::Error;

use crate::blockspace::{max_distance, BlockError, BlockVector};
use crate::operators::{apply, FixedPointOperator, OperatorError};
use crate::schedule::{Schedule, ScheduleKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("schedule does not fit the operator: {0}")]
    ScheduleMismatch(String),
    #[error("illegal delay s_{block}({step}) = {delay} > {step}")]
    IllegalDelay {
        step: usize,
        block: usize,
        delay: usize,
    },
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Partition(#[from] BlockError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceLevel {
    None,
    #[default]
    Residuals,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub workers: usize,
    pub trace_level: TraceLevel,
    /// Known fixed point `u`; enables `distance_history`.
    pub reference_point: Option<BlockVector>,
}

impl RunConfig {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        Self {
            tol,
            max_iter,
            workers: 1,
            trace_level: TraceLevel::Residuals,
            reference_point: None,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn with_trace(mut self, level: TraceLevel) -> Self {
        self.trace_level = level;
        self
    }

    pub fn with_reference(mut self, u: BlockVector) -> Self {
        self.reference_point = Some(u);
        self
    }

    fn validate(&self) -> Result<(), EngineError> {
        if !(self.tol > 0.0) {
            return Err(EngineError::InvalidConfig(format!(
                "tol must be > 0, got {}",
                self.tol
            )));
        }
        if self.max_iter < 1 {
            return Err(EngineError::InvalidConfig("max_iter must be >= 1".into()));
        }
        if self.workers < 1 {
            return Err(EngineError::InvalidConfig("workers must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxIterations,
    ScheduleExhausted,
    OperatorFailure,
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunStatus::Converged => "converged",
            RunStatus::MaxIterations => "max_iterations",
            RunStatus::ScheduleExhausted => "schedule_exhausted",
            RunStatus::OperatorFailure => "operator_failure",
        })
    }
}

/// Non-fatal notes about hypotheses the run relies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunWarning {
    /// Operator does not claim max-norm nonexpansiveness (h2).
    MissingH2,
    /// Operator does not claim firm nonexpansiveness (h3).
    MissingH3,
    /// Schedule never updates all blocks at once (h0 fails).
    NoFullUpdate,
    /// Schedule has delays; no convergence guarantee applies.
    Asynchronous,
}

impl fmt::Display for RunWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunWarning::MissingH2 => {
                "hypothesis warning: operator does not claim h2 (max-norm nonexpansive)"
            }
            RunWarning::MissingH3 => {
                "hypothesis warning: operator does not claim h3 (firmly nonexpansive)"
            }
            RunWarning::NoFullUpdate => "hypothesis warning: schedule has no full-update step (h0)",
            RunWarning::Asynchronous => {
                "hypothesis warning: delayed schedule, convergence is not guaranteed"
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub status: RunStatus,
    /// Index `p` of the final iterate.
    pub iterations: usize,
    pub final_point: BlockVector,
    /// `||x^p - F(x^p)||_max` at the final iterate (NaN if it could not be
    /// evaluated).
    pub final_residual: f64,
    /// `||x^p - F(x^p)||_max` for `p = 0..=iterations`.
    pub residual_history: Vec<f64>,
    /// Euclidean counterpart of `residual_history`.
    pub residual_l2_history: Vec<f64>,
    /// `||x^p - u||_max` when a reference point was supplied.
    pub distance_history: Option<Vec<f64>>,
    /// Every iterate `x^0..x^iterations` at trace level `full`.
    pub trace: Option<Vec<BlockVector>>,
    pub warnings: Vec<RunWarning>,
    /// Error message for `operator_failure`.
    pub failure: Option<String>,
}

/// `||x - F(x)||_max`.
pub fn residual(f: &dyn FixedPointOperator, x: &BlockVector) -> Result<f64, OperatorError> {
    let fx = apply(f, x)?;
    Ok(max_distance(x, &fx)?)
}

enum Plan<'a> {
    Jacobi,
    Scheduled(&'a Schedule),
}

impl Plan<'_> {
    fn horizon(&self) -> Option<usize> {
        match self {
            Plan::Jacobi => None,
            Plan::Scheduled(s) => Some(s.horizon()),
        }
    }
}

struct Evaluator<'a> {
    f: &'a dyn FixedPointOperator,
    pool: Option<ThreadPool>,
}

impl<'a> Evaluator<'a> {
    fn new(f: &'a dyn FixedPointOperator, workers: usize) -> Result<Self, EngineError> {
        let pool = if workers > 1 && f.blockwise() {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| EngineError::InvalidConfig(e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Self { f, pool })
    }

    /// `F_i(z)` for each `i` in `blocks`, in order.
    fn blocks(&self, z: &BlockVector, blocks: &[usize]) -> Result<Vec<Vec<f64>>, OperatorError> {
        if self.f.blockwise() {
            match &self.pool {
                Some(pool) => pool.install(|| {
                    blocks
                        .par_iter()
                        .map(|&i| self.f.evaluate_block(i, z))
                        .collect()
                }),
                None => blocks
                    .iter()
                    .map(|&i| self.f.evaluate_block(i, z))
                    .collect(),
            }
        } else {
            let fz = apply(self.f, z)?;
            Ok(blocks.iter().map(|&i| fz.block(i).to_vec()).collect())
        }
    }

    fn full(&self, z: &BlockVector) -> Result<BlockVector, OperatorError> {
        if self.f.blockwise() {
            let all: Vec<usize> = (0..z.partition().alpha()).collect();
            let parts = self.blocks(z, &all)?;
            let mut out = BlockVector::zeros(z.partition());
            for (i, part) in parts.into_iter().enumerate() {
                out.block_mut(i).copy_from_slice(&part);
            }
            Ok(out)
        } else {
            apply(self.f, z)
        }
    }
}

fn non_finite(what: &str, p: usize) -> String {
    format!("non-finite value in {what} at iteration {p}")
}

fn drive(
    f: &dyn FixedPointOperator,
    plan: Plan<'_>,
    x0: &BlockVector,
    cfg: &RunConfig,
    warnings: Vec<RunWarning>,
) -> Result<RunResult, EngineError> {
    cfg.validate()?;
    let partition = f.partition();
    partition.ensure_same(x0.partition())?;
    if let Some(u) = &cfg.reference_point {
        partition.ensure_same(u.partition())?;
    }
    let alpha = partition.alpha();
    let mut lag = 0;
    if let Plan::Scheduled(s) = &plan {
        if s.alpha() != alpha {
            return Err(EngineError::ScheduleMismatch(format!(
                "schedule has {} blocks, operator has {alpha}",
                s.alpha()
            )));
        }
        for p in 0..s.horizon() {
            for i in 0..alpha {
                let d = s.delay(p, i);
                if d > p {
                    return Err(EngineError::IllegalDelay {
                        step: p,
                        block: i + 1,
                        delay: d,
                    });
                }
            }
        }
        lag = s.max_delay();
    }

    let eval = Evaluator::new(f, cfg.workers)?;
    let record = cfg.trace_level != TraceLevel::None;
    let mut residuals = Vec::new();
    let mut residuals_l2 = Vec::new();
    let mut distances = cfg.reference_point.as_ref().map(|_| Vec::new());
    let mut trace = (cfg.trace_level == TraceLevel::Full).then(Vec::new);
    // x^{p-lag}, ..., x^p
    let mut history: VecDeque<BlockVector> = VecDeque::with_capacity(lag + 1);
    let mut x = x0.clone();
    let mut p = 0usize;

    let finish =
        |status, p, x: BlockVector, res, failure, residuals, residuals_l2, distances, trace| {
            RunResult {
                status,
                iterations: p,
                final_point: x,
                final_residual: res,
                residual_history: residuals,
                residual_l2_history: residuals_l2,
                distance_history: distances,
                trace,
                warnings: warnings.clone(),
                failure,
            }
        };

    if !x.is_finite() {
        return Ok(finish(
            RunStatus::OperatorFailure,
            0,
            x,
            f64::NAN,
            Some(non_finite("x0", 0)),
            residuals,
            residuals_l2,
            distances,
            trace,
        ));
    }

    loop {
        let fx = match eval.full(&x) {
            Ok(v) if v.is_finite() => v,
            Ok(_) => {
                let msg = non_finite("F(x)", p);
                return Ok(finish(
                    RunStatus::OperatorFailure,
                    p,
                    x,
                    f64::NAN,
                    Some(msg),
                    residuals,
                    residuals_l2,
                    distances,
                    trace,
                ));
            }
            Err(e) => {
                return Ok(finish(
                    RunStatus::OperatorFailure,
                    p,
                    x,
                    f64::NAN,
                    Some(e.to_string()),
                    residuals,
                    residuals_l2,
                    distances,
                    trace,
                ));
            }
        };
        let diff = x.sub(&fx)?;
        let res = diff.norm_max();
        if record {
            residuals.push(res);
            residuals_l2.push(diff.norm_l2());
            if let (Some(d), Some(u)) = (distances.as_mut(), cfg.reference_point.as_ref()) {
                d.push(max_distance(&x, u)?);
            }
            if let Some(t) = trace.as_mut() {
                t.push(x.clone());
            }
        }

        let status = if res <= cfg.tol {
            Some(RunStatus::Converged)
        } else if p >= cfg.max_iter {
            Some(RunStatus::MaxIterations)
        } else if plan.horizon().is_some_and(|h| p >= h) {
            Some(RunStatus::ScheduleExhausted)
        } else {
            None
        };
        if let Some(status) = status {
            if !record {
                residuals.push(res);
                residuals_l2.push(diff.norm_l2());
            }
            return Ok(finish(
                status,
                p,
                x,
                res,
                None,
                residuals,
                residuals_l2,
                distances,
                trace,
            ));
        }

        let next = match &plan {
            Plan::Jacobi => fx,
            Plan::Scheduled(s) => {
                let set = s.update_set(p);
                let delayed = (0..alpha).any(|i| s.delay(p, i) != p);
                let mut next = x.clone();
                if !delayed {
                    for &i in set {
                        next.block_mut(i).copy_from_slice(fx.block(i));
                    }
                } else {
                    let mut z = BlockVector::zeros(partition);
                    for i in 0..alpha {
                        let src = &history[history.len() - 1 - (p - s.delay(p, i))];
                        z.block_mut(i).copy_from_slice(src.block(i));
                    }
                    let parts = match eval.blocks(&z, set) {
                        Ok(parts) => parts,
                        Err(e) => {
                            return Ok(finish(
                                RunStatus::OperatorFailure,
                                p,
                                x,
                                res,
                                Some(e.to_string()),
                                residuals,
                                residuals_l2,
                                distances,
                                trace,
                            ));
                        }
                    };
                    for (&i, part) in set.iter().zip(parts) {
                        next.block_mut(i).copy_from_slice(&part);
                    }
                }
                next
            }
        };
        if !next.is_finite() {
            let msg = non_finite("iterate", p + 1);
            return Ok(finish(
                RunStatus::OperatorFailure,
                p,
                x,
                res,
                Some(msg),
                residuals,
                residuals_l2,
                distances,
                trace,
            ));
        }
        if lag > 0 {
            if history.is_empty() {
                history.push_back(x.clone());
            }
            history.push_back(next.clone());
            while history.len() > lag + 1 {
                history.pop_front();
            }
        }
        x = next;
        p += 1;
    }
}

fn schedule_warnings(f: &dyn FixedPointOperator, sched: &Schedule) -> Vec<RunWarning> {
    let claims = f.claims();
    let mut w = Vec::new();
    if sched.is_jacobi() {
        if !claims.h3 {
            w.push(RunWarning::MissingH3);
        }
        return w;
    }
    if !claims.h2 {
        w.push(RunWarning::MissingH2);
    }
    if !claims.h3 {
        w.push(RunWarning::MissingH3);
    }
    if sched.full_update_steps().is_empty() {
        w.push(RunWarning::NoFullUpdate);
    }
    if !sched.is_synchronous() {
        w.push(RunWarning::Asynchronous);
    }
    w
}

/// The general iteration under an explicit schedule.
pub fn run_general(
    f: &dyn FixedPointOperator,
    sched: &Schedule,
    x0: &BlockVector,
    cfg: &RunConfig,
) -> Result<RunResult, EngineError> {
    drive(
        f,
        Plan::Scheduled(sched),
        x0,
        cfg,
        schedule_warnings(f, sched),
    )
}

/// Parallel Jacobi iteration `x^{p+1} = F(x^p)`; needs only h3.
pub fn run_jacobi(
    f: &dyn FixedPointOperator,
    x0: &BlockVector,
    cfg: &RunConfig,
) -> Result<RunResult, EngineError> {
    let warnings = if f.claims().h3 {
        Vec::new()
    } else {
        vec![RunWarning::MissingH3]
    };
    drive(f, Plan::Jacobi, x0, cfg, warnings)
}

/// Gauss-Seidel sweeps with a full update every `period` steps, so that
/// full-update steps recur by construction.
pub fn run_gauss_seidel_h0(
    f: &dyn FixedPointOperator,
    x0: &BlockVector,
    period: usize,
    cfg: &RunConfig,
) -> Result<RunResult, EngineError> {
    if period < 1 {
        return Err(EngineError::InvalidConfig("period must be >= 1".into()));
    }
    cfg.validate()?;
    let alpha = f.partition().alpha();
    let kind = ScheduleKind::PeriodicFull {
        period,
        base: (0..alpha).map(|i| vec![i]).collect(),
    };
    let sched = Schedule::build(&kind, alpha, cfg.max_iter)
        .map_err(|e| EngineError::ScheduleMismatch(e.to_string()))?;
    run_general(f, &sched, x0, cfg)
}

/// Writes `iter,residual_max,residual_l2,dist_to_ref` rows with 17
/// significant digits.
pub fn write_trace_csv<W: Write>(result: &RunResult, out: &mut W) -> io::Result<()> {
    writeln!(out, "iter,residual_max,residual_l2,dist_to_ref")?;
    for (p, (rm, r2)) in result
        .residual_history
        .iter()
        .zip(&result.residual_l2_history)
        .enumerate()
    {
        let dist = result
            .distance_history
            .as_ref()
            .and_then(|d| d.get(p))
            .map(|d| format!("{d:.16e}"))
            .unwrap_or_default();
        writeln!(out, "{p},{rm:.16e},{r2:.16e},{dist}")?;
    }
    Ok(())
}
