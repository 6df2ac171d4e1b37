//! Problem file format (JSON, `format: 1`).
//!
//! ```json
//! {
//!   "format": 1,
//!   "partition": [1, 1],
//!   "problem": { "kind": "convex_program_qp", "p": [[2.0]], "q": [0.0], "a": [[-1.0]], "b": [1.0] },
//!   "schedule": { "kind": "jacobi" },
//!   "run": { "tol": 1e-8, "max_iter": 500 },
//!   "checks": { "run_h2": false, "seed": 7 }
//! }
//! ```
//!
//! Unknown fields are rejected. Matrices are row-major nested arrays, infinite
//! bounds are the strings `"inf"` / `"-inf"`, and block numbers are 1-based.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::blockspace::{BlockPartition, BlockVector};
use crate::engine::{RunConfig, TraceLevel};
use crate::monotone::{as_fixed_point_operator, Atom, MonotoneProblem, QuadraticData};
use crate::operators::{
    AffineAverage, FixedPointOperator, Identity, Scale, DEFAULT_SLACK, DEFAULT_TRIALS,
};
use crate::schedule::{Schedule, ScheduleKind};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecError {
    #[error("parse error at line {line}, column {column}: {message}")]
    ParseError {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema error at `{path}`: {message}")]
    SchemaError { path: String, message: String },
    #[error("consistency error between `{first}` and `{second}`: {message}")]
    ConsistencyError {
        first: String,
        second: String,
        message: String,
    },
}

fn schema(path: &str, message: impl Into<String>) -> SpecError {
    SpecError::SchemaError {
        path: path.into(),
        message: message.into(),
    }
}

fn consistency(first: &str, second: &str, message: impl Into<String>) -> SpecError {
    SpecError::ConsistencyError {
        first: first.into(),
        second: second.into(),
        message: message.into(),
    }
}

/// A real number that may be `"inf"` or `"-inf"` in the file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound(pub f64);

impl Serialize for Bound {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else if self.0 == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Bound {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct BoundVisitor;

        impl Visitor<'_> for BoundVisitor {
            type Value = Bound;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number, \"inf\" or \"-inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Bound, E> {
                Ok(Bound(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Bound, E> {
                Ok(Bound(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Bound, E> {
                Ok(Bound(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Bound, E> {
                match v {
                    "inf" => Ok(Bound(f64::INFINITY)),
                    "-inf" => Ok(Bound(f64::NEG_INFINITY)),
                    other => Err(E::invalid_value(de::Unexpected::Str(other), &self)),
                }
            }
        }

        d.deserialize_any(BoundVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "atom", rename_all = "snake_case", deny_unknown_fields)]
pub enum AtomSpec {
    Quadratic { a: f64, c: f64 },
    AbsoluteValue,
    BoxIndicator { lo: Bound, hi: Bound },
}

impl From<&AtomSpec> for Atom {
    fn from(a: &AtomSpec) -> Self {
        match *a {
            AtomSpec::Quadratic { a, c } => Atom::Quadratic { a, c },
            AtomSpec::AbsoluteValue => Atom::AbsoluteValue,
            AtomSpec::BoxIndicator { lo, hi } => Atom::BoxIndicator { lo: lo.0, hi: hi.0 },
        }
    }
}

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemDescriptor {
    Identity,
    Scale {
        k: f64,
    },
    AffineAverage {
        a: Vec<f64>,
    },
    Linear {
        m: Rows,
    },
    SeparableProx {
        atoms: Vec<AtomSpec>,
    },
    SaddleQuadratic {
        p: Rows,
        q: Vec<f64>,
        a: Rows,
        b: Vec<f64>,
        r: Rows,
    },
    ConvexProgramQp {
        p: Rows,
        q: Vec<f64>,
        a: Rows,
        b: Vec<f64>,
    },
    VariationalInequality {
        g: Rows,
        offset: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lower: Option<Vec<Bound>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        upper: Option<Vec<Bound>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Jacobi {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        horizon: Option<usize>,
    },
    GaussSeidel {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        horizon: Option<usize>,
    },
    PeriodicFull {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        horizon: Option<usize>,
        period: usize,
        /// 1-based update sets; defaults to a Gauss-Seidel sweep.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        base: Option<Vec<Vec<usize>>>,
    },
    Custom {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<usize>,
        /// 1-based update sets, one row per step.
        update_sets: Vec<Vec<usize>>,
        /// `s_i(p)` rows; omitted means synchronous.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        delays: Option<Vec<Vec<usize>>>,
    },
}

impl ScheduleSpec {
    fn alpha(&self) -> Option<usize> {
        match self {
            ScheduleSpec::Jacobi { alpha, .. }
            | ScheduleSpec::GaussSeidel { alpha, .. }
            | ScheduleSpec::PeriodicFull { alpha, .. }
            | ScheduleSpec::Custom { alpha, .. } => *alpha,
        }
    }

    fn horizon(&self) -> Option<usize> {
        match self {
            ScheduleSpec::Jacobi { horizon, .. }
            | ScheduleSpec::GaussSeidel { horizon, .. }
            | ScheduleSpec::PeriodicFull { horizon, .. } => *horizon,
            ScheduleSpec::Custom { update_sets, .. } => Some(update_sets.len()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceLevelSpec {
    None,
    Residuals,
    Full,
}

fn default_tol() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    1000
}
fn default_workers() -> usize {
    1
}
fn default_trace() -> TraceLevelSpec {
    TraceLevelSpec::Residuals
}
fn default_true() -> bool {
    true
}
fn default_trials() -> usize {
    DEFAULT_TRIALS
}
fn default_slack() -> f64 {
    DEFAULT_SLACK
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_trace")]
    pub trace_level: TraceLevelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_point: Option<Vec<f64>>,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            max_iter: default_max_iter(),
            workers: default_workers(),
            trace_level: default_trace(),
            reference_point: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksSpec {
    #[serde(default = "default_true")]
    pub run_h2: bool,
    #[serde(default = "default_true")]
    pub run_h3: bool,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_slack")]
    pub slack: f64,
}

impl Default for ChecksSpec {
    fn default() -> Self {
        Self {
            run_h2: true,
            run_h3: true,
            trials: DEFAULT_TRIALS,
            seed: 0,
            slack: DEFAULT_SLACK,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub format: u32,
    pub partition: Vec<usize>,
    pub problem: ProblemDescriptor,
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub run: RunSpec,
    #[serde(default)]
    pub checks: ChecksSpec,
    /// Starting point; zeros when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

/// A problem file that passed every schema and cross-dimension check.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    file: ProblemFile,
}

pub fn parse_problem(text: &str) -> Result<ProblemSpec, SpecError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| SpecError::ParseError {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
    let file: ProblemFile = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        schema(&path, e.into_inner().to_string())
    })?;
    ProblemSpec::new(file)
}

/// Pretty JSON that `parse_problem` reads back to an equal spec.
pub fn render(spec: &ProblemSpec) -> String {
    serde_json::to_string_pretty(&spec.file).expect("problem file serializes")
}

fn matrix(rows: &Rows, path: &str) -> Result<DMatrix<f64>, SpecError> {
    let ncols = rows.first().map_or(0, |r| r.len());
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(schema(
            &format!("{path}[{i}]"),
            format!("row length differs from {ncols}"),
        ));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.iter().flat_map(|r| r.iter().copied()),
    ))
}

impl ProblemDescriptor {
    pub fn kind(&self) -> &'static str {
        match self {
            ProblemDescriptor::Identity => "identity",
            ProblemDescriptor::Scale { .. } => "scale",
            ProblemDescriptor::AffineAverage { .. } => "affine_average",
            ProblemDescriptor::Linear { .. } => "linear",
            ProblemDescriptor::SeparableProx { .. } => "separable_prox",
            ProblemDescriptor::SaddleQuadratic { .. } => "saddle_quadratic",
            ProblemDescriptor::ConvexProgramQp { .. } => "convex_program_qp",
            ProblemDescriptor::VariationalInequality { .. } => "variational_inequality",
        }
    }

    /// Catalog problem for the monotone families, `None` for built-ins.
    pub fn monotone_problem(&self) -> Result<Option<MonotoneProblem>, SpecError> {
        let built = match self {
            ProblemDescriptor::Identity
            | ProblemDescriptor::Scale { .. }
            | ProblemDescriptor::AffineAverage { .. } => return Ok(None),
            ProblemDescriptor::Linear { m } => MonotoneProblem::linear(matrix(m, "problem.m")?),
            ProblemDescriptor::SeparableProx { atoms } => {
                MonotoneProblem::separable_prox(atoms.iter().map(Atom::from).collect())
            }
            ProblemDescriptor::SaddleQuadratic { p, q, a, b, r } => {
                MonotoneProblem::saddle_quadratic(quadratic(p, q, a, b)?, matrix(r, "problem.r")?)
            }
            ProblemDescriptor::ConvexProgramQp { p, q, a, b } => {
                MonotoneProblem::convex_program_qp(quadratic(p, q, a, b)?)
            }
            ProblemDescriptor::VariationalInequality {
                g,
                offset,
                lower,
                upper,
            } => {
                let n = offset.len();
                let lo = lower.as_ref().map_or(vec![f64::NEG_INFINITY; n], |v| {
                    v.iter().map(|b| b.0).collect()
                });
                let hi = upper
                    .as_ref()
                    .map_or(vec![f64::INFINITY; n], |v| v.iter().map(|b| b.0).collect());
                MonotoneProblem::variational_inequality(
                    matrix(g, "problem.g")?,
                    DVector::from_column_slice(offset),
                    lo,
                    hi,
                )
            }
        };
        built
            .map(Some)
            .map_err(|e| schema("problem", e.to_string()))
    }

    /// Dimension the operator acts on, if determined by the descriptor.
    fn dimension(&self) -> Result<Option<usize>, SpecError> {
        Ok(match self {
            ProblemDescriptor::Identity | ProblemDescriptor::Scale { .. } => None,
            ProblemDescriptor::AffineAverage { a } => Some(a.len()),
            _ => self.monotone_problem()?.map(|p| p.dimension()),
        })
    }
}

fn quadratic(p: &Rows, q: &[f64], a: &Rows, b: &[f64]) -> Result<QuadraticData, SpecError> {
    let p = matrix(p, "problem.p")?;
    let mut a = matrix(a, "problem.a")?;
    if a.nrows() == 0 {
        a = DMatrix::zeros(0, p.ncols());
    }
    Ok(QuadraticData {
        p,
        q: DVector::from_column_slice(q),
        a,
        b: DVector::from_column_slice(b),
    })
}

fn to_zero_based(
    sets: &[Vec<usize>],
    alpha: usize,
    path: &str,
) -> Result<Vec<Vec<usize>>, SpecError> {
    sets.iter()
        .enumerate()
        .map(|(p, set)| {
            if set.is_empty() {
                return Err(schema(
                    &format!("{path}[{p}]"),
                    "update set must be non-empty",
                ));
            }
            set.iter()
                .map(|&b| {
                    if (1..=alpha).contains(&b) {
                        Ok(b - 1)
                    } else {
                        Err(consistency(
                            &format!("{path}[{p}]"),
                            "partition",
                            format!("block {b} outside 1..={alpha}"),
                        ))
                    }
                })
                .collect()
        })
        .collect()
}

impl ProblemSpec {
    fn new(file: ProblemFile) -> Result<Self, SpecError> {
        if file.format != FORMAT_VERSION {
            return Err(schema(
                "format",
                format!(
                    "unsupported format {}, expected {FORMAT_VERSION}",
                    file.format
                ),
            ));
        }
        let partition =
            BlockPartition::new(&file.partition).map_err(|e| schema("partition", e.to_string()))?;
        let n = partition.total();
        let alpha = partition.alpha();

        if let Some(a) = file.schedule.alpha() {
            if a != alpha {
                return Err(consistency(
                    "schedule.alpha",
                    "partition",
                    format!("schedule has {a} blocks, partition has {alpha}"),
                ));
            }
        }
        if let Some(dim) = file.problem.dimension()? {
            if dim != n {
                return Err(consistency(
                    "problem",
                    "partition",
                    format!(
                        "{} problem has dimension {dim}, partition covers {n}",
                        file.problem.kind()
                    ),
                ));
            }
        }
        for (name, v) in [
            ("x0", &file.x0),
            ("run.reference_point", &file.run.reference_point),
        ] {
            if let Some(v) = v {
                if v.len() != n {
                    return Err(consistency(
                        name,
                        "partition",
                        format!("length {} but partition covers {n}", v.len()),
                    ));
                }
            }
        }
        let run = &file.run;
        if !(run.tol > 0.0) {
            return Err(schema("run.tol", "must be > 0"));
        }
        if run.max_iter < 1 {
            return Err(schema("run.max_iter", "must be >= 1"));
        }
        if run.workers < 1 {
            return Err(schema("run.workers", "must be >= 1"));
        }
        if file.checks.trials < 1 {
            return Err(schema("checks.trials", "must be >= 1"));
        }
        if !(file.checks.slack >= 0.0) {
            return Err(schema("checks.slack", "must be >= 0"));
        }
        match &file.schedule {
            ScheduleSpec::PeriodicFull { period, base, .. } => {
                if *period < 1 {
                    return Err(schema("schedule.period", "must be >= 1"));
                }
                if let Some(b) = base {
                    if b.is_empty() {
                        return Err(schema("schedule.base", "must be non-empty"));
                    }
                    to_zero_based(b, alpha, "schedule.base")?;
                }
            }
            ScheduleSpec::Custom {
                update_sets,
                delays,
                ..
            } => {
                if update_sets.is_empty() {
                    return Err(schema("schedule.update_sets", "must be non-empty"));
                }
                to_zero_based(update_sets, alpha, "schedule.update_sets")?;
                if let Some(d) = delays {
                    if d.len() != update_sets.len() {
                        return Err(consistency(
                            "schedule.delays",
                            "schedule.update_sets",
                            format!("{} rows vs {}", d.len(), update_sets.len()),
                        ));
                    }
                    if let Some(p) = d.iter().position(|row| row.len() != alpha) {
                        return Err(consistency(
                            &format!("schedule.delays[{p}]"),
                            "partition",
                            format!("row needs {alpha} entries"),
                        ));
                    }
                }
            }
            _ => {}
        }
        if let Some(0) = file.schedule.horizon() {
            return Err(schema("schedule.horizon", "must be >= 1"));
        }
        Ok(Self { file })
    }

    pub fn file(&self) -> &ProblemFile {
        &self.file
    }

    pub fn partition(&self) -> BlockPartition {
        BlockPartition::new(&self.file.partition).expect("validated partition")
    }

    pub fn build_operator(&self) -> Result<Box<dyn FixedPointOperator>, SpecError> {
        let p = self.partition();
        Ok(match &self.file.problem {
            ProblemDescriptor::Identity => Box::new(Identity::new(p)),
            ProblemDescriptor::Scale { k } => Box::new(Scale::new(p, *k)),
            ProblemDescriptor::AffineAverage { a } => Box::new(
                AffineAverage::new(p, a.clone())
                    .map_err(|e| consistency("problem.a", "partition", e.to_string()))?,
            ),
            other => {
                let prob = other.monotone_problem()?.expect("catalog family");
                Box::new(
                    as_fixed_point_operator(prob, p)
                        .map_err(|e| consistency("problem", "partition", e.to_string()))?,
                )
            }
        })
    }

    /// Horizon defaults to `run.max_iter`.
    pub fn build_schedule(&self) -> Result<Schedule, SpecError> {
        self.build_schedule_with_default_horizon(self.file.run.max_iter)
    }

    /// Uses `default_horizon` when the file does not fix one.
    pub fn build_schedule_with_default_horizon(
        &self,
        default_horizon: usize,
    ) -> Result<Schedule, SpecError> {
        let alpha = self.file.partition.len();
        let horizon = self.file.schedule.horizon().unwrap_or(default_horizon);
        let kind = match &self.file.schedule {
            ScheduleSpec::Jacobi { .. } => ScheduleKind::Jacobi,
            ScheduleSpec::GaussSeidel { .. } => ScheduleKind::GaussSeidel,
            ScheduleSpec::PeriodicFull { period, base, .. } => ScheduleKind::PeriodicFull {
                period: *period,
                base: match base {
                    Some(b) => to_zero_based(b, alpha, "schedule.base")?,
                    None => (0..alpha).map(|i| vec![i]).collect(),
                },
            },
            ScheduleSpec::Custom {
                update_sets,
                delays,
                ..
            } => ScheduleKind::Custom {
                update_sets: to_zero_based(update_sets, alpha, "schedule.update_sets")?,
                delays: delays.clone(),
            },
        };
        Schedule::build(&kind, alpha, horizon).map_err(|e| schema("schedule", e.to_string()))
    }

    /// True when the run should use the dedicated Jacobi driver.
    pub fn is_plain_jacobi(&self) -> bool {
        matches!(
            self.file.schedule,
            ScheduleSpec::Jacobi { horizon: None, .. }
        )
    }

    pub fn run_config(&self) -> RunConfig {
        let run = &self.file.run;
        let p = self.partition();
        RunConfig {
            tol: run.tol,
            max_iter: run.max_iter,
            workers: run.workers,
            trace_level: match run.trace_level {
                TraceLevelSpec::None => TraceLevel::None,
                TraceLevelSpec::Residuals => TraceLevel::Residuals,
                TraceLevelSpec::Full => TraceLevel::Full,
            },
            reference_point: run
                .reference_point
                .as_ref()
                .map(|u| BlockVector::new(p, u.clone()).expect("validated length")),
        }
    }

    pub fn x0(&self) -> BlockVector {
        let p = self.partition();
        match &self.file.x0 {
            Some(v) => BlockVector::new(p, v.clone()).expect("validated length"),
            None => BlockVector::zeros(&p),
        }
    }
}
