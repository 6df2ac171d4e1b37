//! Block-parallel fixed-point iteration and proximal-point solvers.
//!
//! The crate runs the general block iteration
//!
//! ```text
//! x_i^{p+1} = x_i^p                                   if i not in J(p)
//! x_i^{p+1} = F_i(x_1^{s_1(p)}, ..., x_a^{s_a(p)})    if i in J(p)
//! ```
//!
//! for an operator `F` on a block-partitioned `R^n`, and supplies a catalog of
//! maximal monotone operators `T` whose resolvents `F = (I + T)^{-1}` turn
//! zero-finding (minimization, saddle points, convex programs, variational
//! inequalities) into such fixed-point problems.
//!
//! * [`blockspace`]: partitions, block vectors, norms.
//! * [`schedule`]: update sets and delays, with finite-horizon validation.
//! * [`operators`]: the operator trait and hypothesis checkers.
//! * [`monotone`]: the resolvent catalog and brute-force oracles.
//! * [`engine`]: the iteration driver.
//! * [`cli`]: problem files and the command-line front end.

// `!(x > 0.0)` style guards reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blockspace;
pub mod cli;
pub mod engine;
pub mod monotone;
pub mod operators;
pub mod schedule;

pub use blockspace::{BlockPartition, BlockVector};
pub use engine::{run_gauss_seidel_h0, run_general, run_jacobi, RunConfig, RunResult, RunStatus};
pub use monotone::{as_fixed_point_operator, MonotoneProblem};
pub use operators::{Claims, FixedPointOperator};
pub use schedule::{Schedule, ScheduleKind};
