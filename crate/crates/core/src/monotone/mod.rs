//! Maximal monotone operators with exactly computable resolvents
//! `F = (I + T)^{-1}`.
//!
//! Zeros of `T` are exactly the fixed points of `F`, and `F` is firmly
//! nonexpansive whenever `T` is monotone, so every problem here can be handed
//! to the Jacobi engine through [`as_fixed_point_operator`].
//!
//! Families:
//!
//! * `linear`: `T(x) = M x` with `<Mx, x> >= 0`.
//! * `separable_prox`: `T = df` for `f(x) = sum_i f_i(x_i)` built from
//!   quadratic, absolute-value and box-indicator atoms.
//! * `saddle_quadratic`: the saddle operator `T_L(x, y) = (grad_x L, -grad_y L)`
//!   of `L(x, y) = ½xᵀPx + qᵀx + yᵀ(Ax + b) - ½yᵀRy`.
//! * `convex_program_qp`: the Lagrangian `L(x, y) = f_0(x) + Σ y_i f_i(x)` of
//!   `min ½xᵀPx + qᵀx  s.t.  a_iᵀx + b_i <= 0`, with `y` restricted to the
//!   nonnegative orthant (the normal cone of `R₊^m` enters `T_L`).
//! * `variational_inequality`: `T(x) = G x + g + N_C(x)` with `C` a box.
//!
//! Normal cones follow `N_C(x) = {v : <v, x - z> >= 0 for all z in C}`.

mod split;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::blockspace::{BlockPartition, BlockVector};
use crate::operators::{Claims, FixedPointOperator, OperatorError};

use split::SplitForm;

/// Tolerance on the smallest eigenvalue of a symmetric part for it to count
/// as positive semidefinite.
pub const PSD_TOL: f64 = 1e-10;
/// Default cap on the number of box-constrained coordinates enumerated by the
/// active-set resolvents (up to `3^cap` patterns for two-sided boxes).
pub const DEFAULT_ENUMERATION_CAP: usize = 20;
/// Inner tolerance used when a resolvent falls back to the iterative solver.
pub const FALLBACK_TOL: f64 = 1e-12;
pub const FALLBACK_MAX_INNER: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MonotoneError {
    #[error("invalid atom: {0}")]
    InvalidAtom(String),
    #[error("{what} is not monotone (smallest eigenvalue of symmetric part {min_eigenvalue:e})")]
    NotMonotone {
        what: &'static str,
        min_eigenvalue: f64,
    },
    #[error("{0} must be symmetric")]
    NotSymmetric(&'static str),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("linear system is singular")]
    SingularSystem,
    #[error("no consistent active-set pattern (problem malformed or not monotone)")]
    NoConsistentPattern,
    #[error("{constrained} constrained coordinates exceed the enumeration cap {cap}")]
    DimensionTooLarge { constrained: usize, cap: usize },
    #[error("inner solver did not converge in {iterations} steps (last step {last_step:e})")]
    InnerSolverDiverged { iterations: usize, last_step: f64 },
    #[error("dual function is unbounded below at this multiplier")]
    DualUnbounded,
    #[error("invalid multiplier: {0}")]
    InvalidDual(String),
    #[error("grid argmin merit {merit:e} exceeds threshold {threshold:e}")]
    GridTooCoarse { merit: f64, threshold: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("operation needs a {expected} problem, got {found}")]
    WrongFamily {
        expected: &'static str,
        found: &'static str,
    },
    #[error("{0}")]
    Unsupported(String),
}

/// One coordinate of a separable convex function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Atom {
    /// `(a/2) (x - c)^2`, `a >= 0`.
    Quadratic { a: f64, c: f64 },
    /// `|x|`.
    AbsoluteValue,
    /// Indicator of `[lo, hi]`; bounds may be infinite.
    BoxIndicator { lo: f64, hi: f64 },
}

impl Atom {
    fn validate(&self) -> Result<(), MonotoneError> {
        match *self {
            Atom::Quadratic { a, c } if !(a >= 0.0 && a.is_finite() && c.is_finite()) => {
                Err(MonotoneError::InvalidAtom(format!(
                    "quadratic needs finite a >= 0, got a = {a}, c = {c}"
                )))
            }
            Atom::BoxIndicator { lo, hi } if lo.is_nan() || hi.is_nan() || lo > hi => {
                Err(MonotoneError::InvalidAtom(format!(
                    "box_indicator needs lo <= hi, got [{lo}, {hi}]"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Resolvent of the atom's subdifferential.
    pub fn prox(&self, z: f64) -> f64 {
        match *self {
            Atom::Quadratic { a, c } => (z + a * c) / (1.0 + a),
            Atom::AbsoluteValue => z.signum() * (z.abs() - 1.0).max(0.0),
            Atom::BoxIndicator { lo, hi } => z.max(lo).min(hi),
        }
    }
}

/// Primal/dual pair of the saddle families.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddlePoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl SaddlePoint {
    pub fn concat(&self) -> Vec<f64> {
        self.x.iter().chain(&self.y).copied().collect()
    }
}

/// Quadratic-affine data shared by the saddle and convex-program families.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticData {
    /// `P` (n×n, symmetric PSD).
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    /// Constraint rows `a_iᵀ` (m×n).
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl QuadraticData {
    pub fn n(&self) -> usize {
        self.p.nrows()
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    /// `f_0(x) = ½xᵀPx + qᵀx`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        0.5 * xv.dot(&(&self.p * &xv)) + self.q.dot(&xv)
    }

    /// `(f_1(x), ..., f_m(x))` with `f_i(x) = a_iᵀx + b_i`.
    pub fn constraints(&self, x: &[f64]) -> Vec<f64> {
        let xv = DVector::from_column_slice(x);
        (&self.a * xv + &self.b).as_slice().to_vec()
    }

    fn validate(&self) -> Result<(), MonotoneError> {
        let n = self.p.nrows();
        if self.p.ncols() != n || self.q.len() != n {
            return Err(MonotoneError::DimensionMismatch(format!(
                "P is {}x{} but q has length {}",
                self.p.nrows(),
                self.p.ncols(),
                self.q.len()
            )));
        }
        if self.a.ncols() != n && self.a.nrows() > 0 {
            return Err(MonotoneError::DimensionMismatch(format!(
                "constraint matrix has {} columns, expected {n}",
                self.a.ncols()
            )));
        }
        if self.b.len() != self.a.nrows() {
            return Err(MonotoneError::DimensionMismatch(format!(
                "constraint matrix has {} rows but b has length {}",
                self.a.nrows(),
                self.b.len()
            )));
        }
        check_symmetric_psd(&self.p, "P")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    Linear {
        m: DMatrix<f64>,
    },
    SeparableProx {
        atoms: Vec<Atom>,
    },
    SaddleQuadratic {
        data: QuadraticData,
        /// Concave curvature in `y` (m×m, symmetric PSD).
        r: DMatrix<f64>,
    },
    ConvexProgramQp {
        data: QuadraticData,
    },
    VariationalInequality {
        /// `A(x) = G x + g`.
        g: DMatrix<f64>,
        offset: DVector<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Linear { .. } => "linear",
            Family::SeparableProx { .. } => "separable_prox",
            Family::SaddleQuadratic { .. } => "saddle_quadratic",
            Family::ConvexProgramQp { .. } => "convex_program_qp",
            Family::VariationalInequality { .. } => "variational_inequality",
        }
    }
}

/// A validated catalog problem. Immutable after construction.
#[derive(Debug, Clone)]
pub struct MonotoneProblem {
    family: Family,
    split: SplitForm,
    enumeration_cap: usize,
    reference_solution: Option<Vec<f64>>,
}

fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn min_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    if sym.nrows() == 0 {
        return 0.0;
    }
    sym.clone().symmetric_eigenvalues().min()
}

fn check_monotone(m: &DMatrix<f64>, what: &'static str) -> Result<(), MonotoneError> {
    if m.nrows() != m.ncols() {
        return Err(MonotoneError::DimensionMismatch(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(MonotoneError::DimensionMismatch(format!(
            "{what} has non-finite entries"
        )));
    }
    let min_eigenvalue = min_eigenvalue(&symmetric_part(m));
    if min_eigenvalue < -PSD_TOL {
        return Err(MonotoneError::NotMonotone {
            what,
            min_eigenvalue,
        });
    }
    Ok(())
}

fn check_symmetric_psd(m: &DMatrix<f64>, what: &'static str) -> Result<(), MonotoneError> {
    check_monotone(m, what)?;
    let asym = (m - m.transpose()).amax();
    if asym > 1e-12 * (1.0 + m.amax()) {
        return Err(MonotoneError::NotSymmetric(what));
    }
    Ok(())
}

fn check_box(lower: &[f64], upper: &[f64], n: usize) -> Result<(), MonotoneError> {
    if lower.len() != n || upper.len() != n {
        return Err(MonotoneError::DimensionMismatch(format!(
            "box bounds have lengths {}/{}, expected {n}",
            lower.len(),
            upper.len()
        )));
    }
    for (i, (lo, hi)) in lower.iter().zip(upper).enumerate() {
        if lo.is_nan() || hi.is_nan() || lo > hi || *lo == f64::INFINITY || *hi == f64::NEG_INFINITY
        {
            return Err(MonotoneError::InvalidBox(format!(
                "coordinate {}: [{lo}, {hi}]",
                i + 1
            )));
        }
    }
    Ok(())
}

/// `[[P, Aᵀ], [-A, R]]`, `(q, -b)`.
fn saddle_split(data: &QuadraticData, r: Option<&DMatrix<f64>>, y_lower: f64) -> SplitForm {
    let (n, m) = (data.n(), data.m());
    let mut big = DMatrix::zeros(n + m, n + m);
    big.view_mut((0, 0), (n, n)).copy_from(&data.p);
    big.view_mut((0, n), (n, m)).copy_from(&data.a.transpose());
    big.view_mut((n, 0), (m, n)).copy_from(&(-&data.a));
    if let Some(r) = r {
        big.view_mut((n, n), (m, m)).copy_from(r);
    }
    let c = DVector::from_iterator(
        n + m,
        data.q.iter().copied().chain(data.b.iter().map(|v| -v)),
    );
    let mut lower = vec![f64::NEG_INFINITY; n + m];
    for l in &mut lower[n..] {
        *l = y_lower;
    }
    SplitForm::new(big, c, vec![0.0; n + m], lower, vec![f64::INFINITY; n + m])
}

impl MonotoneProblem {
    fn from_family(family: Family) -> Result<Self, MonotoneError> {
        let split = match &family {
            Family::Linear { m } => {
                check_monotone(m, "M")?;
                SplitForm::unconstrained(m.clone(), DVector::zeros(m.nrows()))
            }
            Family::SeparableProx { atoms } => {
                if atoms.is_empty() {
                    return Err(MonotoneError::InvalidAtom("no atoms".into()));
                }
                let n = atoms.len();
                let mut diag = DVector::zeros(n);
                let mut c = DVector::zeros(n);
                let mut l1 = vec![0.0; n];
                let mut lower = vec![f64::NEG_INFINITY; n];
                let mut upper = vec![f64::INFINITY; n];
                for (i, atom) in atoms.iter().enumerate() {
                    atom.validate()?;
                    match *atom {
                        Atom::Quadratic { a, c: center } => {
                            diag[i] = a;
                            c[i] = -a * center;
                        }
                        Atom::AbsoluteValue => l1[i] = 1.0,
                        Atom::BoxIndicator { lo, hi } => {
                            lower[i] = lo;
                            upper[i] = hi;
                        }
                    }
                }
                SplitForm::new(DMatrix::from_diagonal(&diag), c, l1, lower, upper)
            }
            Family::SaddleQuadratic { data, r } => {
                data.validate()?;
                if r.nrows() != data.m() || r.ncols() != data.m() {
                    return Err(MonotoneError::DimensionMismatch(format!(
                        "R is {}x{}, expected {m}x{m}",
                        r.nrows(),
                        r.ncols(),
                        m = data.m()
                    )));
                }
                check_symmetric_psd(r, "R")?;
                saddle_split(data, Some(r), f64::NEG_INFINITY)
            }
            Family::ConvexProgramQp { data } => {
                data.validate()?;
                saddle_split(data, None, 0.0)
            }
            Family::VariationalInequality {
                g,
                offset,
                lower,
                upper,
            } => {
                check_monotone(g, "G")?;
                if offset.len() != g.nrows() {
                    return Err(MonotoneError::DimensionMismatch(format!(
                        "offset has length {}, expected {}",
                        offset.len(),
                        g.nrows()
                    )));
                }
                check_box(lower, upper, g.nrows())?;
                SplitForm::new(
                    g.clone(),
                    offset.clone(),
                    vec![0.0; g.nrows()],
                    lower.clone(),
                    upper.clone(),
                )
            }
        };
        if split.dim() == 0 {
            return Err(MonotoneError::DimensionMismatch(
                "problem has dimension 0".into(),
            ));
        }
        Ok(Self {
            family,
            split,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
            reference_solution: None,
        })
    }

    pub fn linear(m: DMatrix<f64>) -> Result<Self, MonotoneError> {
        Self::from_family(Family::Linear { m })
    }

    pub fn separable_prox(atoms: Vec<Atom>) -> Result<Self, MonotoneError> {
        Self::from_family(Family::SeparableProx { atoms })
    }

    pub fn saddle_quadratic(data: QuadraticData, r: DMatrix<f64>) -> Result<Self, MonotoneError> {
        Self::from_family(Family::SaddleQuadratic { data, r })
    }

    pub fn convex_program_qp(data: QuadraticData) -> Result<Self, MonotoneError> {
        Self::from_family(Family::ConvexProgramQp { data })
    }

    pub fn variational_inequality(
        g: DMatrix<f64>,
        offset: DVector<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self, MonotoneError> {
        Self::from_family(Family::VariationalInequality {
            g,
            offset,
            lower,
            upper,
        })
    }

    pub fn with_enumeration_cap(mut self, cap: usize) -> Self {
        self.enumeration_cap = cap;
        self
    }

    pub fn with_reference_solution(mut self, x: Vec<f64>) -> Self {
        self.reference_solution = Some(x);
        self
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn enumeration_cap(&self) -> usize {
        self.enumeration_cap
    }

    pub fn reference_solution(&self) -> Option<&[f64]> {
        self.reference_solution.as_deref()
    }

    /// Dimension of the space `T` acts on (`n + m` for saddle families).
    pub fn dimension(&self) -> usize {
        self.split.dim()
    }

    /// Distance from 0 to `T(w)`; infinite when `w` leaves the domain.
    pub fn zero_merit(&self, w: &[f64]) -> f64 {
        self.split.merit(w, 0.0)
    }

    /// Exact resolvent `(I + T)^{-1} z`. Falls back to the iterative solver
    /// when the enumeration cap is exceeded.
    pub fn resolvent(&self, z: &[f64]) -> Result<Vec<f64>, MonotoneError> {
        if z.len() != self.dimension() {
            return Err(MonotoneError::DimensionMismatch(format!(
                "point has length {}, expected {}",
                z.len(),
                self.dimension()
            )));
        }
        match &self.family {
            Family::SeparableProx { atoms } => {
                Ok(atoms.iter().zip(z).map(|(a, &v)| a.prox(v)).collect())
            }
            _ => match self.split.solve_enumerated(z, self.enumeration_cap) {
                Err(MonotoneError::DimensionTooLarge { .. }) => {
                    self.split
                        .solve_iterative(z, FALLBACK_TOL, FALLBACK_MAX_INNER)
                }
                other => other,
            },
        }
    }

    fn quadratic_data(&self, expected: &'static str) -> Result<&QuadraticData, MonotoneError> {
        match &self.family {
            Family::SaddleQuadratic { data, .. } | Family::ConvexProgramQp { data } => Ok(data),
            f => Err(MonotoneError::WrongFamily {
                expected,
                found: f.name(),
            }),
        }
    }
}

/// Unique `x` with `(I + M) x = z`.
pub fn resolvent_linear(m: &DMatrix<f64>, z: &[f64]) -> Result<Vec<f64>, MonotoneError> {
    if m.nrows() != m.ncols() || m.nrows() != z.len() {
        return Err(MonotoneError::DimensionMismatch(format!(
            "M is {}x{}, z has length {}",
            m.nrows(),
            m.ncols(),
            z.len()
        )));
    }
    let k = DMatrix::identity(z.len(), z.len()) + m;
    split::solve_refined(&k, &DVector::from_column_slice(z)).map(|x| x.as_slice().to_vec())
}

/// Coordinatewise resolvent of `df` for a separable `f`.
pub fn prox_separable(atoms: &[Atom], z: &[f64]) -> Result<Vec<f64>, MonotoneError> {
    if atoms.len() != z.len() {
        return Err(MonotoneError::DimensionMismatch(format!(
            "{} atoms for a point of length {}",
            atoms.len(),
            z.len()
        )));
    }
    atoms
        .iter()
        .zip(z)
        .map(|(a, &v)| a.validate().map(|_| a.prox(v)))
        .collect()
}

/// Resolvent of the saddle operator `T_L` by active-set enumeration over
/// the multipliers.
pub fn resolvent_saddle(
    prob: &MonotoneProblem,
    z: &SaddlePoint,
) -> Result<SaddlePoint, MonotoneError> {
    let data = prob.quadratic_data("saddle_quadratic or convex_program_qp")?;
    if z.x.len() != data.n() || z.y.len() != data.m() {
        return Err(MonotoneError::DimensionMismatch(format!(
            "saddle point has shape ({}, {}), expected ({}, {})",
            z.x.len(),
            z.y.len(),
            data.n(),
            data.m()
        )));
    }
    let w = prob
        .split
        .solve_enumerated(&z.concat(), prob.enumeration_cap)?;
    let (x, y) = w.split_at(data.n());
    Ok(SaddlePoint {
        x: x.to_vec(),
        y: y.to_vec(),
    })
}

/// Resolvent of `A + N_C` by per-coordinate active-set enumeration.
pub fn resolvent_vi(prob: &MonotoneProblem, z: &[f64]) -> Result<Vec<f64>, MonotoneError> {
    if !matches!(prob.family, Family::VariationalInequality { .. }) {
        return Err(MonotoneError::WrongFamily {
            expected: "variational_inequality",
            found: prob.family.name(),
        });
    }
    if z.len() != prob.dimension() {
        return Err(MonotoneError::DimensionMismatch(format!(
            "point has length {}, expected {}",
            z.len(),
            prob.dimension()
        )));
    }
    prob.split.solve_enumerated(z, prob.enumeration_cap)
}

/// Resolvent by forward-backward iteration, usable for every family and any
/// number of constraints.
pub fn iterative_resolvent(
    prob: &MonotoneProblem,
    z: &[f64],
    tol: f64,
    max_inner: usize,
) -> Result<Vec<f64>, MonotoneError> {
    if !(tol > 0.0) {
        return Err(MonotoneError::Unsupported("tol must be positive".into()));
    }
    if z.len() != prob.dimension() {
        return Err(MonotoneError::DimensionMismatch(format!(
            "point has length {}, expected {}",
            z.len(),
            prob.dimension()
        )));
    }
    prob.split.solve_iterative(z, tol, max_inner)
}

/// Dual function `g_0(y) = inf_x L(x, y)` of a convex program.
pub fn evaluate_dual(prob: &MonotoneProblem, y: &[f64]) -> Result<f64, MonotoneError> {
    let data = match &prob.family {
        Family::ConvexProgramQp { data } => data,
        f => {
            return Err(MonotoneError::WrongFamily {
                expected: "convex_program_qp",
                found: f.name(),
            })
        }
    };
    if y.len() != data.m() {
        return Err(MonotoneError::DimensionMismatch(format!(
            "multiplier has length {}, expected {}",
            y.len(),
            data.m()
        )));
    }
    if let Some(v) = y.iter().find(|v| !(**v >= 0.0)) {
        return Err(MonotoneError::InvalidDual(format!(
            "multipliers must be >= 0, got {v}"
        )));
    }
    let yv = DVector::from_column_slice(y);
    // stationarity: P x = -(q + Aᵀy)
    let h = &data.q + data.a.transpose() * &yv;
    let x = match data.p.clone().cholesky() {
        Some(ch) => -ch.solve(&h),
        None => {
            let svd = data.p.clone().svd(true, true);
            let x = -svd
                .pseudo_inverse(1e-12 * (1.0 + data.p.amax()))
                .map_err(|_| MonotoneError::DualUnbounded)?
                * &h;
            let res = (&data.p * &x + &h).amax();
            if res > 1e-9 * (1.0 + h.amax()) {
                return Err(MonotoneError::DualUnbounded);
            }
            x
        }
    };
    let fx: Vec<f64> = data.constraints(x.as_slice());
    Ok(data.objective(x.as_slice()) + fx.iter().zip(y).map(|(f, y)| f * y).sum::<f64>())
}

/// Rectangular grid `lower + k * step` for brute-force searches.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub step: f64,
    /// Largest acceptable merit at the argmin; defaults to
    /// `step * sqrt(n) * (1 + ||M||_inf + max l1 weight)`.
    pub threshold: Option<f64>,
}

impl Grid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, step: f64) -> Self {
        Self {
            lower,
            upper,
            step,
            threshold: None,
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = Some(threshold);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSolution {
    pub point: Vec<f64>,
    pub merit: f64,
    pub threshold: f64,
}

const MAX_GRID_POINTS: u128 = 50_000_000;

/// Grid point minimizing the distance from 0 to `T(x)`. Independent of the
/// resolvent solvers; intended for tests and reference solutions.
pub fn brute_force_zero(
    prob: &MonotoneProblem,
    grid: &Grid,
) -> Result<GridSolution, MonotoneError> {
    let n = prob.dimension();
    if grid.lower.len() != n || grid.upper.len() != n {
        return Err(MonotoneError::InvalidGrid(format!(
            "grid must have {n} axes"
        )));
    }
    if !(grid.step > 0.0 && grid.step.is_finite()) {
        return Err(MonotoneError::InvalidGrid("step must be positive".into()));
    }
    let axes: Vec<Vec<f64>> = grid
        .lower
        .iter()
        .zip(&grid.upper)
        .enumerate()
        .map(|(i, (&lo, &hi))| {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(MonotoneError::InvalidGrid(format!(
                    "axis {} is [{lo}, {hi}]",
                    i + 1
                )));
            }
            let count = ((hi - lo) / grid.step + 1e-9).floor() as usize + 1;
            Ok((0..count)
                .map(|k| snap(lo + k as f64 * grid.step, grid.step, &prob.split, i))
                .collect())
        })
        .collect::<Result<_, _>>()?;
    let total: u128 = axes.iter().map(|a| a.len() as u128).product();
    if total > MAX_GRID_POINTS {
        return Err(MonotoneError::InvalidGrid(format!(
            "{total} grid points is too many"
        )));
    }

    let snap_tol = grid.step * 1e-9;
    let mut idx = vec![0usize; n];
    let mut point: Vec<f64> = axes.iter().map(|a| a[0]).collect();
    let mut best = (f64::INFINITY, point.clone());
    'outer: loop {
        let merit = prob.split.merit(&point, snap_tol);
        if merit < best.0 {
            best = (merit, point.clone());
        }
        let mut d = n;
        loop {
            if d == 0 {
                break 'outer;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < axes[d].len() {
                point[d] = axes[d][idx[d]];
                break;
            }
            idx[d] = 0;
            point[d] = axes[d][0];
        }
    }

    let threshold = grid.threshold.unwrap_or_else(|| {
        let row_max = (0..n)
            .map(|i| prob.split.m.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let l1 = prob.split.l1.iter().copied().fold(0.0, f64::max);
        grid.step * (n as f64).sqrt() * (1.0 + row_max + l1)
    });
    let (merit, point) = best;
    if !(merit <= threshold) {
        return Err(MonotoneError::GridTooCoarse { merit, threshold });
    }
    Ok(GridSolution {
        point,
        merit,
        threshold,
    })
}

/// Snap grid coordinates that are within rounding of 0 or a box bound.
fn snap(v: f64, step: f64, split: &SplitForm, i: usize) -> f64 {
    let eps = step * 1e-9;
    if v.abs() <= eps {
        0.0
    } else if (v - split.lower[i]).abs() <= eps {
        split.lower[i]
    } else if (v - split.upper[i]).abs() <= eps {
        split.upper[i]
    } else {
        v
    }
}

/// `F = (I + T)^{-1}` as a fixed-point operator on `partition`.
#[derive(Debug, Clone)]
pub struct ResolventOperator {
    problem: Arc<MonotoneProblem>,
    partition: BlockPartition,
}

impl ResolventOperator {
    pub fn problem(&self) -> &MonotoneProblem {
        &self.problem
    }
}

impl FixedPointOperator for ResolventOperator {
    fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    fn claims(&self) -> Claims {
        Claims {
            h2: false,
            h3: true,
        }
    }

    fn evaluate(&self, x: &BlockVector) -> Result<BlockVector, OperatorError> {
        let y = self
            .problem
            .resolvent(x.as_slice())
            .map_err(|e| OperatorError::EvaluationFailure(e.to_string()))?;
        Ok(BlockVector::new(self.partition.clone(), y)?)
    }

    fn evaluate_block(&self, i: usize, x: &BlockVector) -> Result<Vec<f64>, OperatorError> {
        match &self.problem.family {
            Family::SeparableProx { atoms } => {
                let r = self.partition.range(i);
                Ok(atoms[r]
                    .iter()
                    .zip(x.block(i))
                    .map(|(a, &v)| a.prox(v))
                    .collect())
            }
            _ => Ok(self.evaluate(x)?.block(i).to_vec()),
        }
    }

    fn blockwise(&self) -> bool {
        matches!(self.problem.family, Family::SeparableProx { .. })
    }
}

pub fn as_fixed_point_operator(
    prob: MonotoneProblem,
    partition: BlockPartition,
) -> Result<ResolventOperator, MonotoneError> {
    if partition.total() != prob.dimension() {
        return Err(MonotoneError::DimensionMismatch(format!(
            "partition covers {} coordinates, problem has {}",
            partition.total(),
            prob.dimension()
        )));
    }
    Ok(ResolventOperator {
        problem: Arc::new(prob),
        partition,
    })
}

#[cfg(test)]
mod tests;
