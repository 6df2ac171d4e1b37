//! Every cataloged operator has the form
//!
//! ```text
//! T(w) = M w + c + dg(w),   g(w) = sum_i l1_i |w_i| + indicator([lo_i, hi_i])
//! ```
//!
//! with `M` monotone. The resolvent solves `K w + dg(w) ∋ r` where `K = I + M`
//! and `r = z - c`. Two independent solvers live here: active-set
//! enumeration (exact, box part only) and a forward-backward iteration
//! (any `g`, contraction factor `sqrt(1 - 1/||K||^2)`).

use nalgebra::{DMatrix, DVector};

use super::MonotoneError;

/// Relative violation below which a pattern is accepted immediately.
const EXACT_PATTERN_TOL: f64 = 1e-12;
/// Relative violation still accepted after the full enumeration.
const LOOSE_PATTERN_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub(crate) struct SplitForm {
    pub m: DMatrix<f64>,
    pub c: DVector<f64>,
    pub l1: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// `I + M`.
    pub k: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Free,
    AtLower,
    AtUpper,
}

impl SplitForm {
    pub fn new(
        m: DMatrix<f64>,
        c: DVector<f64>,
        l1: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Self {
        let n = m.nrows();
        let k = DMatrix::identity(n, n) + &m;
        Self {
            m,
            c,
            l1,
            lower,
            upper,
            k,
        }
    }

    pub fn unconstrained(m: DMatrix<f64>, c: DVector<f64>) -> Self {
        let n = m.nrows();
        Self::new(
            m,
            c,
            vec![0.0; n],
            vec![f64::NEG_INFINITY; n],
            vec![f64::INFINITY; n],
        )
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn bounded_coordinates(&self) -> Vec<usize> {
        (0..self.dim())
            .filter(|&i| self.lower[i].is_finite() || self.upper[i].is_finite())
            .collect()
    }

    pub fn rhs(&self, z: &[f64]) -> DVector<f64> {
        DVector::from_iterator(z.len(), z.iter().zip(self.c.iter()).map(|(a, b)| a - b))
    }

    /// Exact resolvent by enumerating which bounds are active.
    pub fn solve_enumerated(&self, z: &[f64], cap: usize) -> Result<Vec<f64>, MonotoneError> {
        if self.l1.iter().any(|&w| w != 0.0) {
            return Err(MonotoneError::Unsupported(
                "active-set enumeration handles box constraints only".into(),
            ));
        }
        let bounded = self.bounded_coordinates();
        if bounded.len() > cap {
            return Err(MonotoneError::DimensionTooLarge {
                constrained: bounded.len(),
                cap,
            });
        }
        let r = self.rhs(z);
        if bounded.is_empty() {
            return solve_refined(&self.k, &r).map(|w| w.as_slice().to_vec());
        }

        let options: Vec<Vec<State>> = bounded
            .iter()
            .map(|&i| {
                let mut o = vec![State::Free];
                if self.lower[i].is_finite() {
                    o.push(State::AtLower);
                }
                if self.upper[i].is_finite() {
                    o.push(State::AtUpper);
                }
                o
            })
            .collect();
        let scale = 1.0 + r.amax() + self.k.amax();
        let n = self.dim();
        let mut counter = vec![0usize; bounded.len()];
        let mut best: Option<(f64, DVector<f64>)> = None;
        let mut states = vec![State::Free; n];
        loop {
            for (slot, &i) in bounded.iter().enumerate() {
                states[i] = options[slot][counter[slot]];
            }
            if let Some((violation, w)) = self.try_pattern(&states, &r) {
                let rel = violation / scale;
                if rel <= EXACT_PATTERN_TOL {
                    return Ok(self.clamp(w));
                }
                if best.as_ref().is_none_or(|(b, _)| rel < *b) {
                    best = Some((rel, w));
                }
            }
            // mixed-radix increment
            let mut slot = 0;
            loop {
                if slot == counter.len() {
                    return match best {
                        Some((rel, w)) if rel <= LOOSE_PATTERN_TOL => Ok(self.clamp(w)),
                        _ => Err(MonotoneError::NoConsistentPattern),
                    };
                }
                counter[slot] += 1;
                if counter[slot] < options[slot].len() {
                    break;
                }
                counter[slot] = 0;
                slot += 1;
            }
        }
    }

    /// Solves the reduced system for one activity pattern and returns the
    /// largest sign/bound violation together with the candidate point.
    fn try_pattern(&self, states: &[State], r: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        let n = self.dim();
        let mut w = DVector::zeros(n);
        let free: Vec<usize> = (0..n).filter(|&i| states[i] == State::Free).collect();
        for i in 0..n {
            match states[i] {
                State::AtLower => w[i] = self.lower[i],
                State::AtUpper => w[i] = self.upper[i],
                State::Free => {}
            }
        }
        if !free.is_empty() {
            let kff = DMatrix::from_fn(free.len(), free.len(), |a, b| self.k[(free[a], free[b])]);
            let mut rhs = DVector::from_fn(free.len(), |a, _| r[free[a]]);
            for (a, &i) in free.iter().enumerate() {
                for j in 0..n {
                    if states[j] != State::Free {
                        rhs[a] -= self.k[(i, j)] * w[j];
                    }
                }
            }
            let wf = solve_refined(&kff, &rhs).ok()?;
            for (a, &i) in free.iter().enumerate() {
                w[i] = wf[a];
            }
        }
        let kw = &self.k * &w;
        let mut violation: f64 = 0.0;
        for i in 0..n {
            // normal-cone component n_i = r_i - (K w)_i
            let normal = r[i] - kw[i];
            let v = match states[i] {
                State::Free => (self.lower[i] - w[i]).max(w[i] - self.upper[i]).max(0.0),
                State::AtLower if self.lower[i] == self.upper[i] => 0.0,
                State::AtLower => normal.max(0.0),
                State::AtUpper => (-normal).max(0.0),
            };
            violation = violation.max(v);
        }
        violation.is_finite().then_some((violation, w))
    }

    fn clamp(&self, w: DVector<f64>) -> Vec<f64> {
        w.iter()
            .enumerate()
            .map(|(i, &v)| v.max(self.lower[i]).min(self.upper[i]))
            .collect()
    }

    /// Per-coordinate prox of `tau * g`.
    fn prox_g(&self, i: usize, v: f64, tau: f64) -> f64 {
        let t = tau * self.l1[i];
        let shrunk = if t > 0.0 {
            v.signum() * (v.abs() - t).max(0.0)
        } else {
            v
        };
        shrunk.max(self.lower[i]).min(self.upper[i])
    }

    /// Contraction factor and step size of the forward-backward iteration.
    pub fn forward_backward_rate(&self) -> (f64, f64) {
        let lip = self.k.clone().singular_values().max().max(1.0);
        let tau = 1.0 / (lip * lip);
        let q = (1.0 - tau).max(0.0).sqrt();
        (q, tau)
    }

    /// `w <- prox_{tau g}(w - tau (K w - r))`, stopped once the a-posteriori
    /// bound `q/(1-q) * ||w_{k+1} - w_k||` drops below `tol`.
    pub fn solve_iterative(
        &self,
        z: &[f64],
        tol: f64,
        max_inner: usize,
    ) -> Result<Vec<f64>, MonotoneError> {
        let r = self.rhs(z);
        let (q, tau) = self.forward_backward_rate();
        let bound = if q > 0.0 { q / (1.0 - q) } else { 0.0 };
        let n = self.dim();
        let mut w = DVector::from_fn(n, |i, _| self.prox_g(i, z[i], 1.0));
        let mut step = f64::INFINITY;
        for _ in 0..max_inner {
            let grad = &self.k * &w - &r;
            let next = DVector::from_fn(n, |i, _| self.prox_g(i, w[i] - tau * grad[i], tau));
            step = (&next - &w).norm();
            w = next;
            if !step.is_finite() {
                break;
            }
            if bound * step <= tol {
                return Ok(w.as_slice().to_vec());
            }
        }
        Err(MonotoneError::InnerSolverDiverged {
            iterations: max_inner,
            last_step: step,
        })
    }

    /// Euclidean distance from 0 to `T(w)`; infinite outside the box.
    pub fn merit(&self, w: &[f64], snap: f64) -> f64 {
        let wv = DVector::from_column_slice(w);
        let v = &self.m * &wv + &self.c;
        let mut acc = 0.0;
        for i in 0..self.dim() {
            let x = w[i];
            if x < self.lower[i] - snap || x > self.upper[i] + snap {
                return f64::INFINITY;
            }
            let (mut lo, mut hi) = (0.0, 0.0);
            let lam = self.l1[i];
            if lam > 0.0 {
                if x.abs() <= snap {
                    lo = -lam;
                    hi = lam;
                } else {
                    lo = lam * x.signum();
                    hi = lo;
                }
            }
            if (x - self.lower[i]).abs() <= snap {
                lo = f64::NEG_INFINITY;
            }
            if (x - self.upper[i]).abs() <= snap {
                hi = f64::INFINITY;
            }
            let s = (-v[i]).max(lo).min(hi);
            let res = v[i] + s;
            acc += res * res;
        }
        acc.sqrt()
    }
}

/// LU solve with one step of iterative refinement.
pub(crate) fn solve_refined(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<DVector<f64>, MonotoneError> {
    let lu = a.clone().lu();
    let mut x = lu.solve(b).ok_or(MonotoneError::SingularSystem)?;
    let res = b - a * &x;
    if let Some(dx) = lu.solve(&res) {
        x += dx;
    }
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(MonotoneError::SingularSystem)
    }
}
