//! Fixed-point operators `F = (F_1, ..., F_alpha)` and randomized checks of
//! the two contraction hypotheses used by the engine:
//!
//! * h2: `||F(x) - F(y)||_max <= ||x - y||_max` (block maximum norm)
//! * h3: `||F(x) - F(y)||^2 <= <F(x) - F(y), x - y>` (firm nonexpansiveness)
//!
//! The checks can only falsify a hypothesis, never prove it.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::blockspace::{inner_product, max_distance, BlockError, BlockPartition, BlockVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error(transparent)]
    Partition(#[from] BlockError),
    #[error("operator evaluation failed: {0}")]
    EvaluationFailure(String),
}

/// Hypotheses an operator is asserted to satisfy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Claims {
    pub h2: bool,
    pub h3: bool,
}

/// A map `F: R^n -> R^n` on a fixed block partition.
///
/// `evaluate` must be deterministic and safe to call concurrently.
pub trait FixedPointOperator: Send + Sync {
    fn partition(&self) -> &BlockPartition;

    fn claims(&self) -> Claims;

    /// `F(x)`; `x` is already known to live on `self.partition()`.
    fn evaluate(&self, x: &BlockVector) -> Result<BlockVector, OperatorError>;

    /// `F_i(x)`.
    fn evaluate_block(&self, i: usize, x: &BlockVector) -> Result<Vec<f64>, OperatorError> {
        Ok(self.evaluate(x)?.block(i).to_vec())
    }

    /// True when `evaluate_block` is cheaper than a full evaluation, so the
    /// engine may farm single blocks out to workers.
    fn blockwise(&self) -> bool {
        false
    }
}

/// Checked evaluation of `F(x)`.
pub fn apply(f: &dyn FixedPointOperator, x: &BlockVector) -> Result<BlockVector, OperatorError> {
    f.partition().ensure_same(x.partition())?;
    let y = f.evaluate(x)?;
    f.partition().ensure_same(y.partition())?;
    Ok(y)
}

#[derive(Debug, Clone)]
pub struct Identity {
    partition: BlockPartition,
}

impl Identity {
    pub fn new(partition: BlockPartition) -> Self {
        Self { partition }
    }
}

impl FixedPointOperator for Identity {
    fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    fn claims(&self) -> Claims {
        Claims { h2: true, h3: true }
    }

    fn evaluate(&self, x: &BlockVector) -> Result<BlockVector, OperatorError> {
        Ok(x.clone())
    }

    fn evaluate_block(&self, i: usize, x: &BlockVector) -> Result<Vec<f64>, OperatorError> {
        Ok(x.block(i).to_vec())
    }

    fn blockwise(&self) -> bool {
        true
    }
}

/// `F(x) = k x`.
#[derive(Debug, Clone)]
pub struct Scale {
    partition: BlockPartition,
    k: f64,
}

impl Scale {
    pub fn new(partition: BlockPartition, k: f64) -> Self {
        Self { partition, k }
    }
}

impl FixedPointOperator for Scale {
    fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    fn claims(&self) -> Claims {
        Claims {
            h2: self.k.abs() <= 1.0,
            h3: (0.0..=1.0).contains(&self.k),
        }
    }

    fn evaluate(&self, x: &BlockVector) -> Result<BlockVector, OperatorError> {
        let data = x.as_slice().iter().map(|v| self.k * v).collect();
        Ok(BlockVector::new(self.partition.clone(), data)?)
    }

    fn evaluate_block(&self, i: usize, x: &BlockVector) -> Result<Vec<f64>, OperatorError> {
        Ok(x.block(i).iter().map(|v| self.k * v).collect())
    }

    fn blockwise(&self) -> bool {
        true
    }
}

/// `F(x) = (x + a) / 2`, the resolvent of `T(x) = x - a`.
#[derive(Debug, Clone)]
pub struct AffineAverage {
    partition: BlockPartition,
    anchor: Vec<f64>,
}

impl AffineAverage {
    pub fn new(partition: BlockPartition, anchor: Vec<f64>) -> Result<Self, OperatorError> {
        if anchor.len() != partition.total() {
            return Err(BlockError::LengthMismatch {
                expected: partition.total(),
                found: anchor.len(),
            }
            .into());
        }
        Ok(Self { partition, anchor })
    }
}

impl FixedPointOperator for AffineAverage {
    fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    fn claims(&self) -> Claims {
        Claims { h2: true, h3: true }
    }

    fn evaluate(&self, x: &BlockVector) -> Result<BlockVector, OperatorError> {
        let data = x
            .as_slice()
            .iter()
            .zip(&self.anchor)
            .map(|(v, a)| 0.5 * (v + a))
            .collect();
        Ok(BlockVector::new(self.partition.clone(), data)?)
    }

    fn evaluate_block(&self, i: usize, x: &BlockVector) -> Result<Vec<f64>, OperatorError> {
        let r = self.partition.range(i);
        Ok(x.block(i)
            .iter()
            .zip(&self.anchor[r])
            .map(|(v, a)| 0.5 * (v + a))
            .collect())
    }

    fn blockwise(&self) -> bool {
        true
    }
}

type EvalFn = dyn Fn(&[f64]) -> Result<Vec<f64>, String> + Send + Sync;

/// Operator backed by a closure over flat coordinates.
pub struct FnOperator {
    partition: BlockPartition,
    claims: Claims,
    f: Box<EvalFn>,
}

impl FnOperator {
    pub fn new<F>(partition: BlockPartition, claims: Claims, f: F) -> Self
    where
        F: Fn(&[f64]) -> Result<Vec<f64>, String> + Send + Sync + 'static,
    {
        Self {
            partition,
            claims,
            f: Box::new(f),
        }
    }
}

impl fmt::Debug for FnOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnOperator")
            .field("partition", &self.partition)
            .field("claims", &self.claims)
            .finish_non_exhaustive()
    }
}

impl FixedPointOperator for FnOperator {
    fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    fn claims(&self) -> Claims {
        self.claims
    }

    fn evaluate(&self, x: &BlockVector) -> Result<BlockVector, OperatorError> {
        let y = (self.f)(x.as_slice()).map_err(OperatorError::EvaluationFailure)?;
        Ok(BlockVector::new(self.partition.clone(), y)?)
    }
}

/// Source of random point pairs for the hypothesis checks.
pub trait PairSampler {
    fn sample_pairs(
        &mut self,
        partition: &BlockPartition,
        count: usize,
    ) -> Vec<(BlockVector, BlockVector)>;
}

/// Pairs drawn componentwise uniform on `[lo, hi]` from a seeded ChaCha stream.
#[derive(Debug, Clone)]
pub struct UniformPairSampler {
    rng: ChaCha8Rng,
    lo: f64,
    hi: f64,
}

impl UniformPairSampler {
    pub const DEFAULT_RANGE: (f64, f64) = (-10.0, 10.0);

    pub fn new(seed: u64) -> Self {
        Self::with_range(seed, Self::DEFAULT_RANGE.0, Self::DEFAULT_RANGE.1)
    }

    pub fn with_range(seed: u64, lo: f64, hi: f64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            lo,
            hi,
        }
    }

    fn point(&mut self, partition: &BlockPartition) -> BlockVector {
        let data = (0..partition.total())
            .map(|_| self.rng.gen_range(self.lo..=self.hi))
            .collect();
        BlockVector::new(partition.clone(), data).expect("sampled length matches partition")
    }
}

impl PairSampler for UniformPairSampler {
    fn sample_pairs(
        &mut self,
        partition: &BlockPartition,
        count: usize,
    ) -> Vec<(BlockVector, BlockVector)> {
        (0..count)
            .map(|_| {
                let x = self.point(partition);
                let y = self.point(partition);
                (x, y)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Hypothesis {
    H2,
    H3,
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Hypothesis::H2 => f.write_str("h2"),
            Hypothesis::H3 => f.write_str("h3"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub hypothesis: Hypothesis,
    pub trials: usize,
    pub slack: f64,
    /// Largest `lhs - rhs` seen over all pairs.
    pub worst_violation: f64,
    pub passed: bool,
    /// Pair attaining the worst violation, recorded on failure.
    pub witness: Option<Witness>,
}

pub const DEFAULT_TRIALS: usize = 1000;
pub const DEFAULT_SLACK: f64 = 1e-10;

fn run_check<M>(
    hypothesis: Hypothesis,
    f: &dyn FixedPointOperator,
    sampler: &mut dyn PairSampler,
    trials: usize,
    slack: f64,
    margin: M,
) -> Result<CheckReport, OperatorError>
where
    M: Fn(&BlockVector, &BlockVector, &BlockVector, &BlockVector) -> Result<f64, OperatorError>
        + Sync,
{
    let trials = trials.max(1);
    let pairs = sampler.sample_pairs(f.partition(), trials);
    let margins = pairs
        .par_iter()
        .map(|(x, y)| {
            let fx = apply(f, x)?;
            let fy = apply(f, y)?;
            margin(x, y, &fx, &fy)
        })
        .collect::<Result<Vec<f64>, OperatorError>>()?;
    // First index wins ties so the report does not depend on thread count.
    let (worst_idx, worst) =
        margins
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| {
                if v > acc.1 || v.is_nan() && !acc.1.is_nan() {
                    (i, v)
                } else {
                    acc
                }
            });
    let passed = worst <= slack;
    let witness = (!passed).then(|| Witness {
        x: pairs[worst_idx].0.as_slice().to_vec(),
        y: pairs[worst_idx].1.as_slice().to_vec(),
    });
    Ok(CheckReport {
        hypothesis,
        trials,
        slack,
        worst_violation: worst,
        passed,
        witness,
    })
}

/// Worst violation of `||F(x)-F(y)||_max - ||x-y||_max` over sampled pairs.
pub fn check_h2(
    f: &dyn FixedPointOperator,
    sampler: &mut dyn PairSampler,
    trials: usize,
    slack: f64,
) -> Result<CheckReport, OperatorError> {
    run_check(Hypothesis::H2, f, sampler, trials, slack, |x, y, fx, fy| {
        Ok(max_distance(fx, fy)? - max_distance(x, y)?)
    })
}

/// Worst violation of `||F(x)-F(y)||^2 - <F(x)-F(y), x-y>` over sampled pairs.
pub fn check_h3(
    f: &dyn FixedPointOperator,
    sampler: &mut dyn PairSampler,
    trials: usize,
    slack: f64,
) -> Result<CheckReport, OperatorError> {
    run_check(Hypothesis::H3, f, sampler, trials, slack, |x, y, fx, fy| {
        let df = fx.sub(fy)?;
        let dx = x.sub(y)?;
        Ok(inner_product(&df, &df)? - inner_product(&df, &dx)?)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn part(sizes: &[usize]) -> BlockPartition {
        BlockPartition::new(sizes).unwrap()
    }

    fn negate(p: BlockPartition) -> FnOperator {
        FnOperator::new(p, Claims::default(), |x| Ok(x.iter().map(|v| -v).collect()))
    }

    #[test]
    fn apply_examples() {
        let p = part(&[1, 1]);
        let x = BlockVector::new(p.clone(), vec![4.0, 2.0]).unwrap();
        assert_eq!(apply(&Identity::new(p.clone()), &x).unwrap(), x);
        let half = Scale::new(p.clone(), 0.5);
        assert_eq!(apply(&half, &x).unwrap().as_slice(), &[2.0, 1.0]);
        let other = BlockVector::new(part(&[2]), vec![4.0, 2.0]).unwrap();
        assert!(matches!(
            apply(&half, &other),
            Err(OperatorError::Partition(
                BlockError::PartitionMismatch { .. }
            ))
        ));
    }

    #[test]
    fn evaluation_failure_propagates() {
        let p = part(&[1]);
        let f = FnOperator::new(p.clone(), Claims::default(), |_| Err("boom".into()));
        let x = BlockVector::zeros(&p);
        assert_eq!(
            apply(&f, &x),
            Err(OperatorError::EvaluationFailure("boom".into()))
        );
    }

    #[test]
    fn h2_examples() {
        let p = part(&[2, 1]);
        let mut s = UniformPairSampler::new(7);
        let r = check_h2(&Scale::new(p.clone(), 0.5), &mut s, 200, 0.0).unwrap();
        assert!(r.passed && r.worst_violation <= 0.0 && r.witness.is_none());

        let r = check_h2(&Identity::new(p.clone()), &mut s, 200, 0.0).unwrap();
        assert!(r.passed);
        assert_eq!(r.worst_violation, 0.0);

        let r = check_h2(&Scale::new(p.clone(), 2.0), &mut s, 200, 1e-10).unwrap();
        assert!(!r.passed);
        let w = r.witness.unwrap();
        let wx = BlockVector::new(p.clone(), w.x).unwrap();
        let wy = BlockVector::new(p, w.y).unwrap();
        let d = max_distance(&wx, &wy).unwrap();
        assert!((r.worst_violation - d).abs() <= 1e-12 * d.max(1.0));
    }

    #[test]
    fn h3_examples() {
        let p = part(&[3]);
        let mut s = UniformPairSampler::new(11);
        assert!(
            check_h3(&Scale::new(p.clone(), 0.5), &mut s, 200, 0.0)
                .unwrap()
                .passed
        );
        let r = check_h3(&Identity::new(p.clone()), &mut s, 200, 0.0).unwrap();
        assert!(r.passed && r.worst_violation.abs() <= 1e-12);
        let r = check_h3(&negate(p), &mut s, 200, 1e-10).unwrap();
        assert!(!r.passed && r.witness.is_some());
        assert!(r.worst_violation > 0.0);
    }

    #[test]
    fn checks_are_seed_deterministic() {
        let p = part(&[1, 2]);
        let f = Scale::new(p, 1.5);
        let a = check_h3(&f, &mut UniformPairSampler::new(3), 100, 0.0).unwrap();
        let b = check_h3(&f, &mut UniformPairSampler::new(3), 100, 0.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scale_claims() {
        let p = part(&[1]);
        assert_eq!(
            Scale::new(p.clone(), 0.5).claims(),
            Claims { h2: true, h3: true }
        );
        assert_eq!(
            Scale::new(p.clone(), -1.0).claims(),
            Claims {
                h2: true,
                h3: false
            }
        );
        assert_eq!(
            Scale::new(p, 2.0).claims(),
            Claims {
                h2: false,
                h3: false
            }
        );
    }
}
