//! Block-partitioned vectors of `R^n = R^{n_1} x ... x R^{n_alpha}`.
//!
//! Blocks are stored contiguously in partition order, so a block view is just
//! an index range into the flat coordinate slice. Three norms are provided:
//! the euclidean inner product (sum of the per-block inner products), the
//! euclidean norm and the block maximum norm `max_i ||x_i||`.

use std::ops::Range;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BlockError {
    #[error("partition must contain at least one block")]
    EmptyPartition,
    #[error("block {index} has invalid size {size} (sizes must be >= 1)")]
    InvalidSize { index: usize, size: usize },
    #[error("partition mismatch: expected {expected:?}, found {found:?}")]
    PartitionMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("expected {expected} coordinates, found {found}")]
    LengthMismatch { expected: usize, found: usize },
}

/// Splitting `n = n_1 + ... + n_alpha` of the ambient space into blocks.
///
/// Cloning is cheap; the size table is shared.
#[derive(Debug, Clone)]
pub struct BlockPartition {
    sizes: Arc<[usize]>,
    offsets: Arc<[usize]>,
}

impl BlockPartition {
    pub fn new(sizes: &[usize]) -> Result<Self, BlockError> {
        if sizes.is_empty() {
            return Err(BlockError::EmptyPartition);
        }
        if let Some((index, &size)) = sizes.iter().enumerate().find(|(_, &s)| s < 1) {
            return Err(BlockError::InvalidSize { index, size });
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &s in sizes {
            acc += s;
            offsets.push(acc);
        }
        Ok(Self {
            sizes: sizes.into(),
            offsets: offsets.into(),
        })
    }

    /// One block per coordinate.
    pub fn singletons(n: usize) -> Result<Self, BlockError> {
        Self::new(&vec![1; n])
    }

    /// Number of blocks (alpha).
    pub fn alpha(&self) -> usize {
        self.sizes.len()
    }

    /// Ambient dimension n.
    pub fn total(&self) -> usize {
        self.offsets[self.sizes.len()]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Coordinate range of block `i` (0-based).
    pub fn range(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn ensure_same(&self, other: &BlockPartition) -> Result<(), BlockError> {
        if self == other {
            Ok(())
        } else {
            Err(BlockError::PartitionMismatch {
                expected: self.sizes.to_vec(),
                found: other.sizes.to_vec(),
            })
        }
    }
}

impl PartialEq for BlockPartition {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.sizes, &other.sizes) || self.sizes == other.sizes
    }
}

impl Eq for BlockPartition {}

/// Alias kept for callers that prefer the operation name.
pub fn make_partition(sizes: &[usize]) -> Result<BlockPartition, BlockError> {
    BlockPartition::new(sizes)
}

/// A point `x = (x_1, ..., x_alpha)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVector {
    partition: BlockPartition,
    data: Vec<f64>,
}

impl BlockVector {
    pub fn new(partition: BlockPartition, data: Vec<f64>) -> Result<Self, BlockError> {
        if data.len() != partition.total() {
            return Err(BlockError::LengthMismatch {
                expected: partition.total(),
                found: data.len(),
            });
        }
        Ok(Self { partition, data })
    }

    pub fn zeros(partition: &BlockPartition) -> Self {
        Self {
            data: vec![0.0; partition.total()],
            partition: partition.clone(),
        }
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.data[self.partition.range(i)]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        let r = self.partition.range(i);
        &mut self.data[r]
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.partition.alpha()).map(move |i| self.block(i))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self - other`, checked for matching partitions.
    pub fn sub(&self, other: &BlockVector) -> Result<BlockVector, BlockError> {
        self.partition.ensure_same(&other.partition)?;
        Ok(BlockVector {
            partition: self.partition.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn norm_l2(&self) -> f64 {
        l2_norm(&self.data)
    }

    pub fn norm_max(&self) -> f64 {
        self.blocks().map(l2_norm).fold(0.0, f64::max)
    }
}

/// `<x, y> = sum_i <x_i, y_i>_i`.
pub fn inner_product(x: &BlockVector, y: &BlockVector) -> Result<f64, BlockError> {
    x.partition.ensure_same(&y.partition)?;
    Ok(dot(&x.data, &y.data))
}

/// `||x||_max = max_i ||x_i||_i`.
pub fn block_max_norm(x: &BlockVector) -> f64 {
    x.norm_max()
}

pub fn euclidean_norm(x: &BlockVector) -> f64 {
    x.norm_l2()
}

/// Block maximum norm of `x - y` without allocating.
pub fn max_distance(x: &BlockVector, y: &BlockVector) -> Result<f64, BlockError> {
    x.partition.ensure_same(&y.partition)?;
    let p = &x.partition;
    Ok((0..p.alpha())
        .map(|i| {
            let r = p.range(i);
            x.data[r.clone()]
                .iter()
                .zip(&y.data[r])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
