//! Datasets: labelled source sets, unlabelled target sets, evaluation-only
//! ground truth, synthetic shifted benchmarks, CSV I/O and batching.
//!
//! Target ground truth lives in its own [`GroundTruth`] value. Nothing in
//! the training path (`net`, `losses`, `discovery`, `adapter`) accepts one;
//! only `eval` does.

mod csv;
mod synth;

pub use self::csv::{load_csv, write_source_csv, write_target_csv, Loaded, Schema};
pub use synth::{generate, Imbalance, ShiftSpec};

use serde::{Deserialize, Serialize};

use crate::numkit::{Matrix, Rng};
use crate::{Error, Result};

/// Source samples with class labels in `0..num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledSet {
    /// Every class in `0..num_classes` must occur at least once.
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::shape("LabeledSet", features.rows(), labels.len()));
        }
        let mut seen = vec![false; num_classes];
        for &l in &labels {
            if l >= num_classes {
                return Err(Error::contract(format!("label {l} outside 0..{num_classes}")));
            }
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::contract(format!("source class {missing} has no samples")));
        }
        if !features.is_finite() {
            return Err(Error::contract("source features must be finite"));
        }
        Ok(LabeledSet {
            features,
            labels,
            num_classes,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// Unlabelled target samples plus the pseudo-labels assigned during training.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSet {
    features: Matrix,
    pub pseudo_labels: Vec<Option<usize>>,
}

impl TargetSet {
    pub fn new(features: Matrix) -> Result<Self> {
        if !features.is_finite() {
            return Err(Error::contract("target features must be finite"));
        }
        let n = features.rows();
        Ok(TargetSet {
            features,
            pseudo_labels: vec![None; n],
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// True target classes, for evaluation only. Indices at or above the number
/// of source classes are implicit (target-only) classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth(Vec<usize>);

impl GroundTruth {
    pub fn new(labels: Vec<usize>) -> Self {
        GroundTruth(labels)
    }

    /// Placeholder truth of length `n`; every entry is the same out-of-range value.
    pub fn sentinel(n: usize) -> Self {
        GroundTruth(vec![u32::MAX as usize; n])
    }

    pub fn labels(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of distinct implicit classes present.
    pub fn num_implicit(&self, num_known: usize) -> usize {
        let mut ids: Vec<usize> = self.0.iter().copied().filter(|&l| l >= num_known).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}

/// Shuffled partition of `0..len` into batches of `batch_size`; a trailing
/// batch with fewer than two samples is dropped.
pub fn batches(len: usize, batch_size: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::contract(format!("batch_size must be >= 2, got {batch_size}")));
    }
    let mut idx: Vec<usize> = (0..len).collect();
    rng.shuffle(&mut idx);
    Ok(idx
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect())
}
