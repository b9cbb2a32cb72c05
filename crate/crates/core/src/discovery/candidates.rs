use serde::{Deserialize, Serialize};

use crate::data::TargetSet;
use crate::losses::entropy_unchecked;
use crate::net::Model;
use crate::numkit::{apply_pca, fit_pca, Matrix};
use crate::Result;

/// Low-entropy target samples, split by whether their pseudo-label is a
/// known class or a discovered one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSets {
    pub num_known: usize,
    /// Classifier width the pseudo-labels were taken from.
    pub out_dim: usize,
    /// Target indices with pseudo-label `< num_known`.
    pub known_idx: Vec<usize>,
    pub known_labels: Vec<usize>,
    /// Target indices with pseudo-label `>= num_known`.
    pub implicit_idx: Vec<usize>,
    pub implicit_labels: Vec<usize>,
    /// Clustering features, one row per candidate: known rows first, then implicit.
    pub features: Matrix,
    /// Pseudo-classes that received no target sample at all.
    pub empty_classes: Vec<usize>,
}

impl CandidateSets {
    pub fn known_features(&self) -> Matrix {
        let idx: Vec<usize> = (0..self.known_idx.len()).collect();
        self.features.select_rows(&idx)
    }

    pub fn implicit_features(&self) -> Matrix {
        let off = self.known_idx.len();
        let idx: Vec<usize> = (off..off + self.implicit_idx.len()).collect();
        self.features.select_rows(&idx)
    }

    pub fn len(&self) -> usize {
        self.known_idx.len() + self.implicit_idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Arg-max with ties going to the lowest index.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Keeps, for every pseudo-class, the `ceil(n_c / 2)` members of lowest
/// entropy (ties by target index). Returned per class in ascending class order.
pub(crate) fn lowest_entropy_half(pseudo: &[usize], entropy: &[f64], out_dim: usize) -> Vec<Vec<usize>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); out_dim];
    for (i, &c) in pseudo.iter().enumerate() {
        by_class[c].push(i);
    }
    for members in &mut by_class {
        members.sort_by(|&a, &b| entropy[a].total_cmp(&entropy[b]).then(a.cmp(&b)));
        members.truncate(members.len().div_ceil(2));
    }
    by_class
}

/// Pseudo-labels the target by arg-max, keeps the confident half of each
/// pseudo-class and PCA-reduces their `F` features to at most `pca_dim`.
pub fn select_candidates(model: &Model, target: &TargetSet, pca_dim: usize) -> Result<CandidateSets> {
    let fwd = crate::net::forward(model, target.features())?;
    let num_known = model.num_known();
    let out_dim = model.out_dim();
    let pseudo: Vec<usize> = fwd.probs.iter_rows().map(argmax).collect();
    let entropy: Vec<f64> = fwd.probs.iter_rows().map(entropy_unchecked).collect();
    let kept = lowest_entropy_half(&pseudo, &entropy, out_dim);

    let empty_classes: Vec<usize> = (0..out_dim).filter(|&c| kept[c].is_empty()).collect();
    let mut known_idx = Vec::new();
    let mut known_labels = Vec::new();
    let mut implicit_idx = Vec::new();
    let mut implicit_labels = Vec::new();
    for (c, members) in kept.iter().enumerate() {
        let (idx, labels) = if c < num_known {
            (&mut known_idx, &mut known_labels)
        } else {
            (&mut implicit_idx, &mut implicit_labels)
        };
        idx.extend_from_slice(members);
        labels.extend(std::iter::repeat(c).take(members.len()));
    }

    let order: Vec<usize> = known_idx.iter().chain(&implicit_idx).copied().collect();
    let raw = fwd.features.select_rows(&order);
    let d_out = pca_dim.min(raw.cols()).min(raw.rows().saturating_sub(1));
    let features = if d_out >= 1 {
        apply_pca(&fit_pca(&raw, d_out)?, &raw)?
    } else {
        raw
    };
    Ok(CandidateSets {
        num_known,
        out_dim,
        known_idx,
        known_labels,
        implicit_idx,
        implicit_labels,
        features,
        empty_classes,
    })
}
