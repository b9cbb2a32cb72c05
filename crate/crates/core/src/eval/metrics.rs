use serde::{Deserialize, Serialize};

use crate::data::{GroundTruth, TargetSet};
use crate::net::{predict, Model};
use crate::numkit::Matrix;
use crate::{Error, Result};

/// Open-set accuracies. Ground-truth implicit classes form one unknown class,
/// as do predictions at or beyond `num_known`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OsMetrics {
    pub os: f64,
    pub os_star: f64,
    /// Accuracy per known class, then the unknown class; `None` for a class
    /// with no target samples.
    pub per_class: Vec<Option<f64>>,
}

impl OsMetrics {
    /// Classes left out of the averages because the target has no sample of them.
    pub fn missing_classes(&self) -> Vec<usize> {
        (0..self.per_class.len()).filter(|&c| self.per_class[c].is_none()).collect()
    }
}

pub fn os_metrics(predictions: &[usize], truth: &GroundTruth, num_known: usize) -> Result<OsMetrics> {
    if predictions.len() != truth.len() {
        return Err(Error::shape("os_metrics", truth.len(), predictions.len()));
    }
    let collapse = |c: usize| c.min(num_known);
    let mut hits = vec![0usize; num_known + 1];
    let mut totals = vec![0usize; num_known + 1];
    for (&p, &t) in predictions.iter().zip(truth.labels()) {
        let t = collapse(t);
        totals[t] += 1;
        if collapse(p) == t {
            hits[t] += 1;
        }
    }
    let per_class: Vec<Option<f64>> = hits
        .iter()
        .zip(&totals)
        .map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64))
        .collect();
    let mean = |xs: &[Option<f64>]| -> Option<f64> {
        let present: Vec<f64> = xs.iter().flatten().copied().collect();
        (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
    };
    let os_star = mean(&per_class[..num_known])
        .ok_or_else(|| Error::Undefined("OS*: the target has no known-class samples".into()))?;
    let os = mean(&per_class).expect("known classes are present");
    Ok(OsMetrics {
        os,
        os_star,
        per_class,
    })
}

/// Absolute error of an implicit-class count estimate.
pub fn k_error(k_star: usize, k_gt: usize) -> f64 {
    k_star.abs_diff(k_gt) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    /// Distinct ground-truth implicit classes among the selections.
    pub count: usize,
    /// Some discovered output had fewer than `n` samples predicted into it.
    pub short: bool,
}

/// For every discovered output, the `n` target samples with the highest
/// probability for it (ties by index); counts the distinct ground-truth
/// implicit classes they cover.
pub fn correspondence_from_probs(
    probs: &Matrix,
    truth: &GroundTruth,
    num_known: usize,
    n: usize,
) -> Result<Correspondence> {
    if probs.rows() != truth.len() {
        return Err(Error::shape("correspondence", truth.len(), probs.rows()));
    }
    if probs.cols() <= num_known {
        return Err(Error::contract("correspondence needs at least one discovered output"));
    }
    let argmax: Vec<usize> = probs.iter_rows().map(crate::discovery::argmax).collect();
    let mut covered: Vec<usize> = Vec::new();
    let mut short = probs.rows() < n;
    for j in num_known..probs.cols() {
        let mut order: Vec<usize> = (0..probs.rows()).collect();
        order.sort_by(|&a, &b| probs.get(b, j).total_cmp(&probs.get(a, j)).then(a.cmp(&b)));
        covered.extend(
            order
                .iter()
                .take(n)
                .map(|&i| truth.labels()[i])
                .filter(|&t| t >= num_known),
        );
        short |= argmax.iter().filter(|&&a| a == j).count() < n;
    }
    covered.sort_unstable();
    covered.dedup();
    Ok(Correspondence {
        count: covered.len(),
        short,
    })
}

pub fn correspondence(model: &Model, target: &TargetSet, truth: &GroundTruth, n: usize) -> Result<Correspondence> {
    let probs = predict(model, target.features())?;
    correspondence_from_probs(&probs, truth, model.num_known(), n)
}

/// Mean silhouette coefficient; singleton clusters score 0.
///
/// A plain baseline for comparing cluster counts, not used by training.
pub fn silhouette(x: &Matrix, assignment: &[usize]) -> Result<f64> {
    let n = x.rows();
    if assignment.len() != n {
        return Err(Error::shape("silhouette", n, assignment.len()));
    }
    let k = assignment.iter().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(Error::Undefined("silhouette needs at least two clusters".into()));
    }
    let sizes = assignment.iter().fold(vec![0usize; k], |mut s, &c| {
        s[c] += 1;
        s
    });
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if i != j {
                sums[assignment[j]] += crate::numkit::squared_distance(x.row(i), x.row(j)).sqrt();
            }
        }
        let own = assignment[i];
        if sizes[own] < 2 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            total += (b - a) / a.max(b);
        }
    }
    Ok(total / n as f64)
}
