use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix as Weights;

use crate::{Error, Result};

/// Co-occurrence counts, `clusters x labels`.
pub fn cooccurrence(clusters: &[usize], labels: &[usize]) -> Vec<Vec<i64>> {
    let nc = clusters.iter().max().map_or(0, |m| m + 1);
    let nl = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![vec![0i64; nl]; nc];
    for (&c, &l) in clusters.iter().zip(labels) {
        counts[c][l] += 1;
    }
    counts
}

/// Largest total agreement of an injective cluster-to-label mapping.
pub fn best_matching(counts: &[Vec<i64>]) -> i64 {
    let rows = counts.len();
    let cols = counts.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return 0;
    }
    // The solver needs rows <= columns; a matching is symmetric in the two sides.
    let weights = if rows <= cols {
        Weights::from_fn(rows, cols, |(i, j)| counts[i][j])
    } else {
        Weights::from_fn(cols, rows, |(i, j)| counts[j][i])
    };
    kuhn_munkres(&weights).0
}

/// Fraction of points whose cluster, under the best one-to-one mapping of
/// clusters to labels, carries their label. Unmapped clusters count as wrong.
pub fn clustering_accuracy(clusters: &[usize], labels: &[usize]) -> Result<f64> {
    if clusters.len() != labels.len() {
        return Err(Error::shape("clustering_accuracy", labels.len(), clusters.len()));
    }
    if labels.is_empty() {
        return Err(Error::Undefined("clustering accuracy of an empty set".into()));
    }
    let matched = best_matching(&cooccurrence(clusters, labels));
    Ok(matched as f64 / labels.len() as f64)
}
