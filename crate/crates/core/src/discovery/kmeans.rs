use serde::{Deserialize, Serialize};

use crate::numkit::{squared_distance, Matrix, Rng};
use crate::{Error, Result};

/// Result of one k-means fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    pub centroids: Matrix,
    pub assignment: Vec<usize>,
    pub sse: f64,
    pub iterations: usize,
    /// SSE after every assignment step of the winning run.
    pub sse_history: Vec<f64>,
}

/// Index of the nearest centroid, lowest index on ties.
fn nearest(x: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.iter_rows().enumerate() {
        let d = squared_distance(x, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ (D²) seeding.
fn seed_centroids(x: &Matrix, k: usize, rng: &mut Rng) -> Matrix {
    let n = x.rows();
    let mut centroids = Matrix::zeros(k, x.cols());
    let first = rng.below(n);
    centroids.row_mut(0).copy_from_slice(x.row(first));
    let mut d2: Vec<f64> = x.iter_rows().map(|r| squared_distance(r, x.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.uniform() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // Rounding can leave `chosen` on a zero-weight tail point.
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&w| w > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.below(n)
        };
        centroids.row_mut(c).copy_from_slice(x.row(pick));
        for (i, r) in x.iter_rows().enumerate() {
            d2[i] = d2[i].min(squared_distance(r, x.row(pick)));
        }
    }
    centroids
}

fn lloyd(x: &Matrix, k: usize, max_iter: usize, rng: &mut Rng) -> Clustering {
    let (n, d) = x.shape();
    let mut centroids = seed_centroids(x, k, rng);
    let mut assignment = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let mut changed = false;
        let mut dist = vec![0.0; n];
        for (i, r) in x.iter_rows().enumerate() {
            let (c, dd) = nearest(r, &centroids);
            dist[i] = dd;
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
        }
        // Empty clusters take the point farthest from its current centroid.
        let mut counts = vec![0usize; k];
        assignment.iter().for_each(|&c| counts[c] += 1);
        for c in 0..k {
            if counts[c] == 0 {
                let (far, _) = dist
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| counts[assignment[*i]] > 1)
                    .fold((usize::MAX, -1.0), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
                if far == usize::MAX {
                    continue;
                }
                counts[assignment[far]] -= 1;
                assignment[far] = c;
                counts[c] = 1;
                dist[far] = 0.0;
                centroids.row_mut(c).copy_from_slice(x.row(far));
                changed = true;
            }
        }
        history.push(dist.iter().sum());
        if !changed || iterations >= max_iter {
            break;
        }
        iterations += 1;

        let mut sums = Matrix::zeros(k, d);
        for (r, &c) in x.iter_rows().zip(&assignment) {
            for (s, v) in sums.row_mut(c).iter_mut().zip(r) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
    }
    let sse = x
        .iter_rows()
        .zip(&assignment)
        .map(|(r, &c)| squared_distance(r, centroids.row(c)))
        .sum();
    Clustering {
        k,
        centroids,
        assignment,
        sse,
        iterations,
        sse_history: history,
    }
}

/// Best-of-`restarts` Lloyd's algorithm with k-means++ seeding.
///
/// Each restart draws its own generator from `rng` in order, so a run with
/// more restarts repeats the runs of one with fewer and then adds more.
/// Lloyd stops at an assignment fixpoint or after `max_iter` updates.
pub fn kmeans_pp(
    x: &Matrix,
    k: usize,
    rng: &mut Rng,
    restarts: usize,
    max_iter: usize,
) -> Result<Clustering> {
    let n = x.rows();
    if k == 0 || k > n {
        return Err(Error::contract(format!("kmeans_pp: k={k} with {n} points")));
    }
    let mut best: Option<Clustering> = None;
    for _ in 0..restarts.max(1) {
        let mut run_rng = rng.fork();
        let run = lloyd(x, k, max_iter, &mut run_rng);
        if best.as_ref().map_or(true, |b| run.sse < b.sse) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}
