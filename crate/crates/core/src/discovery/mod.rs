//! Implicit-class discovery.
//!
//! From a trained model: take the confident half of every pseudo-class
//! ([`select_candidates`]), sweep the total cluster count over
//! `|C_S|+1 ..= |C_S|+k_max` with k-means++, score every count by clustering
//! accuracy on the known candidates and by the SSE elbow, average the two
//! picks into the number of implicit classes ([`estimate_k`]), then cluster
//! the implicit candidates into that many pseudo-classes
//! ([`assign_pseudo_classes`]).

mod accuracy;
mod candidates;
mod elbow;
mod kmeans;

pub use accuracy::{best_matching, clustering_accuracy, cooccurrence};
pub use candidates::{select_candidates, CandidateSets};
pub use elbow::elbow_k;
pub use kmeans::{kmeans_pp, Clustering};

pub(crate) use candidates::argmax;


use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TargetSet;
use crate::net::Model;
use crate::numkit::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscoveryConfig {
    /// Largest number of implicit classes considered.
    pub k_max: usize,
    pub pca_dim: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub kneedle_sensitivity: f64,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            k_max: 10,
            pca_dim: 16,
            restarts: 8,
            max_iter: 100,
            kneedle_sensitivity: 1.0,
        }
    }
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_max < 2 {
            return Err(Error::Config("k_max must be >= 2".into()));
        }
        if self.pca_dim == 0 || self.restarts == 0 || self.max_iter == 0 {
            return Err(Error::Config("pca_dim, restarts and max_iter must be >= 1".into()));
        }
        if !(self.kneedle_sensitivity >= 0.0) {
            return Err(Error::Config("kneedle_sensitivity must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Total number of clusters, known plus implicit.
    pub k_total: usize,
    pub sse: f64,
    pub ca: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KEstimate {
    pub k_ca: usize,
    pub k_elbow: usize,
    pub k_hat: usize,
    pub k_star: usize,
    pub sweep: Vec<SweepPoint>,
    /// No knee qualified; `k_elbow` was set to `k_ca`.
    pub elbow_fallback: bool,
    /// There were no implicit candidates; `k_star` is the previous estimate.
    pub no_update: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryResult {
    pub k_star: usize,
    /// Target indices of each discovered class, class `num_known + i` at position `i`.
    pub pseudo_classes: Vec<Vec<usize>>,
    /// `k_star` exceeded the number of implicit candidates and was reduced.
    pub clamped: bool,
}

/// `(k_ca + k_elbow) / 2`, rounding halves up.
pub fn combine_estimates(k_ca: usize, k_elbow: usize) -> usize {
    (k_ca + k_elbow).div_ceil(2)
}

/// Sweeps the total cluster count and estimates the number of implicit classes.
///
/// Sweep point `c` uses `Rng::stream(seed, c)`, so results do not depend on
/// how the sweep is scheduled across threads.
pub fn estimate_k(
    candidates: &CandidateSets,
    cfg: &DiscoveryConfig,
    prior_k: usize,
    seed: u64,
) -> Result<KEstimate> {
    cfg.validate()?;
    let num_known = candidates.num_known;
    if candidates.known_idx.is_empty() {
        return Err(Error::Undefined(
            "clustering accuracy needs known-class candidates".into(),
        ));
    }
    if candidates.implicit_idx.is_empty() {
        return Ok(KEstimate {
            k_ca: num_known + prior_k,
            k_elbow: num_known + prior_k,
            k_hat: num_known + prior_k,
            k_star: prior_k,
            sweep: Vec::new(),
            elbow_fallback: false,
            no_update: true,
        });
    }
    let n = candidates.len();
    let n_known = candidates.known_idx.len();
    let top = (num_known + cfg.k_max).min(n);
    let sweep: Vec<SweepPoint> = (num_known + 1..=top)
        .into_par_iter()
        .map(|c| {
            let mut rng = Rng::stream(seed, c as u64);
            let fit = kmeans_pp(&candidates.features, c, &mut rng, cfg.restarts, cfg.max_iter)?;
            let ca = clustering_accuracy(&fit.assignment[..n_known], &candidates.known_labels)?;
            Ok(SweepPoint {
                k_total: c,
                sse: fit.sse,
                ca,
            })
        })
        .collect::<Result<_>>()?;
    if sweep.is_empty() {
        return Err(Error::contract(format!(
            "only {n} candidates: cannot cluster into more than {num_known} groups"
        )));
    }

    let mut k_ca = sweep[0].k_total;
    let mut best_ca = sweep[0].ca;
    for p in &sweep[1..] {
        if p.ca > best_ca {
            best_ca = p.ca;
            k_ca = p.k_total;
        }
    }
    let elbow = if sweep.len() >= 4 {
        let curve: Vec<(usize, f64)> = sweep.iter().map(|p| (p.k_total, p.sse)).collect();
        elbow_k(&curve, cfg.kneedle_sensitivity)?
    } else {
        None
    };
    let k_elbow = elbow.unwrap_or(k_ca);
    let k_hat = combine_estimates(k_ca, k_elbow);
    Ok(KEstimate {
        k_ca,
        k_elbow,
        k_hat,
        k_star: k_hat.saturating_sub(num_known).max(1),
        sweep,
        elbow_fallback: elbow.is_none(),
        no_update: false,
    })
}

/// Clusters the implicit candidates into `k_star` groups.
pub fn assign_pseudo_classes(
    candidates: &CandidateSets,
    k_star: usize,
    cfg: &DiscoveryConfig,
    rng: &mut Rng,
) -> Result<DiscoveryResult> {
    if k_star == 0 {
        return Err(Error::contract("k_star must be >= 1"));
    }
    let n = candidates.implicit_idx.len();
    if n == 0 {
        return Err(Error::EmptyUnknown);
    }
    let k = k_star.min(n);
    let fit = kmeans_pp(&candidates.implicit_features(), k, rng, cfg.restarts, cfg.max_iter)?;
    let mut pseudo_classes = vec![Vec::new(); k];
    for (&idx, &c) in candidates.implicit_idx.iter().zip(&fit.assignment) {
        pseudo_classes[c].push(idx);
    }
    Ok(DiscoveryResult {
        k_star: k,
        pseudo_classes,
        clamped: k < k_star,
    })
}

/// How many implicit classes to use in a discovery step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KPolicy {
    Estimate,
    Fixed(usize),
}

/// One full discovery step on a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discovery {
    pub candidates: CandidateSets,
    pub estimate: Option<KEstimate>,
    pub result: DiscoveryResult,
}

impl Discovery {
    /// Pseudo-labelled samples `(target index, label)`: known candidates with
    /// their arg-max labels, implicit candidates with their cluster's label.
    pub fn labeled_samples(&self) -> Vec<(usize, usize)> {
        let num_known = self.candidates.num_known;
        let mut out: Vec<(usize, usize)> = self
            .candidates
            .known_idx
            .iter()
            .copied()
            .zip(self.candidates.known_labels.iter().copied())
            .collect();
        for (i, members) in self.result.pseudo_classes.iter().enumerate() {
            out.extend(members.iter().map(|&t| (t, num_known + i)));
        }
        out
    }
}

/// Candidate selection, count estimation (unless fixed) and pseudo-class assignment.
///
/// Fails with [`Error::EmptyUnknown`] when no target sample is predicted
/// outside the known classes.
pub fn discover(
    model: &Model,
    target: &TargetSet,
    cfg: &DiscoveryConfig,
    policy: KPolicy,
    prior_k: usize,
    seed: u64,
) -> Result<Discovery> {
    let candidates = select_candidates(model, target, cfg.pca_dim)?;
    if candidates.implicit_idx.is_empty() {
        return Err(Error::EmptyUnknown);
    }
    let (k_star, estimate) = match policy {
        KPolicy::Fixed(k) => (k, None),
        KPolicy::Estimate => {
            let est = estimate_k(&candidates, cfg, prior_k, seed)?;
            (est.k_star, Some(est))
        }
    };
    let mut rng = Rng::stream(seed, u64::MAX);
    let result = assign_pseudo_classes(&candidates, k_star, cfg, &mut rng)?;
    Ok(Discovery {
        candidates,
        estimate,
        result,
    })
}
