use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{evaluate_run, MetricsReport};
use crate::adapter::{AblationMode, TrainConfig};
use crate::data::{GroundTruth, LabeledSet, TargetSet};
use crate::Result;

/// One `(mode, seed)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: AblationMode,
    pub seed: u64,
    pub os: f64,
    pub os_star: f64,
    pub k_star: usize,
    pub k_gt: usize,
    pub k_error: f64,
    pub correspondence_3: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub sd: f64,
}

impl MeanSd {
    pub fn of(xs: &[f64]) -> MeanSd {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanSd { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: AblationMode,
    pub runs: usize,
    pub os: MeanSd,
    pub os_star: MeanSd,
    pub k_error: MeanSd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub summary: Vec<ModeSummary>,
}

impl AblationTable {
    pub fn summary_for(&self, mode: AblationMode) -> Option<&ModeSummary> {
        self.summary.iter().find(|s| s.mode == mode)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serialises") + "\n"
    }

    /// Per-run rows.
    pub fn rows_csv(&self) -> String {
        let mut out = String::from("mode,seed,os,os_star,k_star,k_gt,k_error,correspondence_3\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:?},{:?},{},{},{:?},{}",
                r.mode, r.seed, r.os, r.os_star, r.k_star, r.k_gt, r.k_error, r.correspondence_3
            );
        }
        out
    }

    /// One row per mode with mean and standard deviation columns.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "mode,runs,os_mean,os_sd,os_star_mean,os_star_sd,k_error_mean,k_error_sd\n",
        );
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{},{},{:?},{:?},{:?},{:?},{:?},{:?}",
                s.mode,
                s.runs,
                s.os.mean,
                s.os.sd,
                s.os_star.mean,
                s.os_star.sd,
                s.k_error.mean,
                s.k_error.sd
            );
        }
        out
    }
}

/// Builds the data for one seed: source, target and evaluation-only truth.
pub type DataFn<'a> = dyn Fn(u64) -> Result<(LabeledSet, TargetSet, GroundTruth)> + Sync + 'a;

/// Runs every `(mode, seed)` cell, in parallel, and aggregates per mode.
///
/// Each cell uses `base` with its mode and seed substituted. The `k_gt_*`
/// modes get `k_gt` from the seed's ground truth unless `base` sets it.
pub fn ablation_suite(
    base: &TrainConfig,
    modes: &[AblationMode],
    seeds: &[u64],
    data: &DataFn<'_>,
) -> Result<AblationTable> {
    let cells: Vec<(AblationMode, u64)> = modes
        .iter()
        .flat_map(|&m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let reports: Vec<MetricsReport> = cells
        .par_iter()
        .map(|&(mode, seed)| {
            let (source, mut target, truth) = data(seed)?;
            let cfg = TrainConfig {
                ablation_mode: mode,
                seed,
                k_gt: base
                    .k_gt
                    .or_else(|| Some(truth.num_implicit(source.num_classes()).max(1))),
                ..base.clone()
            };
            Ok(evaluate_run(&cfg, &source, &mut target, &truth)?.1)
        })
        .collect::<Result<_>>()?;
    let rows: Vec<AblationRow> = cells
        .iter()
        .zip(&reports)
        .map(|(&(mode, seed), r)| AblationRow {
            mode,
            seed,
            os: r.os,
            os_star: r.os_star,
            k_star: r.k_star,
            k_gt: r.k_gt,
            k_error: r.k_error,
            correspondence_3: r.correspondence.get(&3).copied().unwrap_or(0),
        })
        .collect();
    let summary = modes
        .iter()
        .map(|&mode| {
            let mine: Vec<&AblationRow> = rows.iter().filter(|r| r.mode == mode).collect();
            let col = |f: fn(&AblationRow) -> f64| MeanSd::of(&mine.iter().map(|r| f(r)).collect::<Vec<_>>());
            ModeSummary {
                mode,
                runs: mine.len(),
                os: col(|r| r.os),
                os_star: col(|r| r.os_star),
                k_error: col(|r| r.k_error),
            }
        })
        .collect();
    Ok(AblationTable { rows, summary })
}
