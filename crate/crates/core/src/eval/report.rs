use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{correspondence_from_probs, k_error, os_metrics, OsMetrics};
use crate::adapter::{run, AblationMode, Observer, OuterRecord, RunState, TrainConfig};
use crate::data::{GroundTruth, LabeledSet, TargetSet};
use crate::discovery::{argmax, SweepPoint};
use crate::losses::LossBundle;
use crate::net::{predict, Model};
use crate::{Error, Result};

/// Top-n sizes reported for implicit-class correspondence.
pub const CORRESPONDENCE_NS: [usize; 3] = [1, 3, 5];

/// First 16 hex digits of the SHA-256 of `value`'s JSON encoding.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serialises");
    let digest = Sha256::digest(&json);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
}

/// Machine-readable record of one outer epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub k_star: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_ca: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_elbow: Option<usize>,
    pub losses: LossBundle,
    pub os: f64,
    pub os_star: f64,
    pub discovery_aborted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoverySummary {
    pub k_ca: usize,
    pub k_elbow: usize,
    pub k_hat: usize,
    pub elbow_fallback: bool,
    pub sweep: Vec<SweepPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: AblationMode,
    pub os: f64,
    pub os_star: f64,
    /// Known classes, then the unknown class; `null` where the target has no samples.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub missing_classes: Vec<usize>,
    pub k_star: usize,
    pub k_gt: usize,
    pub k_error: f64,
    pub correspondence: BTreeMap<usize, usize>,
    pub correspondence_short: bool,
    pub k_trajectory: Vec<usize>,
    pub epochs: Vec<EpochLog>,
    /// Last count estimate; absent when the mode fixes k.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discovery: Option<DiscoverySummary>,
    pub provenance: Provenance,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub fn predictions(model: &Model, target: &TargetSet) -> Result<Vec<usize>> {
    Ok(predict(model, target.features())?.iter_rows().map(argmax).collect())
}

pub fn evaluate_model(model: &Model, target: &TargetSet, truth: &GroundTruth) -> Result<OsMetrics> {
    os_metrics(&predictions(model, target)?, truth, model.num_known())
}

type EpochHook<'a> = Box<dyn FnMut(&EpochLog, &Model) -> Result<()> + 'a>;

/// Scores the model against ground truth after every outer epoch.
pub struct Evaluator<'a> {
    truth: &'a GroundTruth,
    logs: Vec<EpochLog>,
    hook: Option<EpochHook<'a>>,
}

impl<'a> Evaluator<'a> {
    pub fn new(truth: &'a GroundTruth) -> Self {
        Evaluator {
            truth,
            logs: Vec::new(),
            hook: None,
        }
    }

    /// Also call `hook` with each epoch's log.
    pub fn with_hook(mut self, hook: impl FnMut(&EpochLog, &Model) -> Result<()> + 'a) -> Self {
        self.hook = Some(Box::new(hook));
        self
    }

    pub fn logs(&self) -> &[EpochLog] {
        &self.logs
    }

    pub fn into_logs(self) -> Vec<EpochLog> {
        self.logs
    }
}

impl Observer for Evaluator<'_> {
    fn outer_epoch(&mut self, record: &OuterRecord, model: &Model, target: &TargetSet) -> Result<()> {
        let m = evaluate_model(model, target, self.truth)?;
        let log = EpochLog {
            epoch: record.epoch,
            k_star: record.k_star,
            k_ca: record.k_ca,
            k_elbow: record.k_elbow,
            losses: record.losses.clone(),
            os: m.os,
            os_star: m.os_star,
            discovery_aborted: record.discovery_aborted,
        };
        if let Some(hook) = &mut self.hook {
            hook(&log, model)?;
        }
        self.logs.push(log);
        Ok(())
    }
}

/// Final report for a finished run.
pub fn build_report(
    cfg: &TrainConfig,
    state: &RunState,
    target: &TargetSet,
    truth: &GroundTruth,
    epochs: Vec<EpochLog>,
) -> Result<MetricsReport> {
    if truth.len() != target.len() {
        return Err(Error::shape("report", target.len(), truth.len()));
    }
    let num_known = state.model.num_known();
    let probs = predict(&state.model, target.features())?;
    let preds: Vec<usize> = probs.iter_rows().map(argmax).collect();
    let m = os_metrics(&preds, truth, num_known)?;
    let k_gt = truth.num_implicit(num_known);
    let mut correspondence = BTreeMap::new();
    let mut short = false;
    for n in CORRESPONDENCE_NS {
        let c = correspondence_from_probs(&probs, truth, num_known, n)?;
        short |= c.short;
        correspondence.insert(n, c.count);
    }
    let discovery = state
        .discovery
        .as_ref()
        .and_then(|d| d.estimate.as_ref())
        .map(|e| DiscoverySummary {
            k_ca: e.k_ca,
            k_elbow: e.k_elbow,
            k_hat: e.k_hat,
            elbow_fallback: e.elbow_fallback,
            sweep: e.sweep.clone(),
        });
    Ok(MetricsReport {
        mode: cfg.ablation_mode,
        os: m.os,
        os_star: m.os_star,
        missing_classes: m.missing_classes(),
        per_class_accuracy: m.per_class,
        k_star: state.k_star,
        k_gt,
        k_error: k_error(state.k_star, k_gt),
        correspondence,
        correspondence_short: short,
        k_trajectory: state.k_trajectory.clone(),
        epochs,
        discovery,
        provenance: Provenance {
            seed: cfg.seed,
            config_hash: config_hash(cfg),
        },
    })
}

/// Trains with per-epoch evaluation and builds the final report.
///
/// `truth` only reaches the evaluator; training itself never sees it.
pub fn evaluate_run(
    cfg: &TrainConfig,
    source: &LabeledSet,
    target: &mut TargetSet,
    truth: &GroundTruth,
) -> Result<(RunState, MetricsReport)> {
    evaluate_run_with(cfg, source, target, truth, Evaluator::new(truth))
}

pub fn evaluate_run_with(
    cfg: &TrainConfig,
    source: &LabeledSet,
    target: &mut TargetSet,
    truth: &GroundTruth,
    mut evaluator: Evaluator<'_>,
) -> Result<(RunState, MetricsReport)> {
    let state = run(cfg, source, target, &mut evaluator)?;
    let report = build_report(cfg, &state, target, truth, evaluator.into_logs())?;
    Ok((state, report))
}
