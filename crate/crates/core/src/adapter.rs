//! Training driver: adversarial pre-training, then alternating implicit-class
//! discovery and self-supervised adaptation with classifier restructuring.
//!
//! [`run`] never sees target ground truth. Anything that needs it (per-epoch
//! evaluation, checkpoint dumps) hooks in through an [`Observer`], which gets
//! read-only access to the model after each epoch.

use serde::{Deserialize, Serialize};

use crate::data::{batches, LabeledSet, TargetSet};
use crate::discovery::{discover, Discovery, DiscoveryConfig, KPolicy};
use crate::losses::{
    correlation_matrix, cross_entropy, loss_adv, loss_kcc, loss_tcc, LossBundle, LossValue,
};
use crate::net::{backward, forward, GradScale, GradTerm, Model, Optimizer, Upstream};
use crate::numkit::{Matrix, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    Full,
    PretrainOnly,
    #[serde(rename = "k_fixed_1")]
    KFixed1,
    KStarNoIters,
    KGtNoIters,
    KGtIters,
}

impl AblationMode {
    pub const ALL: [AblationMode; 6] = [
        AblationMode::PretrainOnly,
        AblationMode::KFixed1,
        AblationMode::KStarNoIters,
        AblationMode::KGtNoIters,
        AblationMode::KGtIters,
        AblationMode::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::PretrainOnly => "pretrain_only",
            AblationMode::KFixed1 => "k_fixed_1",
            AblationMode::KStarNoIters => "k_star_no_iters",
            AblationMode::KGtNoIters => "k_gt_no_iters",
            AblationMode::KGtIters => "k_gt_iters",
        }
    }

    pub fn needs_k_gt(self) -> bool {
        matches!(self, AblationMode::KGtNoIters | AblationMode::KGtIters)
    }

    pub fn estimates_k(self) -> bool {
        matches!(self, AblationMode::Full | AblationMode::KStarNoIters)
    }

    /// Outer epochs actually run for a configured `outer_epochs`.
    pub fn outer_epochs(self, outer_epochs: usize) -> usize {
        match self {
            AblationMode::PretrainOnly => 0,
            AblationMode::KStarNoIters | AblationMode::KGtNoIters => 1,
            _ => outer_epochs,
        }
    }
}

impl std::fmt::Display for AblationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub inner_epochs: usize,
    pub outer_epochs: usize,
    pub k_max: usize,
    pub pca_dim: usize,
    pub grl_lambda: f64,
    pub seed: u64,
    pub ablation_mode: AblationMode,
    /// Implicit-class count used by the `k_gt_*` modes.
    pub k_gt: Option<usize>,
    pub feature_dim: usize,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    pub kneedle_sensitivity: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 32,
            pretrain_epochs: 100,
            inner_epochs: 30,
            outer_epochs: 15,
            k_max: 10,
            pca_dim: 16,
            grl_lambda: 1.0,
            seed: 0,
            ablation_mode: AblationMode::Full,
            k_gt: None,
            feature_dim: 16,
            kmeans_restarts: 8,
            kmeans_max_iter: 100,
            kneedle_sensitivity: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("batch_size", self.batch_size),
            ("pretrain_epochs", self.pretrain_epochs),
            ("inner_epochs", self.inner_epochs),
            ("outer_epochs", self.outer_epochs),
            ("pca_dim", self.pca_dim),
            ("feature_dim", self.feature_dim),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be >= 1")));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be >= 2".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("momentum must be in [0, 1) and weight_decay >= 0".into()));
        }
        if !(self.grl_lambda >= 0.0) {
            return Err(Error::Config("grl_lambda must be >= 0".into()));
        }
        if self.ablation_mode.needs_k_gt() {
            match self.k_gt {
                Some(k) if k >= 1 => {}
                _ => {
                    return Err(Error::Config(format!(
                        "ablation mode {} needs k_gt >= 1",
                        self.ablation_mode
                    )))
                }
            }
        }
        self.discovery().validate()
    }

    pub fn discovery(&self) -> DiscoveryConfig {
        DiscoveryConfig {
            k_max: self.k_max,
            pca_dim: self.pca_dim,
            restarts: self.kmeans_restarts,
            max_iter: self.kmeans_max_iter,
            kneedle_sensitivity: self.kneedle_sensitivity,
        }
    }

    fn optimizer(&self) -> Optimizer {
        Optimizer::new(self.lr, self.momentum, self.weight_decay)
    }

    fn k_policy(&self) -> KPolicy {
        match self.ablation_mode {
            AblationMode::KFixed1 => KPolicy::Fixed(1),
            AblationMode::KGtNoIters | AblationMode::KGtIters => {
                KPolicy::Fixed(self.k_gt.unwrap_or(1))
            }
            _ => KPolicy::Estimate,
        }
    }
}

/// Summary of one outer epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub epoch: usize,
    pub k_star: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_ca: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_elbow: Option<usize>,
    /// Mean losses over the epoch's inner steps.
    pub losses: LossBundle,
    /// No target sample fell outside the known classes; the classifier kept its shape.
    pub discovery_aborted: bool,
    pub elbow_fallback: bool,
    pub k_clamped: bool,
}

#[derive(Debug, Clone)]
pub struct RunState {
    pub model: Model,
    pub k_star: usize,
    /// `k_star` after pre-training, then after every outer epoch.
    pub k_trajectory: Vec<usize>,
    pub pretrain_losses: Vec<LossBundle>,
    /// Mean losses of every inner epoch, in order.
    pub adapt_losses: Vec<LossBundle>,
    pub outer: Vec<OuterRecord>,
    pub discovery: Option<Discovery>,
}

/// Hooks called after each epoch. All methods default to no-ops.
pub trait Observer {
    fn pretrain_epoch(&mut self, _epoch: usize, _losses: &LossBundle, _model: &Model) -> Result<()> {
        Ok(())
    }

    fn outer_epoch(&mut self, _record: &OuterRecord, _model: &Model, _target: &TargetSet) -> Result<()> {
        Ok(())
    }
}

impl Observer for () {}

// Per-purpose streams so that, e.g., changing the number of inner epochs
// does not shift the initialisation.
const STREAM_INIT: u64 = 0;
const STREAM_PRETRAIN: u64 = 1;
const STREAM_ADAPT: u64 = 2;
const STREAM_RESTRUCTURE: u64 = 3;
const STREAM_DISCOVERY: u64 = 4;

/// Endless stream of shuffled batches over `0..len`.
struct BatchCycle {
    len: usize,
    batch_size: usize,
    queue: std::vec::IntoIter<Vec<usize>>,
}

impl BatchCycle {
    fn new(len: usize, batch_size: usize) -> Self {
        BatchCycle {
            len,
            batch_size: batch_size.min(len.max(2)),
            queue: Vec::new().into_iter(),
        }
    }

    fn next(&mut self, rng: &mut Rng) -> Result<Vec<usize>> {
        if let Some(b) = self.queue.next() {
            return Ok(b);
        }
        if self.len < 2 {
            return Ok((0..self.len).collect());
        }
        self.queue = batches(self.len, self.batch_size, rng)?.into_iter();
        Ok(self.queue.next().expect("len >= 2 yields a batch"))
    }
}

/// Places `block` at row `offset` of an otherwise zero `rows`-row matrix.
fn embed(rows: usize, offset: usize, block: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(rows, block.cols());
    for (i, r) in block.iter_rows().enumerate() {
        out.row_mut(offset + i).copy_from_slice(r);
    }
    out
}

fn embedded_term(rows: usize, offset: usize, loss: &LossValue) -> GradTerm {
    match &loss.grad {
        Upstream::Logits(d) => GradTerm::logits(embed(rows, offset, d)),
        Upstream::Probs(d) => GradTerm::probs(embed(rows, offset, d)),
    }
}

fn stack(parts: &[(&Matrix, &[usize])]) -> Matrix {
    let cols = parts[0].0.cols();
    let rows: usize = parts.iter().map(|(_, idx)| idx.len()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut r = 0;
    for (m, idx) in parts {
        for &i in *idx {
            out.row_mut(r).copy_from_slice(m.row(i));
            r += 1;
        }
    }
    out
}

fn rows_of(m: &Matrix, from: usize, to: usize) -> Matrix {
    m.select_rows(&(from..to).collect::<Vec<_>>())
}

fn numerical(phase: &'static str, epoch: usize, losses: &LossBundle, model: &Model) -> Result<()> {
    if !losses.is_finite() {
        return Err(Error::Numerical {
            phase,
            epoch,
            msg: format!("non-finite loss {losses:?}"),
        });
    }
    if !model.is_finite() {
        return Err(Error::Numerical {
            phase,
            epoch,
            msg: "non-finite parameters".into(),
        });
    }
    Ok(())
}

fn finite_outputs(phase: &'static str, probs: &Matrix) -> Result<()> {
    if probs.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical {
            phase,
            epoch: 0,
            msg: "non-finite network outputs".into(),
        })
    }
}

/// Stamps the epoch onto numerical errors raised inside a step.
fn at_epoch<T>(epoch: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Numerical { phase, msg, .. } => Error::Numerical { phase, epoch, msg },
        other => other,
    })
}

fn check_data(model: &Model, source: &LabeledSet, target: &TargetSet) -> Result<()> {
    if source.len() < 2 || target.len() < 2 {
        return Err(Error::contract("source and target need at least two samples each"));
    }
    if source.dim() != target.dim() || source.dim() != model.extractor().input_dim() {
        return Err(Error::shape(
            "adapter",
            format!("input dim {}", model.extractor().input_dim()),
            format!("source {} / target {}", source.dim(), target.dim()),
        ));
    }
    if source.num_classes() != model.num_known() {
        return Err(Error::shape(
            "adapter",
            format!("{} known classes", model.num_known()),
            source.num_classes(),
        ));
    }
    Ok(())
}

/// One pre-training step on a source batch and a target batch.
///
/// `C` descends `L_s + L_adv + L_kcc`; `F` descends `L_s - L_adv + L_kcc`
/// because the adversarial gradient reaches it through a reversal.
pub fn pretrain_step(
    model: &mut Model,
    opt: &mut Optimizer,
    source: &LabeledSet,
    src_idx: &[usize],
    target: &TargetSet,
    tgt_idx: &[usize],
    grl_lambda: f64,
) -> Result<LossBundle> {
    let x = stack(&[(source.features(), src_idx), (target.features(), tgt_idx)]);
    let ns = src_idx.len();
    let rows = x.rows();
    let fwd = forward(model, &x)?;
    finite_outputs("pretrain", &fwd.probs)?;
    let labels: Vec<usize> = src_idx.iter().map(|&i| source.labels()[i]).collect();
    let ce = cross_entropy(&rows_of(&fwd.probs, 0, ns), &labels)?;
    let cm = correlation_matrix(&rows_of(&fwd.probs, ns, rows))?;
    let adv = loss_adv(&cm, model.num_known())?;
    let kcc = loss_kcc(&cm, model.num_known())?;
    let terms = [
        embedded_term(rows, 0, &ce),
        embedded_term(rows, ns, &adv).routed(GradScale::reversal(grl_lambda)),
        embedded_term(rows, ns, &kcc),
    ];
    let grads = backward(model, &fwd.cache, &terms)?;
    model.step(&grads, opt)?;
    Ok(LossBundle {
        l_s: Some(ce.value),
        l_adv: Some(adv.value),
        l_kcc: Some(kcc.value),
        ..LossBundle::default()
    })
}

/// One adaptation step: `L_s` on a source batch, `L_t` on pseudo-labelled
/// target samples (skipped when `pseudo` is empty) and `L_tcc` on a target batch.
#[allow(clippy::too_many_arguments)]
pub fn adapt_step(
    model: &mut Model,
    opt: &mut Optimizer,
    source: &LabeledSet,
    src_idx: &[usize],
    target: &TargetSet,
    pseudo: &[(usize, usize)],
    tgt_idx: &[usize],
) -> Result<LossBundle> {
    let pseudo_idx: Vec<usize> = pseudo.iter().map(|p| p.0).collect();
    let x = stack(&[
        (source.features(), src_idx),
        (target.features(), &pseudo_idx),
        (target.features(), tgt_idx),
    ]);
    let ns = src_idx.len();
    let np = pseudo.len();
    let rows = x.rows();
    let fwd = forward(model, &x)?;
    finite_outputs("adapt", &fwd.probs)?;
    let labels: Vec<usize> = src_idx.iter().map(|&i| source.labels()[i]).collect();
    let ce = cross_entropy(&rows_of(&fwd.probs, 0, ns), &labels)?;
    let cm = correlation_matrix(&rows_of(&fwd.probs, ns + np, rows))?;
    let tcc = loss_tcc(&cm);
    let mut terms = vec![embedded_term(rows, 0, &ce), embedded_term(rows, ns + np, &tcc)];
    let mut bundle = LossBundle {
        l_s: Some(ce.value),
        l_tcc: Some(tcc.value),
        ..LossBundle::default()
    };
    if np > 0 {
        let pseudo_labels: Vec<usize> = pseudo.iter().map(|p| p.1).collect();
        let lt = cross_entropy(&rows_of(&fwd.probs, ns, ns + np), &pseudo_labels)?;
        terms.push(embedded_term(rows, ns, &lt));
        bundle.l_t = Some(lt.value);
    }
    let grads = backward(model, &fwd.cache, &terms)?;
    model.step(&grads, opt)?;
    Ok(bundle)
}

/// Runs `cfg.pretrain_epochs` epochs of adversarial pre-training.
/// An epoch is one pass over the target in batches, each paired with a source batch.
pub fn pretrain(
    model: &mut Model,
    source: &LabeledSet,
    target: &TargetSet,
    cfg: &TrainConfig,
    observer: &mut dyn Observer,
) -> Result<Vec<LossBundle>> {
    check_data(model, source, target)?;
    if model.out_dim() != model.num_known() + 1 {
        return Err(Error::contract("pre-training starts from a single unknown output"));
    }
    let mut rng = Rng::stream(cfg.seed, STREAM_PRETRAIN);
    let mut opt = cfg.optimizer();
    let mut src = BatchCycle::new(source.len(), cfg.batch_size);
    let mut history = Vec::with_capacity(cfg.pretrain_epochs);
    for epoch in 0..cfg.pretrain_epochs {
        let mut total = LossBundle::default();
        let tgt_batches = batches(target.len(), cfg.batch_size.min(target.len()), &mut rng)?;
        for tgt_idx in &tgt_batches {
            let src_idx = src.next(&mut rng)?;
            let b = at_epoch(
                epoch,
                pretrain_step(model, &mut opt, source, &src_idx, target, tgt_idx, cfg.grl_lambda),
            )?;
            total.accumulate(&b);
        }
        let mean = total.scaled(1.0 / tgt_batches.len() as f64);
        numerical("pretrain", epoch, &mean, model)?;
        observer.pretrain_epoch(epoch, &mean, model)?;
        history.push(mean);
    }
    Ok(history)
}

/// Discovery, restructuring and `cfg.inner_epochs` of adaptation.
pub fn adapt_epoch(
    state: &mut RunState,
    source: &LabeledSet,
    target: &mut TargetSet,
    cfg: &TrainConfig,
    epoch: usize,
    rng: &mut Rng,
) -> Result<OuterRecord> {
    let num_known = state.model.num_known();
    let disc_seed = Rng::stream(cfg.seed, STREAM_DISCOVERY + 1000 * epoch as u64).next_u64();
    let found = match discover(
        &state.model,
        target,
        &cfg.discovery(),
        cfg.k_policy(),
        state.k_star,
        disc_seed,
    ) {
        Ok(d) => Some(d),
        Err(Error::EmptyUnknown) => None,
        Err(e) => return Err(e),
    };

    let mut record = OuterRecord {
        epoch,
        k_star: state.k_star,
        k_ca: None,
        k_elbow: None,
        losses: LossBundle::default(),
        discovery_aborted: found.is_none(),
        elbow_fallback: false,
        k_clamped: false,
    };
    let mut opt = cfg.optimizer();
    let pseudo = match &found {
        Some(d) => {
            if let Some(est) = &d.estimate {
                record.k_ca = Some(est.k_ca);
                record.k_elbow = Some(est.k_elbow);
                record.elbow_fallback = est.elbow_fallback;
            }
            // An estimate beyond the sweep range is not expected; clamp defensively.
            let k = d.result.k_star.clamp(1, cfg.k_max.max(cfg.k_gt.unwrap_or(1)));
            record.k_clamped = d.result.clamped || k != d.result.k_star;
            let mut restructure_rng = Rng::stream(cfg.seed, STREAM_RESTRUCTURE + 1000 * epoch as u64);
            state.model.restructure(k, &mut restructure_rng)?;
            state.k_star = k;
            record.k_star = k;
            let samples: Vec<(usize, usize)> = d
                .labeled_samples()
                .into_iter()
                .filter(|&(_, l)| l < num_known + k)
                .collect();
            target.pseudo_labels = vec![None; target.len()];
            for &(i, l) in &samples {
                target.pseudo_labels[i] = Some(l);
            }
            samples
        }
        None => Vec::new(),
    };
    state.discovery = found;

    let mut src = BatchCycle::new(source.len(), cfg.batch_size);
    let mut pse = BatchCycle::new(pseudo.len(), cfg.batch_size);
    let mut epoch_total = LossBundle::default();
    for _ in 0..cfg.inner_epochs {
        let mut total = LossBundle::default();
        let tgt_batches = batches(target.len(), cfg.batch_size.min(target.len()), rng)?;
        for tgt_idx in &tgt_batches {
            let src_idx = src.next(rng)?;
            let batch: Vec<(usize, usize)> = if pseudo.is_empty() {
                Vec::new()
            } else {
                pse.next(rng)?.into_iter().map(|i| pseudo[i]).collect()
            };
            let b = at_epoch(
                epoch,
                adapt_step(&mut state.model, &mut opt, source, &src_idx, target, &batch, tgt_idx),
            )?;
            total.accumulate(&b);
        }
        let mean = total.scaled(1.0 / tgt_batches.len() as f64);
        numerical("adapt", epoch, &mean, &state.model)?;
        epoch_total.accumulate(&mean);
        state.adapt_losses.push(mean);
    }
    record.losses = epoch_total.scaled(1.0 / cfg.inner_epochs as f64);
    state.k_trajectory.push(state.k_star);
    state.outer.push(record.clone());
    Ok(record)
}

/// Full training run: pre-training followed by the ablation mode's outer epochs.
pub fn run(
    cfg: &TrainConfig,
    source: &LabeledSet,
    target: &mut TargetSet,
    observer: &mut dyn Observer,
) -> Result<RunState> {
    cfg.validate()?;
    let mut init = Rng::stream(cfg.seed, STREAM_INIT);
    let mut model = Model::desk_default(source.dim(), cfg.feature_dim, source.num_classes(), &mut init)?;
    check_data(&model, source, target)?;
    let pretrain_losses = pretrain(&mut model, source, target, cfg, observer)?;
    let mut state = RunState {
        model,
        k_star: 1,
        k_trajectory: vec![1],
        pretrain_losses,
        adapt_losses: Vec::new(),
        outer: Vec::new(),
        discovery: None,
    };
    let mut rng = Rng::stream(cfg.seed, STREAM_ADAPT);
    for epoch in 0..cfg.ablation_mode.outer_epochs(cfg.outer_epochs) {
        let record = adapt_epoch(&mut state, source, target, cfg, epoch, &mut rng)?;
        observer.outer_epoch(&record, &state.model, target)?;
    }
    Ok(state)
}
