use std::fmt::Write as _;

use crate::adapter::RunState;
use crate::data::{GroundTruth, LabeledSet, TargetSet};
use crate::losses::LossBundle;
use crate::net::{forward, Model};
use crate::numkit::{apply_pca, fit_pca, Matrix};
use crate::Result;

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

fn loss_row(out: &mut String, phase: &str, epoch: usize, b: &LossBundle) {
    let _ = writeln!(
        out,
        "{phase},{epoch},{},{},{},{},{}",
        cell(b.l_s),
        cell(b.l_adv),
        cell(b.l_kcc),
        cell(b.l_tcc),
        cell(b.l_t)
    );
}

/// Mean losses per epoch; pre-training rows first, then every inner epoch.
pub fn loss_curves_csv(state: &RunState) -> String {
    let mut out = String::from("phase,epoch,l_s,l_adv,l_kcc,l_tcc,l_t\n");
    for (e, b) in state.pretrain_losses.iter().enumerate() {
        loss_row(&mut out, "pretrain", e, b);
    }
    for (e, b) in state.adapt_losses.iter().enumerate() {
        loss_row(&mut out, "adapt", e, b);
    }
    out
}

/// `k_star` after pre-training (step 0) and after each outer epoch.
pub fn k_trajectory_csv(state: &RunState) -> String {
    let mut out = String::from("step,k_star\n");
    for (i, k) in state.k_trajectory.iter().enumerate() {
        let _ = writeln!(out, "{i},{k}");
    }
    out
}

/// First two principal components of the extracted features of both domains.
/// PCA is fitted on source and target together.
pub fn feature_scatter_csv(
    model: &Model,
    source: &LabeledSet,
    target: &TargetSet,
    truth: &GroundTruth,
) -> Result<String> {
    let fs = forward(model, source.features())?.features;
    let ft = forward(model, target.features())?.features;
    let rows: Vec<Vec<f64>> = fs.iter_rows().chain(ft.iter_rows()).map(<[f64]>::to_vec).collect();
    let all = Matrix::from_rows(&rows)?;
    let dims = 2.min(all.cols()).min(all.rows() - 1);
    let proj = apply_pca(&fit_pca(&all, dims)?, &all)?;
    let mut out = String::from("domain,class,pc0,pc1\n");
    let classes = source.labels().iter().map(|&c| ("source", c)).chain(
        truth.labels().iter().map(|&c| ("target", c)),
    );
    for ((domain, class), r) in classes.zip(proj.iter_rows()) {
        let _ = writeln!(
            out,
            "{domain},{class},{:?},{:?}",
            r[0],
            r.get(1).copied().unwrap_or(0.0)
        );
    }
    Ok(out)
}
