//! Loss terms and their gradients.
//!
//! Confusion-style losses are functions of the row-normalised class
//! correlation matrix `R̂` of a target batch. Each is evaluated in two
//! stages: the loss and its gradient with respect to `R̂`, then
//! [`CorrelationMatrix::backprop`] carries that gradient back to the softmax
//! outputs, through the entropy-dependent sample weights as well.
//!
//! All logarithms are natural.

use serde::{Deserialize, Serialize};

use crate::net::Upstream;
use crate::numkit::Matrix;
use crate::{Error, Result};

/// Probability clamp used inside the adversarial binary cross-entropy.
pub const BCE_CLAMP: f64 = 1e-7;

const SIMPLEX_TOL: f64 = 1e-6;

/// Shannon entropy `-Σ p ln p` of a probability vector, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    check_distribution(p)?;
    Ok(entropy_unchecked(p))
}

pub(crate) fn entropy_unchecked(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

fn check_distribution(p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.is_empty() || p.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::contract(format!(
            "not a probability vector (len {}, sum {sum})",
            p.len()
        )));
    }
    Ok(())
}

/// Entropy-weighted class correlation of one batch of softmax outputs.
///
/// With `u_n = 1 + exp(-H(p_n))` and `w_n = m u_n / Σ u`, the matrix is
/// `R = Pᵀ diag(w) P`, i.e. `R_ij = Σ_n w_n p_ni p_nj`, and `R̂` is `R`
/// divided by its row sums.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    pub r: Matrix,
    pub r_hat: Matrix,
    /// Per-sample weights `w_n`; they sum to the batch size.
    pub weights: Vec<f64>,
    /// Rows of `R` that summed to zero; their `R̂` row is uniform and constant.
    pub degenerate_rows: Vec<usize>,
    probs: Matrix,
    entropies: Vec<f64>,
    row_sums: Vec<f64>,
}

pub fn correlation_matrix(probs: &Matrix) -> Result<CorrelationMatrix> {
    let m = probs.rows();
    if m < 2 {
        return Err(Error::contract(format!("correlation needs m >= 2 samples, got {m}")));
    }
    for row in probs.iter_rows() {
        check_distribution(row)?;
    }
    Ok(correlation_unchecked(probs))
}

fn correlation_unchecked(probs: &Matrix) -> CorrelationMatrix {
    let (m, k) = probs.shape();
    let entropies: Vec<f64> = probs.iter_rows().map(entropy_unchecked).collect();
    let u: Vec<f64> = entropies.iter().map(|h| 1.0 + (-h).exp()).collect();
    let total: f64 = u.iter().sum();
    let weights: Vec<f64> = u.iter().map(|v| m as f64 * v / total).collect();

    let mut weighted = probs.clone();
    for (n, w) in weights.iter().enumerate() {
        weighted.row_mut(n).iter_mut().for_each(|v| *v *= w);
    }
    let r = weighted
        .matmul_tn(probs)
        .expect("batch shapes agree by construction");

    let mut r_hat = r.clone();
    let mut row_sums = Vec::with_capacity(k);
    let mut degenerate_rows = Vec::new();
    for i in 0..k {
        let s: f64 = r.row(i).iter().sum();
        row_sums.push(s);
        let row = r_hat.row_mut(i);
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        } else {
            degenerate_rows.push(i);
            row.fill(1.0 / k as f64);
        }
    }
    CorrelationMatrix {
        r,
        r_hat,
        weights,
        degenerate_rows,
        probs: probs.clone(),
        entropies,
        row_sums,
    }
}

impl CorrelationMatrix {
    pub fn dim(&self) -> usize {
        self.r.rows()
    }

    pub fn batch_size(&self) -> usize {
        self.probs.rows()
    }

    /// Gradient w.r.t. the batch probabilities of a loss whose gradient
    /// w.r.t. `R̂` is `d_r_hat`. Probabilities are treated as free entries.
    pub fn backprop(&self, d_r_hat: &Matrix) -> Matrix {
        let k = self.dim();
        let m = self.batch_size();
        let p = &self.probs;

        // dL/dR through the row normalisation.
        let mut a = Matrix::zeros(k, k);
        for i in 0..k {
            if self.row_sums[i] <= 0.0 {
                continue;
            }
            let g = d_r_hat.row(i);
            let inner: f64 = g.iter().zip(self.r_hat.row(i)).map(|(x, y)| x * y).sum();
            for (dst, gv) in a.row_mut(i).iter_mut().zip(g) {
                *dst = (gv - inner) / self.row_sums[i];
            }
        }
        let sym = Matrix::from_fn(k, k, |i, j| a.get(i, j) + a.get(j, i));

        // Direct path with the weights held fixed: diag(w) P (A + Aᵀ).
        let mut d_p = crate::numkit::matmul(p, &sym).expect("square");
        for (n, w) in self.weights.iter().enumerate() {
            d_p.row_mut(n).iter_mut().for_each(|v| *v *= w);
        }

        // Through the weights: c_n = p_nᵀ A p_n = dL/dw_n.
        let ap = p.matmul_nt(&a).expect("square");
        let c: Vec<f64> = (0..m)
            .map(|n| p.row(n).iter().zip(ap.row(n)).map(|(x, y)| x * y).sum())
            .collect();
        let u: Vec<f64> = self.entropies.iter().map(|h| 1.0 + (-h).exp()).collect();
        let total: f64 = u.iter().sum();
        let mean_c: f64 = c.iter().zip(&self.weights).map(|(c, w)| c * w).sum::<f64>() / m as f64;
        for n in 0..m {
            let d_u = m as f64 / total * (c[n] - mean_c);
            let d_h = -d_u * (-self.entropies[n]).exp();
            if d_h == 0.0 {
                continue;
            }
            for (dst, &pv) in d_p.row_mut(n).iter_mut().zip(p.row(n)) {
                // dH/dp = -(ln p + 1); the clamp only matters for p == 0, where
                // the softmax Jacobian zeroes the term anyway.
                *dst += d_h * -(pv.max(f64::MIN_POSITIVE).ln() + 1.0);
            }
        }
        d_p
    }
}

/// A scalar loss with its upstream gradient.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub grad: Upstream,
}

fn check_known(cm: &CorrelationMatrix, num_known: usize, op: &str) -> Result<()> {
    if num_known == 0 || cm.dim() < num_known + 1 {
        return Err(Error::contract(format!(
            "{op}: {} classes cannot hold {num_known} known plus an unknown block",
            cm.dim()
        )));
    }
    Ok(())
}

/// Mean `R̂` mass that known classes send to the first non-source column.
pub(crate) fn adv_probability(r_hat: &Matrix, num_known: usize) -> f64 {
    (0..num_known).map(|j| r_hat.get(j, num_known)).sum::<f64>() / num_known as f64
}

/// Binary cross-entropy of `p` against the target 1/2, with its derivative.
///
/// Outside the clamp the derivative is taken at the clamp boundary rather
/// than zeroed, so a saturated confusion term still pulls back.
pub(crate) fn bce_half(p: f64) -> (f64, f64) {
    let clamped = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    let value = -(0.5 * clamped.ln() + 0.5 * (1.0 - clamped).ln());
    let deriv = -0.5 / clamped + 0.5 / (1.0 - clamped);
    (value, deriv)
}

pub(crate) fn adv_on_r_hat(r_hat: &Matrix, num_known: usize) -> (f64, Matrix) {
    let (value, d_p) = bce_half(adv_probability(r_hat, num_known));
    let k = r_hat.rows();
    let mut g = Matrix::zeros(k, k);
    for j in 0..num_known {
        g.set(j, num_known, d_p / num_known as f64);
    }
    (value, g)
}

pub(crate) fn kcc_on_r_hat(r_hat: &Matrix, num_known: usize) -> (f64, Matrix) {
    let k = r_hat.rows();
    let scale = 1.0 / num_known as f64;
    let mut g = Matrix::zeros(k, k);
    let mut value = 0.0;
    for j in 0..num_known {
        for jp in 0..num_known {
            if j != jp {
                value += r_hat.get(j, jp);
                g.set(j, jp, scale);
            }
        }
    }
    (value * scale, g)
}

pub(crate) fn tcc_on_r_hat(r_hat: &Matrix) -> (f64, Matrix) {
    let k = r_hat.rows();
    let scale = 1.0 / k as f64;
    let mut value = 0.0;
    let g = Matrix::from_fn(k, k, |i, j| if i == j { 0.0 } else { scale });
    for j in 0..k {
        for jp in 0..k {
            if j != jp {
                value += r_hat.get(j, jp);
            }
        }
    }
    (value * scale, g)
}

/// Adversarial confusion: BCE between `(1/|C_S|) Σ_j R̂[j, |C_S|]` and 1/2.
/// Minimised (value `ln 2`) when the known rows put half their mass on the unknown column.
pub fn loss_adv(cm: &CorrelationMatrix, num_known: usize) -> Result<LossValue> {
    check_known(cm, num_known, "loss_adv")?;
    let (value, g) = adv_on_r_hat(&cm.r_hat, num_known);
    Ok(LossValue {
        value,
        grad: Upstream::Probs(cm.backprop(&g)),
    })
}

/// Off-diagonal `R̂` mass inside the known block, averaged over known rows.
/// Confusion towards columns beyond the known classes is not penalised.
pub fn loss_kcc(cm: &CorrelationMatrix, num_known: usize) -> Result<LossValue> {
    check_known(cm, num_known, "loss_kcc")?;
    let (value, g) = kcc_on_r_hat(&cm.r_hat, num_known);
    Ok(LossValue {
        value,
        grad: Upstream::Probs(cm.backprop(&g)),
    })
}

/// Off-diagonal `R̂` mass over every class, known and discovered, averaged over rows.
pub fn loss_tcc(cm: &CorrelationMatrix) -> LossValue {
    let (value, g) = tcc_on_r_hat(&cm.r_hat);
    LossValue {
        value,
        grad: Upstream::Probs(cm.backprop(&g)),
    }
}

/// Mean negative log-likelihood of `labels`; the gradient is w.r.t. the logits.
pub fn cross_entropy(probs: &Matrix, labels: &[usize]) -> Result<LossValue> {
    let (m, k) = probs.shape();
    if labels.len() != m || m == 0 {
        return Err(Error::shape("cross_entropy", format!("{m} labels"), labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::contract(format!("label {bad} outside 0..{k}")));
    }
    let mut value = 0.0;
    let mut d = probs.clone();
    for (n, &y) in labels.iter().enumerate() {
        value -= probs.get(n, y).max(f64::MIN_POSITIVE).ln();
        d.set(n, y, d.get(n, y) - 1.0);
    }
    d.scale(1.0 / m as f64);
    Ok(LossValue {
        value: value / m as f64,
        grad: Upstream::Logits(d),
    })
}

/// Scalar values of the loss terms active in one optimizer step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_adv: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_kcc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_tcc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_t: Option<f64>,
}

impl LossBundle {
    pub fn is_finite(&self) -> bool {
        [self.l_s, self.l_adv, self.l_kcc, self.l_tcc, self.l_t]
            .iter()
            .flatten()
            .all(|v| v.is_finite())
    }

    /// Component-wise sum; a term is present if present in either side.
    pub fn accumulate(&mut self, other: &LossBundle) {
        fn add(a: &mut Option<f64>, b: Option<f64>) {
            if let Some(b) = b {
                *a = Some(a.unwrap_or(0.0) + b);
            }
        }
        add(&mut self.l_s, other.l_s);
        add(&mut self.l_adv, other.l_adv);
        add(&mut self.l_kcc, other.l_kcc);
        add(&mut self.l_tcc, other.l_tcc);
        add(&mut self.l_t, other.l_t);
    }

    pub fn scaled(&self, s: f64) -> LossBundle {
        LossBundle {
            l_s: self.l_s.map(|v| v * s),
            l_adv: self.l_adv.map(|v| v * s),
            l_kcc: self.l_kcc.map(|v| v * s),
            l_tcc: self.l_tcc.map(|v| v * s),
            l_t: self.l_t.map(|v| v * s),
        }
    }
}

/// Pre-training objectives `(for F, for C)`:
/// `L_s - L_adv + L_kcc` and `L_s + L_adv + L_kcc`. Absent terms count as 0.
///
/// The training loop realises both in one backward pass by sending the
/// adversarial gradient into `F` through a reversal [`crate::net::GradScale`].
pub fn pretrain_objectives(bundle: &LossBundle) -> (f64, f64) {
    let s = bundle.l_s.unwrap_or(0.0);
    let adv = bundle.l_adv.unwrap_or(0.0);
    let kcc = bundle.l_kcc.unwrap_or(0.0);
    (s - adv + kcc, s + adv + kcc)
}

/// Adaptation objective `L_s + L_t + L_tcc`, with an absent `L_t` contributing nothing.
pub fn adapt_objective(bundle: &LossBundle) -> f64 {
    bundle.l_s.unwrap_or(0.0) + bundle.l_t.unwrap_or(0.0) + bundle.l_tcc.unwrap_or(0.0)
}
