use super::Parameters;
use crate::numkit::{matmul, Matrix, Rng};
use crate::{Error, Result};

/// Linear layer followed by a row-wise softmax, with `num_known + k` outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxClassifier {
    /// `feature_dim x out_dim`.
    weights: Matrix,
    bias: Vec<f64>,
    num_known: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl SoftmaxClassifier {
    /// Fresh classifier, all parameters uniform in `±1/sqrt(feature_dim)`.
    pub fn new(feature_dim: usize, num_known: usize, k: usize, rng: &mut Rng) -> Result<Self> {
        if feature_dim == 0 || num_known == 0 {
            return Err(Error::contract("classifier needs feature_dim >= 1 and num_known >= 1"));
        }
        if k == 0 {
            return Err(Error::contract("classifier needs at least one non-source output (k >= 1)"));
        }
        let out = num_known + k;
        let s = 1.0 / (feature_dim as f64).sqrt();
        let weights = Matrix::from_fn(feature_dim, out, |_, _| rng.uniform_range(-s, s));
        let bias = (0..out).map(|_| rng.uniform_range(-s, s)).collect();
        Ok(SoftmaxClassifier {
            weights,
            bias,
            num_known,
        })
    }

    pub fn from_parts(weights: Matrix, bias: Vec<f64>, num_known: usize) -> Result<Self> {
        if bias.len() != weights.cols() {
            return Err(Error::shape("SoftmaxClassifier::from_parts", weights.cols(), bias.len()));
        }
        if num_known == 0 || weights.cols() < num_known + 1 {
            return Err(Error::contract(format!(
                "classifier with {} outputs cannot hold {num_known} known classes plus one",
                weights.cols()
            )));
        }
        Ok(SoftmaxClassifier {
            weights,
            bias,
            num_known,
        })
    }

    /// Same `num_known`, `new_k` extra outputs, every parameter redrawn.
    pub fn restructure(&self, new_k: usize, rng: &mut Rng) -> Result<Self> {
        SoftmaxClassifier::new(self.feature_dim(), self.num_known, new_k, rng)
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn num_known(&self) -> usize {
        self.num_known
    }

    /// Number of outputs beyond the known classes.
    pub fn k(&self) -> usize {
        self.out_dim() - self.num_known
    }

    pub fn logits(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.feature_dim() {
            return Err(Error::shape("SoftmaxClassifier", self.feature_dim(), features.cols()));
        }
        let mut z = matmul(features, &self.weights)?;
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(z)
    }

    pub fn forward(&self, features: &Matrix) -> Result<Matrix> {
        Ok(softmax_rows(&self.logits(features)?))
    }

    pub(crate) fn input_grad(&self, d_logits: &Matrix) -> Result<Matrix> {
        d_logits.matmul_nt(&self.weights)
    }

    pub(crate) fn param_grads(&self, features: &Matrix, d_logits: &Matrix) -> Result<ClassifierGrads> {
        let weights = features.matmul_tn(d_logits)?;
        let mut bias = vec![0.0; self.out_dim()];
        for r in d_logits.iter_rows() {
            for (b, v) in bias.iter_mut().zip(r) {
                *b += v;
            }
        }
        Ok(ClassifierGrads { weights, bias })
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut p = logits.clone();
    for r in 0..p.rows() {
        let row = p.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    p
}

/// Pulls a gradient w.r.t. softmax outputs back to the logits:
/// `d_logit = p ⊙ (g - <p, g>)` per row.
pub fn softmax_backward(probs: &Matrix, d_probs: &Matrix) -> Result<Matrix> {
    if probs.shape() != d_probs.shape() {
        return Err(Error::shape(
            "softmax_backward",
            format!("{:?}", probs.shape()),
            format!("{:?}", d_probs.shape()),
        ));
    }
    let mut out = Matrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let g = d_probs.row(r);
        let inner: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for ((o, &pv), &gv) in out.row_mut(r).iter_mut().zip(p).zip(g) {
            *o = pv * (gv - inner);
        }
    }
    Ok(out)
}

impl Parameters for SoftmaxClassifier {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.weights.data(), &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weights.data_mut(), &mut self.bias]
    }
}

impl Parameters for ClassifierGrads {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.weights.data(), &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weights.data_mut(), &mut self.bias]
    }
}
