//! Micro neural-network stack with hand-written backpropagation.
//!
//! A [`Model`] is a feature extractor `F` ([`Mlp`]) followed by a linear
//! softmax classifier `C` ([`SoftmaxClassifier`]). [`backward`] accepts any
//! number of upstream gradient terms, each routed into `F` through its own
//! [`GradScale`]; this is how the adversarial term reaches `F` reversed while
//! the other terms flow through unchanged, all in one pass.

mod checkpoint;
mod classifier;
mod mlp;
mod sgd;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use classifier::{softmax_backward, softmax_rows, ClassifierGrads, SoftmaxClassifier};
pub use mlp::{Activation, Layer, LayerGrads, Mlp, MlpCache, MlpGrads};
pub use sgd::{sgd_step, Parameters, SgdState};

use crate::numkit::{Matrix, Rng};
use crate::{Error, Result};

/// Identity on the forward pass; multiplies the gradient by `lambda` on the way back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradScale {
    pub lambda: f64,
}

impl GradScale {
    pub const IDENTITY: GradScale = GradScale { lambda: 1.0 };

    /// Gradient reversal with magnitude `strength`.
    pub fn reversal(strength: f64) -> Self {
        GradScale { lambda: -strength }
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        x.clone()
    }

    pub fn backward(&self, grad: &Matrix) -> Matrix {
        let mut g = grad.clone();
        g.scale(self.lambda);
        g
    }
}

/// Upstream gradient of a scalar loss, with respect to either output.
#[derive(Debug, Clone)]
pub enum Upstream {
    Probs(Matrix),
    Logits(Matrix),
}

/// One loss term's contribution to the backward pass.
#[derive(Debug, Clone)]
pub struct GradTerm {
    pub grad: Upstream,
    /// Scale applied where the term's gradient crosses from `C` into `F`.
    pub route: GradScale,
}

impl GradTerm {
    pub fn logits(d: Matrix) -> Self {
        GradTerm {
            grad: Upstream::Logits(d),
            route: GradScale::IDENTITY,
        }
    }

    pub fn probs(d: Matrix) -> Self {
        GradTerm {
            grad: Upstream::Probs(d),
            route: GradScale::IDENTITY,
        }
    }

    pub fn routed(mut self, route: GradScale) -> Self {
        self.route = route;
        self
    }
}

/// Feature extractor plus classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    extractor: Mlp,
    classifier: SoftmaxClassifier,
    revision: u64,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    mlp: MlpCache,
    features: Matrix,
    probs: Matrix,
    revision: u64,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub features: Matrix,
    pub probs: Matrix,
    pub cache: ForwardCache,
}

#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub extractor: MlpGrads,
    pub classifier: ClassifierGrads,
    pub d_input: Matrix,
}

impl Model {
    pub fn new(extractor: Mlp, classifier: SoftmaxClassifier) -> Result<Self> {
        if extractor.feature_dim() != classifier.feature_dim() {
            return Err(Error::shape(
                "Model::new",
                format!("classifier input {}", extractor.feature_dim()),
                classifier.feature_dim(),
            ));
        }
        Ok(Model {
            extractor,
            classifier,
            revision: 0,
        })
    }

    /// Desk-scale default: `input -> 32 relu -> 32 relu -> feature_dim tanh`,
    /// classifier with `num_known + 1` outputs.
    pub fn desk_default(
        input_dim: usize,
        feature_dim: usize,
        num_known: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let extractor = Mlp::new(
            &[input_dim, 32, 32, feature_dim],
            &[Activation::Relu, Activation::Relu, Activation::Tanh],
            rng,
        )?;
        let classifier = SoftmaxClassifier::new(feature_dim, num_known, 1, rng)?;
        Model::new(extractor, classifier)
    }

    pub fn extractor(&self) -> &Mlp {
        &self.extractor
    }

    pub fn classifier(&self) -> &SoftmaxClassifier {
        &self.classifier
    }

    pub fn num_known(&self) -> usize {
        self.classifier.num_known()
    }

    pub fn out_dim(&self) -> usize {
        self.classifier.out_dim()
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    /// Replaces `C` with a freshly initialised `num_known + new_k` classifier. `F` is untouched.
    pub fn restructure(&mut self, new_k: usize, rng: &mut Rng) -> Result<()> {
        self.classifier = self.classifier.restructure(new_k, rng)?;
        self.revision += 1;
        Ok(())
    }

    /// Applies one optimizer step to both parts.
    pub fn step(&mut self, grads: &ModelGrads, opt: &mut Optimizer) -> Result<()> {
        sgd_step(&mut self.extractor, &grads.extractor, &mut opt.extractor)?;
        sgd_step(&mut self.classifier, &grads.classifier, &mut opt.classifier)?;
        self.revision += 1;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.extractor.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
            && self.classifier.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Separate momentum buffers for `F` and `C`; `C`'s are reset when it is restructured.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub extractor: SgdState,
    pub classifier: SgdState,
}

impl Optimizer {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        Optimizer {
            extractor: SgdState::new(learning_rate, momentum, weight_decay),
            classifier: SgdState::new(learning_rate, momentum, weight_decay),
        }
    }

    pub fn reset_classifier(&mut self) {
        self.classifier.reset();
    }
}

/// `features = F(x)`, `probs = softmax(features · W + b)`.
pub fn forward(model: &Model, x: &Matrix) -> Result<Forward> {
    let (features, mlp) = model.extractor.forward(x)?;
    let probs = model.classifier.forward(&features)?;
    Ok(Forward {
        features: features.clone(),
        probs: probs.clone(),
        cache: ForwardCache {
            mlp,
            features,
            probs,
            revision: model.revision,
        },
    })
}

/// Probabilities only; no cache.
pub fn predict(model: &Model, x: &Matrix) -> Result<Matrix> {
    let (features, _) = model.extractor.forward(x)?;
    model.classifier.forward(&features)
}

/// Reverse pass for the sum of `terms`.
pub fn backward(model: &Model, cache: &ForwardCache, terms: &[GradTerm]) -> Result<ModelGrads> {
    if cache.revision != model.revision {
        return Err(Error::contract(format!(
            "stale forward cache: computed at revision {}, model is at {}",
            cache.revision, model.revision
        )));
    }
    let (m, k) = cache.probs.shape();
    let mut d_logits_total = Matrix::zeros(m, k);
    let mut d_features = Matrix::zeros(m, model.extractor.feature_dim());
    for term in terms {
        let d_logits = match &term.grad {
            Upstream::Logits(d) => d.clone(),
            Upstream::Probs(d) => softmax_backward(&cache.probs, d)?,
        };
        if d_logits.shape() != (m, k) {
            return Err(Error::shape(
                "backward",
                format!("{:?}", (m, k)),
                format!("{:?}", d_logits.shape()),
            ));
        }
        d_logits_total.add_assign(&d_logits)?;
        let d_feat = model.classifier.input_grad(&d_logits)?;
        d_features.add_assign(&term.route.backward(&d_feat))?;
    }
    let classifier = model.classifier.param_grads(&cache.features, &d_logits_total)?;
    let (extractor, d_input) = model.extractor.backward(&cache.mlp, &d_features)?;
    Ok(ModelGrads {
        extractor,
        classifier,
        d_input,
    })
}
