//! JSON checkpoint format.
//!
//! ```text
//! {
//!   "format": "scda-checkpoint",
//!   "version": 1,
//!   "extractor": [
//!     { "in": 6, "out": 32, "activation": "relu",
//!       "weights": [.. in*out values, row-major ..], "bias": [.. out values ..] },
//!     ...
//!   ],
//!   "classifier": {
//!     "feature_dim": 16, "num_known": 4, "out_dim": 7,
//!     "weights": [.. feature_dim*out_dim values, row-major ..], "bias": [.. out_dim ..]
//!   }
//! }
//! ```
//!
//! Numbers are written in shortest round-trip form, so reading a checkpoint
//! back gives bit-identical parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, Layer, Mlp, Model, SoftmaxClassifier};
use crate::numkit::Matrix;
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "scda-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub extractor: Vec<LayerRecord>,
    pub classifier: ClassifierRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    #[serde(rename = "in")]
    pub in_dim: usize,
    #[serde(rename = "out")]
    pub out_dim: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierRecord {
    pub feature_dim: usize,
    pub num_known: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        let extractor = model
            .extractor()
            .layers()
            .iter()
            .map(|l| LayerRecord {
                in_dim: l.in_dim(),
                out_dim: l.out_dim(),
                activation: l.activation,
                weights: l.weights.data().to_vec(),
                bias: l.bias.clone(),
            })
            .collect();
        let c = model.classifier();
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            extractor,
            classifier: ClassifierRecord {
                feature_dim: c.feature_dim(),
                num_known: c.num_known(),
                out_dim: c.out_dim(),
                weights: c.weights().data().to_vec(),
                bias: c.bias().to_vec(),
            },
        }
    }

    pub fn into_model(self) -> Result<Model> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::contract(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let layers = self
            .extractor
            .into_iter()
            .map(|l| {
                Ok(Layer {
                    weights: Matrix::new(l.in_dim, l.out_dim, l.weights)?,
                    bias: l.bias,
                    activation: l.activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let extractor = Mlp::from_layers(layers)?;
        let c = self.classifier;
        let classifier = SoftmaxClassifier::from_parts(
            Matrix::new(c.feature_dim, c.out_dim, c.weights)?,
            c.bias,
            c.num_known,
        )?;
        let model = Model::new(extractor, classifier)?;
        if !model.is_finite() {
            return Err(Error::contract("checkpoint holds non-finite parameters"));
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialization is infallible")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
