//! Open-set domain adaptation with iterative implicit-class discovery.
//!
//! The pipeline pre-trains a feature extractor and a `|C_S|+1`-way classifier
//! adversarially so that unknown target samples separate from the known ones,
//! then alternates between discovering how many implicit classes hide in the
//! unknown part of the target domain and retraining a classifier that is
//! restructured to `|C_S| + k*` outputs.
//!
//! Module map:
//! - [`numkit`]: dense matrices, seeded randomness and PCA.
//! - [`net`]: MLP feature extractor, restructurable softmax classifier,
//!   gradient scaling and momentum SGD.
//! - [`losses`]: entropy-weighted class correlation and the confusion,
//!   adversarial and cross-entropy losses with analytic gradients.
//! - [`discovery`]: confident candidate selection, k-means++, clustering
//!   accuracy, kneedle and implicit-class count estimation.
//! - [`adapter`]: the training driver and its ablation modes.
//! - [`data`]: synthetic shifted benchmarks, CSV I/O and batching.
//! - [`eval`]: OS / OS* metrics, class correspondence, ablation tables.

pub mod adapter;
pub mod data;
pub mod discovery;
pub mod error;
pub mod eval;
pub mod losses;
pub mod net;
pub mod numkit;

pub use error::{Error, Result};
