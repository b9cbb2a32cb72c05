//! Layered configuration: built-in defaults, then a TOML file, then flags.

use std::path::{Path, PathBuf};

use clap::Args;
use scda::adapter::{AblationMode, TrainConfig};
use scda::data::ShiftSpec;
use scda::Error;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Source CSV. When both this and `target` are unset, data is generated.
    pub source: Option<PathBuf>,
    /// Target CSV; needs a `gt` column for `run` and `ablate`.
    pub target: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            source: None,
            target: None,
            out: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    pub modes: Vec<AblationMode>,
    /// Seeds `0..seeds`.
    pub seeds: u64,
}

impl Default for AblateConfig {
    fn default() -> Self {
        AblateConfig {
            modes: AblationMode::ALL.to_vec(),
            seeds: 10,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub train: TrainConfig,
    pub data: ShiftSpec,
    pub paths: Paths,
    pub ablate: AblateConfig,
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Error> {
        let Some(path) = path else {
            return Ok(CliConfig::default());
        };
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.train.validate()?;
        self.data.validate()?;
        if self.paths.source.is_some() != self.paths.target.is_some() {
            return Err(Error::Config("source and target must be given together".into()));
        }
        Ok(())
    }
}

/// One flag per configuration key. Unset flags leave the file value alone.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML configuration file
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Source CSV [default: generate]
    #[arg(long, value_name = "FILE", help_heading = "Paths")]
    pub source: Option<PathBuf>,
    /// Target CSV with a gt column [default: generate]
    #[arg(long, value_name = "FILE", help_heading = "Paths")]
    pub target: Option<PathBuf>,
    /// Output root [default: runs]
    #[arg(long, value_name = "DIR", help_heading = "Paths")]
    pub out: Option<PathBuf>,

    /// Seed for data generation and training [default: 0]
    #[arg(long, help_heading = "Training")]
    pub seed: Option<u64>,
    /// SGD learning rate [default: 0.001]
    #[arg(long, help_heading = "Training")]
    pub lr: Option<f64>,
    /// SGD momentum [default: 0.9]
    #[arg(long, help_heading = "Training")]
    pub momentum: Option<f64>,
    /// L2 weight decay [default: 0.0005]
    #[arg(long, help_heading = "Training")]
    pub weight_decay: Option<f64>,
    /// Mini-batch size [default: 32]
    #[arg(long, help_heading = "Training")]
    pub batch_size: Option<usize>,
    /// Pre-training epochs [default: 100]
    #[arg(long, help_heading = "Training")]
    pub pretrain_epochs: Option<usize>,
    /// Classifier epochs per outer epoch [default: 30]
    #[arg(long, help_heading = "Training")]
    pub inner_epochs: Option<usize>,
    /// Discovery / retraining rounds [default: 15]
    #[arg(long, help_heading = "Training")]
    pub outer_epochs: Option<usize>,
    /// Gradient reversal weight [default: 1.0]
    #[arg(long, help_heading = "Training")]
    pub grl_lambda: Option<f64>,
    /// Extracted feature width [default: 16]
    #[arg(long, help_heading = "Training")]
    pub feature_dim: Option<usize>,
    /// Ablation mode: full, pretrain_only, k_fixed_1, k_star_no_iters, k_gt_no_iters, k_gt_iters [default: full]
    #[arg(long, help_heading = "Training")]
    pub ablation: Option<AblationMode>,
    /// Implicit-class count for the k_gt modes [default: unset]
    #[arg(long, help_heading = "Training")]
    pub k_gt: Option<usize>,

    /// Largest implicit-class count tried [default: 10]
    #[arg(long, help_heading = "Discovery")]
    pub k_max: Option<usize>,
    /// PCA dimensions before clustering [default: 16]
    #[arg(long, help_heading = "Discovery")]
    pub pca_dim: Option<usize>,
    /// k-means++ restarts [default: 8]
    #[arg(long, help_heading = "Discovery")]
    pub kmeans_restarts: Option<usize>,
    /// Lloyd iteration cap [default: 100]
    #[arg(long, help_heading = "Discovery")]
    pub kmeans_max_iter: Option<usize>,
    /// Kneedle sensitivity [default: 1.0]
    #[arg(long, help_heading = "Discovery")]
    pub kneedle_sensitivity: Option<f64>,

    /// Known classes [default: 4]
    #[arg(long, help_heading = "Synthetic data")]
    pub num_known: Option<usize>,
    /// Implicit (target-only) classes [default: 3]
    #[arg(long, help_heading = "Synthetic data")]
    pub num_implicit: Option<usize>,
    /// Input dimension [default: 6]
    #[arg(long, help_heading = "Synthetic data")]
    pub dim: Option<usize>,
    /// Per-class standard deviation [default: 1.0]
    #[arg(long, help_heading = "Synthetic data")]
    pub sigma: Option<f64>,
    /// Minimum center distance in sigmas [default: 6.0]
    #[arg(long, help_heading = "Synthetic data")]
    pub separation: Option<f64>,
    /// Half width of the center box [default: 6.0]
    #[arg(long, help_heading = "Synthetic data")]
    pub box_half_width: Option<f64>,
    /// Target rotation in radians [default: 0.5]
    #[arg(long, help_heading = "Synthetic data")]
    pub rotation: Option<f64>,
    /// Target translation [default: 1.5]
    #[arg(long, help_heading = "Synthetic data")]
    pub translation: Option<f64>,
    /// Target scale [default: 1.1]
    #[arg(long, help_heading = "Synthetic data")]
    pub scale: Option<f64>,
    /// Source samples per class [default: 100]
    #[arg(long, help_heading = "Synthetic data")]
    pub source_per_class: Option<usize>,
    /// Target samples per class [default: 100]
    #[arg(long, help_heading = "Synthetic data")]
    pub target_per_class: Option<usize>,

    /// Ablation modes, comma separated [default: all]
    #[arg(long, value_delimiter = ',', help_heading = "Ablation")]
    pub modes: Option<Vec<AblationMode>>,
    /// Number of seeds, run as 0..N [default: 10]
    #[arg(long, help_heading = "Ablation")]
    pub seeds: Option<u64>,
}

macro_rules! set {
    ($src:expr => $dst:expr) => {
        if let Some(v) = $src.clone() {
            $dst = v;
        }
    };
}

impl Overrides {
    /// Defaults, then the config file, then these flags.
    pub fn resolve(&self) -> Result<CliConfig, Error> {
        let mut c = CliConfig::load(self.config.as_deref())?;
        if let Some(p) = &self.source {
            c.paths.source = Some(p.clone());
        }
        if let Some(p) = &self.target {
            c.paths.target = Some(p.clone());
        }
        set!(self.out => c.paths.out);
        set!(self.seed => c.train.seed);
        set!(self.lr => c.train.lr);
        set!(self.momentum => c.train.momentum);
        set!(self.weight_decay => c.train.weight_decay);
        set!(self.batch_size => c.train.batch_size);
        set!(self.pretrain_epochs => c.train.pretrain_epochs);
        set!(self.inner_epochs => c.train.inner_epochs);
        set!(self.outer_epochs => c.train.outer_epochs);
        set!(self.grl_lambda => c.train.grl_lambda);
        set!(self.feature_dim => c.train.feature_dim);
        set!(self.ablation => c.train.ablation_mode);
        if self.k_gt.is_some() {
            c.train.k_gt = self.k_gt;
        }
        set!(self.k_max => c.train.k_max);
        set!(self.pca_dim => c.train.pca_dim);
        set!(self.kmeans_restarts => c.train.kmeans_restarts);
        set!(self.kmeans_max_iter => c.train.kmeans_max_iter);
        set!(self.kneedle_sensitivity => c.train.kneedle_sensitivity);
        set!(self.num_known => c.data.num_known);
        set!(self.num_implicit => c.data.num_implicit);
        set!(self.dim => c.data.dim);
        set!(self.sigma => c.data.sigma);
        set!(self.separation => c.data.separation);
        set!(self.box_half_width => c.data.box_half_width);
        set!(self.rotation => c.data.rotation);
        set!(self.translation => c.data.translation);
        set!(self.scale => c.data.scale);
        set!(self.source_per_class => c.data.source_per_class);
        set!(self.target_per_class => c.data.target_per_class);
        set!(self.modes => c.ablate.modes);
        set!(self.seeds => c.ablate.seeds);
        c.validate()?;
        Ok(c)
    }
}
