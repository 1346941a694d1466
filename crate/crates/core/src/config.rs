//! Run configuration, read from and written to TOML.
//!
//! ```toml
//! seed = 0
//! threads = 0
//!
//! [label_tree]
//! hlt_prelim = "16-256-3956"
//! hlt_refine = "4-32-256-3956"
//!
//! [multires]
//! alpha = 1.0
//!
//! [encoder]
//! lr_max = 5e-5
//! n_step = 2400
//!
//! [trainer]
//! lambda = 0.5
//! beam = 10
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::label_tree::{TreeShape, DEFAULT_KMEANS_ITERS};
use crate::linear::{Loss, SolverConfig};
use crate::multires::WeightMode;
use crate::vectorizer::TfidfConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    pub vectorizer: TfidfConfig,
    pub label_tree: LabelTreeSection,
    pub multires: MultiresSection,
    pub encoder: EncoderSection,
    pub trainer: TrainerSection,
    pub metrics: MetricsSection,
    pub paths: PathsSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelTreeSection {
    /// Tree used during the encoder curriculum.
    pub hlt_prelim: TreeShape,
    /// Tree used by the final rankers.
    pub hlt_refine: TreeShape,
    pub kmeans_iters: usize,
}

impl Default for LabelTreeSection {
    fn default() -> Self {
        let shape = TreeShape::Branching {
            branching: 8,
            max_leaf_size: 100,
        };
        LabelTreeSection {
            hlt_prelim: shape.clone(),
            hlt_refine: shape,
            kmeans_iters: DEFAULT_KMEANS_ITERS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiresSection {
    pub alpha: f32,
    pub cost_sensitive: bool,
}

impl Default for MultiresSection {
    fn default() -> Self {
        MultiresSection {
            alpha: 1.0,
            cost_sensitive: true,
        }
    }
}

impl MultiresSection {
    pub fn weight_mode(&self) -> WeightMode {
        if self.cost_sensitive {
            WeightMode::CostSensitive
        } else {
            WeightMode::Uniform
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    /// When false only TF-IDF features are used and the curriculum is skipped.
    pub enabled: bool,
    pub d_in: usize,
    pub hidden: usize,
    pub d_dnn: usize,
    pub lr_max: f32,
    /// Total steps, split evenly across the preliminary levels.
    pub n_step: usize,
    pub batch_size: usize,
    pub loss: Loss,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let e = EncoderConfig::default();
        let t = TrainConfig::default();
        EncoderSection {
            enabled: true,
            d_in: e.d_in,
            hidden: e.hidden,
            d_dnn: e.d_dnn,
            lr_max: t.lr_max,
            n_step: t.n_step,
            batch_size: t.batch_size,
            loss: t.loss,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSection {
    pub lambda: f32,
    /// Beam width for training shortlists and inference.
    pub beam: usize,
    pub loss: Loss,
    pub eps: f64,
    pub max_iter: usize,
    pub prune_threshold: f32,
}

impl Default for TrainerSection {
    fn default() -> Self {
        let s = SolverConfig::default();
        TrainerSection {
            lambda: s.lambda,
            beam: 10,
            loss: s.loss,
            eps: s.eps,
            max_iter: s.max_iter,
            prune_threshold: s.prune_threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub psp_a: f64,
    pub psp_b: f64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            psp_a: 0.55,
            psp_b: 1.5,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Training features (SVMLight) or raw text, one document per line.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    /// Label file for raw-text training input.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: 0,
            vectorizer: TfidfConfig::default(),
            label_tree: LabelTreeSection::default(),
            multires: MultiresSection::default(),
            encoder: EncoderSection::default(),
            trainer: TrainerSection::default(),
            metrics: MetricsSection::default(),
            paths: PathsSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |r: Result<()>| r.map_err(|e| Error::Config(e.to_string()));
        check(self.vectorizer.validate())?;
        check(self.solver().validate())?;
        if self.encoder.enabled {
            check(self.encoder_train(1).validate())?;
            if self.encoder.d_in == 0 || self.encoder.hidden == 0 || self.encoder.d_dnn == 0 {
                return Err(Error::Config("encoder dimensions must be positive".into()));
            }
        }
        if !(self.multires.alpha.is_finite() && self.multires.alpha >= 0.0) {
            return Err(Error::Config("alpha must be non-negative".into()));
        }
        if self.trainer.beam == 0 {
            return Err(Error::Config("beam must be at least 1".into()));
        }
        if self.label_tree.kmeans_iters == 0 {
            return Err(Error::Config("kmeans_iters must be at least 1".into()));
        }
        if !(self.metrics.psp_a.is_finite() && self.metrics.psp_b.is_finite()) {
            return Err(Error::Config("psp parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            loss: self.trainer.loss,
            lambda: self.trainer.lambda,
            eps: self.trainer.eps,
            max_iter: self.trainer.max_iter,
            prune_threshold: self.trainer.prune_threshold,
            seed: self.seed,
        }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            d_in: self.encoder.d_in,
            hidden: self.encoder.hidden,
            d_dnn: self.encoder.d_dnn,
            seed: self.seed,
        }
    }

    /// Optimizer settings for one preliminary level given its step budget.
    pub fn encoder_train(&self, n_step: usize) -> TrainConfig {
        TrainConfig {
            lr_max: self.encoder.lr_max,
            n_step,
            batch_size: self.encoder.batch_size,
            loss: self.encoder.loss,
            lambda: self.trainer.lambda,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}
