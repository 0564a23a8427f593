//! Run configuration: a flat TOML table. Unknown keys are rejected.
//!
//! ```toml
//! seed = 1
//! epochs = 40
//! batch_size = 128
//! precision = "f32"            # or "f64"
//!
//! data = "synthetic"           # or "idx"
//! train_images = "train-images-idx3-ubyte"   # idx only
//! train_labels = "train-labels-idx1-ubyte"
//! test_images = "t10k-images-idx3-ubyte"
//! test_labels = "t10k-labels-idx1-ubyte"
//! train_limit = 10000          # optional subset of the training split
//! test_limit = 2000
//! synthetic_classes = 10
//! synthetic_dim = 784
//! synthetic_per_class = 1000
//! synthetic_test_per_class = 200
//! synthetic_sigma = 0.3
//! data_seed = 0
//!
//! hidden = [256]
//! lr = 0.05
//! momentum = 0.9
//! weight_decay = 1e-4
//! decay_all = false
//! nesterov = false
//! lr_milestones = [20, 30]     # default: 50% and 75% of epochs
//! lr_factor = 0.1
//!
//! initial_ratio = 0.0
//! target_ratio = 0.9
//! prune_start_epoch = 20       # default: 50% of epochs
//! prune_ramp_epochs = 10       # default: 25% of epochs
//!
//! rule = "D"                   # A, B, C, D_noFA, D
//! z = 1.0
//! mask_freq = 16
//! exploit_epoch = 33           # default: 83% of epochs; = epochs disables
//! norm_scope = "global"        # or "per_layer"
//! norm_kind = "magnitude_minmax"   # or "rank_linear"
//! checkpoint_every = 0         # epochs between checkpoints, 0 = final only
//! out_dir = "runs/example"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{mlp_specs, LayerSpec};
use crate::optim::LrSchedule;
use crate::prune::{GradualSchedule, NormKind, NormScope, UpdateRule};
use crate::tensor::Precision;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Idx,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub precision: Precision,

    pub data: DataSource,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub synthetic_classes: usize,
    pub synthetic_dim: usize,
    pub synthetic_per_class: usize,
    pub synthetic_test_per_class: usize,
    pub synthetic_sigma: f64,
    pub data_seed: u64,

    pub hidden: Vec<usize>,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_all: bool,
    pub nesterov: bool,
    pub lr_milestones: Option<Vec<usize>>,
    pub lr_factor: f64,

    pub initial_ratio: f64,
    pub target_ratio: f64,
    pub prune_start_epoch: Option<usize>,
    pub prune_ramp_epochs: Option<usize>,

    pub rule: UpdateRule,
    pub z: f64,
    pub mask_freq: u64,
    pub exploit_epoch: Option<usize>,
    pub norm_scope: NormScope,
    pub norm_kind: NormKind,
    pub checkpoint_every: usize,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            epochs: 40,
            batch_size: 128,
            precision: Precision::F32,
            data: DataSource::Synthetic,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            train_limit: None,
            test_limit: None,
            synthetic_classes: 10,
            synthetic_dim: 784,
            synthetic_per_class: 1000,
            synthetic_test_per_class: 200,
            synthetic_sigma: 0.3,
            data_seed: 0,
            hidden: vec![256],
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            decay_all: false,
            nesterov: false,
            lr_milestones: None,
            lr_factor: 0.1,
            initial_ratio: 0.0,
            target_ratio: 0.9,
            prune_start_epoch: None,
            prune_ramp_epochs: None,
            rule: UpdateRule::D,
            z: 1.0,
            mask_freq: 16,
            exploit_epoch: None,
            norm_scope: NormScope::Global,
            norm_kind: NormKind::MagnitudeMinmax,
            checkpoint_every: 0,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative data paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.train_images,
            &mut cfg.train_labels,
            &mut cfg.test_images,
            &mut cfg.test_labels,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn prune_start(&self) -> usize {
        self.prune_start_epoch.unwrap_or(self.epochs / 2)
    }

    pub fn prune_ramp(&self) -> usize {
        self.prune_ramp_epochs.unwrap_or((self.epochs / 4).max(1))
    }

    /// Epoch at which the structure freezes; equal to `epochs` when it never does.
    pub fn exploit(&self) -> usize {
        self.exploit_epoch
            .unwrap_or((self.epochs as f64 * 0.83).floor() as usize)
    }

    pub fn exploit_enabled(&self) -> bool {
        self.exploit() < self.epochs
    }

    pub fn schedule(&self) -> GradualSchedule {
        GradualSchedule {
            start: self.initial_ratio,
            target: self.target_ratio,
            begin: self.prune_start(),
            ramp: self.prune_ramp(),
        }
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        match &self.lr_milestones {
            Some(ms) => LrSchedule {
                base: self.lr,
                milestones: ms.iter().map(|&e| (e, self.lr_factor)).collect(),
            },
            None => LrSchedule {
                base: self.lr,
                milestones: vec![(self.epochs / 2, self.lr_factor), (self.epochs * 3 / 4, self.lr_factor)],
            },
        }
    }

    pub fn layer_specs(&self, input: usize, classes: usize) -> Vec<LayerSpec> {
        let mut widths = vec![input];
        widths.extend(&self.hidden);
        widths.push(classes);
        mlp_specs(&widths)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return fail("epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return fail("hidden must list at least one positive width".into());
        }
        if !(self.lr > 0.0) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return fail(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(self.lr_factor > 0.0) {
            return fail(format!("lr_factor must be positive, got {}", self.lr_factor));
        }
        self.schedule().validate()?;
        if self.prune_start() + self.prune_ramp() > self.epochs {
            return fail(format!(
                "pruning ramp ends at epoch {} but the run has {} epochs",
                self.prune_start() + self.prune_ramp(),
                self.epochs
            ));
        }
        if self.exploit() > self.epochs {
            return fail(format!(
                "exploit_epoch {} exceeds epochs {}",
                self.exploit(),
                self.epochs
            ));
        }
        if !(self.z >= 0.0) || !self.z.is_finite() {
            return fail(format!("z must be a finite value >= 0, got {}", self.z));
        }
        if self.mask_freq == 0 {
            return fail("mask_freq must be at least 1".into());
        }
        match self.data {
            DataSource::Idx => {
                if self.train_images.is_none()
                    || self.train_labels.is_none()
                    || self.test_images.is_none()
                    || self.test_labels.is_none()
                {
                    return fail("data = \"idx\" needs train/test image and label paths".into());
                }
            }
            DataSource::Synthetic => {
                if self.synthetic_classes < 2 {
                    return fail("synthetic_classes must be at least 2".into());
                }
                if self.synthetic_dim == 0 || self.synthetic_per_class == 0 || self.synthetic_test_per_class == 0 {
                    return fail("synthetic sizes must be positive".into());
                }
            }
        }
        Ok(())
    }
}
