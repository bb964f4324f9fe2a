use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_path_to_error::Segment;
use sha2::{Digest, Sha256};

use crate::channel_sim::{ChannelParams, RoomLayout};
use crate::dataset::NoiseSpec;
use crate::error::{Error, Result};
use crate::neuralnet::{FreezeMask, ModelConfig, OptimizerConfig};
use crate::transfer::{Convergence, TrainConfig};

/// JSON Schema for [`ExperimentConfig`], with every default spelled out.
pub const EXPERIMENT_SCHEMA: &str = include_str!("../../schema/experiment.schema.json");

/// Learning rate the fast profile uses for from-scratch training.
pub const FAST_LEARNING_RATE: f64 = 3e-3;
pub const FAST_EPOCHS: usize = 150;
/// Fine-tuning step size. Small enough that the trainable head absorbs the
/// noise without drifting from the base solution.
pub const TRANSFER_LEARNING_RATE: f64 = 3e-5;
/// Base noise deviation of the experiment suite, in dB. The synthetic data
/// already carries 1 dB of shadowing, so the noise has to exceed that for
/// NF = 2 to register.
pub const SUITE_SIGMA_BASE_DB: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 11,
        }
    }
}

/// How TL cells fine-tune. Everything not listed here comes from `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferSettings {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    /// `None` freezes every hidden layer but the last.
    pub freeze_mask: Option<FreezeMask>,
    pub convergence: Option<Convergence>,
    /// Draw fresh noise on the training features at every epoch.
    pub resample_per_epoch: bool,
    /// Score TL models on the unperturbed validation split.
    pub validate_on_clean: bool,
}

impl Default for TransferSettings {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::adam(TRANSFER_LEARNING_RATE),
            epochs: 600,
            freeze_mask: None,
            convergence: Some(Convergence::default()),
            resample_per_epoch: true,
            validate_on_clean: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Layout JSON file; the built-in factory layout when absent.
    pub layout: Option<PathBuf>,
    pub channel: ChannelParams,
    pub data_seed: u64,
    pub split: SplitConfig,
    pub model: ModelConfig,
    /// Base and EV training.
    pub train: TrainConfig,
    pub transfer: TransferSettings,
    pub noise: NoiseSpec,
    pub nfs: Vec<f64>,
    pub data_fractions: Vec<f64>,
    pub subsample_seed: u64,
    /// Existing checkpoint to use instead of training a base model.
    pub base_checkpoint: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            layout: None,
            channel: ChannelParams::default(),
            data_seed: 7,
            split: SplitConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            transfer: TransferSettings::default(),
            noise: NoiseSpec {
                sigma_base_db: SUITE_SIGMA_BASE_DB,
                ..NoiseSpec::default()
            },
            nfs: vec![2.0, 4.0, 8.0],
            data_fractions: vec![0.3, 0.5, 0.7, 1.0],
            subsample_seed: 5,
            base_checkpoint: None,
            output_dir: PathBuf::from("runs"),
            workers: 1,
        }
    }
}

impl ExperimentConfig {
    /// The default experiment shrunk for quick runs: two hidden layers of
    /// 64 units and 150 epochs.
    pub fn fast() -> Self {
        let mut cfg = Self::default();
        cfg.apply_fast();
        cfg
    }

    pub fn apply_fast(&mut self) {
        self.model.hidden_sizes = vec![64, 64];
        self.train.epochs = FAST_EPOCHS;
        self.train.optimizer.learning_rate = FAST_LEARNING_RATE;
        self.transfer.epochs = FAST_EPOCHS;
    }

    /// Reseeds every stochastic stage from one value.
    pub fn apply_seed(&mut self, seed: u64) {
        self.data_seed = seed;
        self.split.seed = seed.wrapping_add(1);
        self.noise.seed = seed.wrapping_add(2);
        self.model.init_seed = seed.wrapping_add(3);
        self.train.shuffle_seed = seed.wrapping_add(4);
        self.subsample_seed = seed.wrapping_add(5);
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::config(json_pointer(e.path()), e.inner().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.noise.validate()?;
        self.transfer.optimizer.validate()?;
        if self.transfer.epochs == 0 {
            return Err(Error::config("/transfer/epochs", "must be at least 1"));
        }
        if let Some(mask) = &self.transfer.freeze_mask {
            mask.check(&self.model)
                .map_err(|_| Error::config("/transfer/freeze_mask", "length must equal the layer count"))?;
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(Error::config("/split/train_fraction", "must lie in (0, 1)"));
        }
        if self.nfs.is_empty() {
            return Err(Error::config("/nfs", "at least one noise factor is required"));
        }
        for (i, nf) in self.nfs.iter().enumerate() {
            if !(nf.is_finite() && *nf > 0.0) {
                return Err(Error::config(format!("/nfs/{i}"), "noise factors must be positive"));
            }
        }
        for (i, f) in self.data_fractions.iter().enumerate() {
            if !(*f > 0.0 && *f <= 1.0) {
                return Err(Error::config(format!("/data_fractions/{i}"), "must lie in (0, 1]"));
            }
        }
        if self.workers == 0 {
            return Err(Error::config("/workers", "must be at least 1"));
        }
        Ok(())
    }

    pub fn load_layout(&self) -> Result<RoomLayout> {
        let layout = match &self.layout {
            Some(path) => RoomLayout::load(path)?,
            None => RoomLayout::factory_default(),
        };
        if layout.feature_dim() != self.model.input_dim {
            return Err(Error::config(
                "/model/input_dim",
                format!(
                    "layout has {} transmitters but the model expects {} inputs",
                    layout.feature_dim(),
                    self.model.input_dim
                ),
            ));
        }
        Ok(layout)
    }

    /// Content hash of everything that influences results.
    pub fn suite_id(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output_dir");
            obj.remove("workers");
        }
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Training settings for TL cells.
    pub fn transfer_train_config(&self) -> TrainConfig {
        TrainConfig {
            optimizer: self.transfer.optimizer,
            epochs: self.transfer.epochs,
            freeze_mask: self.transfer.freeze_mask.clone(),
            convergence: self.transfer.convergence,
            ..self.train.clone()
        }
    }
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}
