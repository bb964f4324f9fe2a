//! Checkpoints, weight transfer with frozen shared layers, and the training
//! loop that records per-epoch error, success rate, time and energy.

use std::borrow::Cow;
use std::path::Path;
use std::time::Instant;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{apply_norm, format_decimal, inject_noise, Dataset, NoiseSpec, NormStats};
use crate::error::{Error, Result};
use crate::metrics::{
    epoch_energy, localization_errors_matrix, mean_error, success_rate_with, Boundary, ErrorNorm, ErrorSample,
};
use crate::neuralnet::{FreezeMask, Gradients, Layer, LossWeights, Mlp, ModelConfig, OptimizerConfig, OptimizerState};

pub const SCHEMA_VERSION: u64 = 1;
pub const CHECKPOINT_FORMAT: &str = "vlc-transfer-checkpoint";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Base,
    Ev,
    Tl,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Base => "Base Model",
            ModelKind::Ev => "EV Model",
            ModelKind::Tl => "TL Model",
        }
    }
}

/// Lineage of a trained model. Parents are embedded, so a chain of any depth
/// resolves from a single checkpoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub run_id: String,
    pub kind: ModelKind,
    pub nf: f64,
    pub data_fraction: f64,
    #[serde(default)]
    pub parent_path: Option<String>,
    #[serde(default)]
    pub parent: Option<Box<Provenance>>,
}

impl Provenance {
    pub fn root(run_id: impl Into<String>, kind: ModelKind, nf: f64) -> Self {
        Self {
            run_id: run_id.into(),
            kind,
            nf,
            data_fraction: 1.0,
            parent_path: None,
            parent: None,
        }
    }

    /// This entry followed by its ancestors, nearest first.
    pub fn lineage(&self) -> Vec<&Provenance> {
        let mut out = vec![self];
        let mut cur = self;
        while let Some(p) = cur.parent.as_deref() {
            out.push(p);
            cur = p;
        }
        out
    }

    /// Short human label: `TL Model NF = 4` for a model transferred from a
    /// base model, `TL as (EV Model NF = 2)` for one chained from another
    /// noisy model.
    pub fn label(&self) -> String {
        let own = |p: &Provenance| match p.kind {
            ModelKind::Base => p.kind.label().to_string(),
            _ => format!("{} NF = {}", p.kind.label(), p.nf),
        };
        match (self.kind, self.parent.as_deref()) {
            (ModelKind::Tl, Some(parent)) if parent.kind != ModelKind::Base => {
                format!("TL as ({})", own(parent))
            }
            _ => own(self),
        }
    }
}

/// A model plus everything needed to reuse it on new data.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub mlp: Mlp,
    pub norm_stats: NormStats,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    schema_version: u64,
    model_config: ModelConfig,
    norm_stats: NormStats,
    provenance: Provenance,
    layers: Vec<LayerPayload>,
}

/// Row-major `fan_in x fan_out` weights and the bias, as little-endian
/// binary64 encoded in base64.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerPayload {
    fan_in: usize,
    fan_out: usize,
    weight: String,
    bias: String,
}

fn encode_f64s<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    let bytes: Vec<u8> = values.flat_map(|v| v.to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode_f64s(text: &str, expected: usize, what: &str) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(text)
        .map_err(|e| Error::CorruptPayload(format!("{what}: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(Error::CorruptPayload(format!(
            "{what}: expected {} bytes, found {}",
            expected * 8,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        schema_version: SCHEMA_VERSION,
        model_config: checkpoint.mlp.config().clone(),
        norm_stats: checkpoint.norm_stats.clone(),
        provenance: checkpoint.provenance.clone(),
        layers: checkpoint
            .mlp
            .layers()
            .iter()
            .map(|l| LayerPayload {
                fan_in: l.shape().0,
                fan_out: l.shape().1,
                weight: encode_f64s(l.weight.iter()),
                bias: encode_f64s(l.bias.iter()),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&file).expect("checkpoint serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text)
}

/// Loads a checkpoint and requires its architecture to equal `expected`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    let found = ckpt.mlp.config();
    if found.layer_shapes() != expected.layer_shapes() || found.activation != expected.activation {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint layers {:?} do not match configured {:?}",
            found.layer_shapes(),
            expected.layer_shapes()
        )));
    }
    Ok(ckpt)
}

pub fn parse_checkpoint(text: &str) -> Result<Checkpoint> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::CorruptPayload(e.to_string()))?;
    let version = value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::CorruptPayload("missing schema_version".into()))?;
    if version != SCHEMA_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: SCHEMA_VERSION,
        });
    }
    let file: CheckpointFile = serde_json::from_value(value).map_err(|e| Error::CorruptPayload(e.to_string()))?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::CorruptPayload(format!("unknown format `{}`", file.format)));
    }
    let config = file.model_config;
    let shapes = config.layer_shapes();
    if shapes.len() != file.layers.len() {
        return Err(Error::ShapeMismatch(format!(
            "config describes {} layers, payload holds {}",
            shapes.len(),
            file.layers.len()
        )));
    }
    let mut layers = Vec::with_capacity(shapes.len());
    for (i, (payload, &(fan_in, fan_out))) in file.layers.iter().zip(&shapes).enumerate() {
        if (payload.fan_in, payload.fan_out) != (fan_in, fan_out) {
            return Err(Error::ShapeMismatch(format!(
                "layer {i}: config {fan_in}x{fan_out}, payload {}x{}",
                payload.fan_in, payload.fan_out
            )));
        }
        let weight = decode_f64s(&payload.weight, fan_in * fan_out, &format!("layer {i} weight"))?;
        let bias = decode_f64s(&payload.bias, fan_out, &format!("layer {i} bias"))?;
        layers.push(Layer {
            weight: Array2::from_shape_vec((fan_in, fan_out), weight).expect("length checked"),
            bias: Array1::from_vec(bias),
        });
    }
    if file.norm_stats.dim() != config.input_dim || file.norm_stats.std.len() != config.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "normalization stats cover {} features, model expects {}",
            file.norm_stats.dim(),
            config.input_dim
        )));
    }
    Ok(Checkpoint {
        mlp: Mlp::from_layers(config, layers)?,
        norm_stats: file.norm_stats,
        provenance: file.provenance,
    })
}

/// Initializes a target model with the base parameters unchanged. Only
/// identical architectures transfer.
pub fn transfer_weights(base: &Mlp, target_config: &ModelConfig) -> Result<Mlp> {
    let base_cfg = base.config();
    if base_cfg.layer_shapes() != target_config.layer_shapes() {
        return Err(Error::ShapeMismatch(format!(
            "base layers {:?} cannot seed target layers {:?}",
            base_cfg.layer_shapes(),
            target_config.layer_shapes()
        )));
    }
    if base_cfg.activation != target_config.activation {
        return Err(Error::ShapeMismatch(format!(
            "base activation {:?} differs from target {:?}",
            base_cfg.activation, target_config.activation
        )));
    }
    Mlp::from_layers(target_config.clone(), base.layers().to_vec())
}

/// Every hidden layer except the last is shared and frozen; the last hidden
/// layer and the output layer stay trainable.
pub fn default_freeze_mask(config: &ModelConfig) -> FreezeMask {
    let hidden = config.hidden_sizes.len();
    let mut mask = vec![false; hidden + 1];
    for frozen in mask.iter_mut().take(hidden.saturating_sub(1)) {
        *frozen = true;
    }
    FreezeMask::new(mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerModel {
    pub p_cpu_w: f64,
    pub p_gpu_w: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        Self {
            p_cpu_w: 65.0,
            p_gpu_w: 0.0,
        }
    }
}

/// Early stopping: stop once the relative validation-error improvement has
/// stayed below `rel_eps` for `patience` consecutive epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Convergence {
    pub patience: usize,
    pub rel_eps: f64,
    /// Return the parameters of the trained epoch with the lowest validation
    /// error rather than those of the last epoch.
    pub restore_best: bool,
}

impl Default for Convergence {
    fn default() -> Self {
        Self {
            patience: 25,
            rel_eps: 1e-4,
            restore_best: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// `None` trains every layer in [`train`]; [`fine_tune`] falls back to
    /// [`default_freeze_mask`].
    pub freeze_mask: Option<FreezeMask>,
    pub loss_weights: LossWeights,
    pub success_threshold_m: f64,
    pub success_boundary: Boundary,
    pub error_norm: ErrorNorm,
    pub power: PowerModel,
    pub convergence: Option<Convergence>,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            batch_size: 64,
            epochs: 600,
            freeze_mask: None,
            loss_weights: LossWeights::default(),
            success_threshold_m: 1.0,
            success_boundary: Boundary::Inclusive,
            error_norm: ErrorNorm::Euclidean,
            power: PowerModel::default(),
            convergence: None,
            shuffle_seed: 31,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.loss_weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("/train/batch_size", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("/train/epochs", "must be at least 1"));
        }
        if !(self.success_threshold_m > 0.0) {
            return Err(Error::config("/train/success_threshold_m", "must be positive"));
        }
        if !(self.power.p_cpu_w >= 0.0 && self.power.p_gpu_w >= 0.0) {
            return Err(Error::config("/train/power", "power draws must be non-negative"));
        }
        if let Some(c) = self.convergence {
            if c.patience == 0 || !(c.rel_eps >= 0.0) {
                return Err(Error::config(
                    "/train/convergence",
                    "patience must be at least 1 and rel_eps non-negative",
                ));
            }
        }
        Ok(())
    }
}

/// Source of per-epoch wall time.
pub trait EpochClock {
    fn start(&mut self);
    /// Seconds since the matching [`EpochClock::start`].
    fn stop(&mut self) -> f64;
}

#[derive(Debug, Default)]
pub struct WallClock {
    started: Option<Instant>,
}

impl EpochClock for WallClock {
    fn start(&mut self) {
        self.started = Some(Instant::now());
    }

    fn stop(&mut self) -> f64 {
        self.started.take().map(|t| t.elapsed().as_secs_f64()).unwrap_or(0.0)
    }
}

/// Reports a constant duration per epoch.
#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub f64);

impl EpochClock for FixedClock {
    fn start(&mut self) {}

    fn stop(&mut self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub train_err_m: f64,
    pub val_err_m: f64,
    pub train_sr: f64,
    pub val_sr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_err_m: f64,
    pub val_err_m: f64,
    pub train_sr: f64,
    pub val_sr: f64,
    pub epoch_time_s: f64,
    pub epoch_energy_j: f64,
    pub cum_energy_j: f64,
}

impl EpochRecord {
    pub fn metrics(&self) -> EvalMetrics {
        EvalMetrics {
            train_err_m: self.train_err_m,
            val_err_m: self.val_err_m,
            train_sr: self.train_sr,
            val_sr: self.val_sr,
        }
    }
}

pub const REPORT_CSV_HEADER: &str =
    "epoch,train_err_m,val_err_m,train_sr,val_sr,epoch_time_s,epoch_energy_j,cum_energy_j";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Metrics of the starting parameters, before any update.
    pub initial: EvalMetrics,
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
    /// Epoch whose parameters were kept, when not the last one.
    pub restored_epoch: Option<usize>,
    pub transfer: bool,
    pub parent: Option<Provenance>,
    pub power: PowerModel,
}

impl RunReport {
    /// Metrics of the returned parameters.
    pub fn final_metrics(&self) -> EvalMetrics {
        let kept = match self.restored_epoch {
            Some(e) => self.epochs.iter().find(|r| r.epoch == e),
            None => self.epochs.last(),
        };
        kept.map_or(self.initial, EpochRecord::metrics)
    }

    pub fn cumulative_energy_j(&self) -> f64 {
        self.epochs.last().map_or(0.0, |r| r.cum_energy_j)
    }

    pub fn cumulative_time_s(&self) -> f64 {
        self.epochs.iter().map(|r| r.epoch_time_s).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_CSV_HEADER);
        out.push('\n');
        for r in &self.epochs {
            let cells = [
                r.train_err_m,
                r.val_err_m,
                r.train_sr,
                r.val_sr,
                r.epoch_time_s,
                r.epoch_energy_j,
                r.cum_energy_j,
            ];
            out.push_str(&r.epoch.to_string());
            for c in cells {
                out.push(',');
                out.push_str(&format_decimal(c));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Re-draws environmental noise on raw features at every epoch.
#[derive(Debug, Clone)]
pub struct Resample<'a> {
    pub raw_train: &'a Dataset,
    pub stats: &'a NormStats,
    pub noise: NoiseSpec,
}

/// Everything a training run reads. `train` and `val` are already
/// normalized; `source` is the retained source-domain set for the combined
/// objective.
#[derive(Debug, Clone)]
pub struct TrainInputs<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub resample: Option<Resample<'a>>,
    pub source: Option<&'a Dataset>,
}

impl<'a> TrainInputs<'a> {
    pub fn new(train: &'a Dataset, val: &'a Dataset) -> Self {
        Self {
            train,
            val,
            resample: None,
            source: None,
        }
    }
}

struct Matrices {
    x: Array2<f64>,
    y: Array2<f64>,
}

impl Matrices {
    fn of(data: &Dataset) -> Self {
        Self {
            x: data.features(),
            y: data.labels(),
        }
    }
}

/// Per-sample errors of `mlp` on already-normalized data.
pub fn evaluate_errors(mlp: &Mlp, data: &Dataset, norm: ErrorNorm) -> Result<Vec<ErrorSample>> {
    let m = Matrices::of(data);
    errors_on(mlp, &m, norm)
}

fn errors_on(mlp: &Mlp, m: &Matrices, norm: ErrorNorm) -> Result<Vec<ErrorSample>> {
    let pred = mlp.forward_batch(m.x.view())?;
    localization_errors_matrix(pred.view(), m.y.view(), norm)
}

fn summarize(mlp: &Mlp, m: &Matrices, cfg: &TrainConfig) -> Result<(f64, f64)> {
    let errors = errors_on(mlp, m, cfg.error_norm)?;
    Ok((
        mean_error(&errors)?,
        success_rate_with(&errors, cfg.success_threshold_m, cfg.success_boundary)?,
    ))
}

fn evaluate(mlp: &Mlp, train: &Matrices, val: &Matrices, cfg: &TrainConfig) -> Result<EvalMetrics> {
    let (train_err_m, train_sr) = summarize(mlp, train, cfg)?;
    let (val_err_m, val_sr) = summarize(mlp, val, cfg)?;
    Ok(EvalMetrics {
        train_err_m,
        val_err_m,
        train_sr,
        val_sr,
    })
}

/// Mini-batch training from the current parameters of `mlp` (updated in
/// place). `cfg.freeze_mask` of `None` trains every layer.
pub fn train(
    mlp: &mut Mlp,
    train_data: &Dataset,
    val_data: &Dataset,
    cfg: &TrainConfig,
    clock: &mut dyn EpochClock,
) -> Result<RunReport> {
    train_with(mlp, TrainInputs::new(train_data, val_data), cfg, clock)
}

pub fn train_with(
    mlp: &mut Mlp,
    inputs: TrainInputs<'_>,
    cfg: &TrainConfig,
    clock: &mut dyn EpochClock,
) -> Result<RunReport> {
    cfg.validate()?;
    let model_cfg = mlp.config().clone();
    if let Some(mask) = &cfg.freeze_mask {
        mask.check(&model_cfg)?;
    }
    for (name, data) in [("train", inputs.train), ("val", inputs.val)] {
        if data.is_empty() {
            return Err(Error::Empty(if name == "train" {
                "training set"
            } else {
                "validation set"
            }));
        }
        if data.feature_dim() != model_cfg.input_dim {
            return Err(Error::Dimension {
                context: "training data features",
                expected: model_cfg.input_dim,
                got: data.feature_dim(),
            });
        }
    }
    let frozen = cfg.freeze_mask.as_ref();
    let weights = cfg.loss_weights;
    let use_source = weights.lambda_s > 0.0;
    let source = match (use_source, inputs.source) {
        (true, Some(s)) => Some(Matrices::of(s)),
        (true, None) => {
            return Err(Error::config(
                "/train/loss_weights/lambda_s",
                "a positive source weight needs a retained source dataset",
            ))
        }
        (false, _) => None,
    };

    let val = Matrices::of(inputs.val);
    let mut train_m = Matrices::of(inputs.train);
    let mut noise_rng = inputs
        .resample
        .as_ref()
        .map(|r| ChaCha8Rng::seed_from_u64(r.noise.seed));
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut optimizer = OptimizerState::new(cfg.optimizer, &model_cfg);

    let initial = evaluate(mlp, &train_m, &val, cfg)?;
    let mut best_val = initial.val_err_m;
    let mut stalled = 0usize;
    let mut best_trained: Option<(usize, f64, Vec<Layer>)> = None;
    let mut cum_energy = 0.0;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut stopped_early = false;
    let mut source_cursor = 0usize;
    let mut source_order: Vec<usize> = source.as_ref().map_or(Vec::new(), |s| (0..s.x.nrows()).collect());

    for epoch in 1..=cfg.epochs {
        if let (Some(r), Some(rng)) = (&inputs.resample, noise_rng.as_mut()) {
            let noisy = inject_noise(r.raw_train, &r.noise, rng)?;
            train_m = Matrices::of(&apply_norm(&noisy, r.stats)?);
        }
        clock.start();
        let n = train_m.x.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch_size) {
            let xb = train_m.x.select(Axis(0), batch);
            let yb = train_m.y.select(Axis(0), batch);
            let (loss_t, mut grads) = mlp.backward_masked(xb.view(), yb.view(), frozen)?;
            let mut loss = weights.lambda_t * loss_t;
            if let Some(src) = &source {
                let picks = next_source_batch(&mut source_order, &mut source_cursor, batch.len(), &mut shuffle_rng);
                let xs = src.x.select(Axis(0), &picks);
                let ys = src.y.select(Axis(0), &picks);
                let (loss_s, grads_s) = mlp.backward_masked(xs.view(), ys.view(), frozen)?;
                loss += weights.lambda_s * loss_s;
                grads.blend(weights.lambda_t, &grads_s, weights.lambda_s);
            } else if weights.lambda_t != 1.0 {
                scale(&mut grads, weights.lambda_t);
            }
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            optimizer.apply(mlp, &grads, frozen)?;
        }
        let epoch_time_s = clock.stop();
        let energy = epoch_energy(cfg.power.p_cpu_w, cfg.power.p_gpu_w, epoch_time_s);
        cum_energy += energy;

        let m = evaluate(mlp, &train_m, &val, cfg)?;
        if !m.train_err_m.is_finite() || !m.val_err_m.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: m.train_err_m,
            });
        }
        epochs.push(EpochRecord {
            epoch,
            train_err_m: m.train_err_m,
            val_err_m: m.val_err_m,
            train_sr: m.train_sr,
            val_sr: m.val_sr,
            epoch_time_s,
            epoch_energy_j: energy,
            cum_energy_j: cum_energy,
        });

        if let Some(conv) = cfg.convergence {
            let improvement = if best_val > 0.0 {
                (best_val - m.val_err_m) / best_val
            } else {
                0.0
            };
            if improvement < conv.rel_eps {
                stalled += 1;
            } else {
                stalled = 0;
            }
            best_val = best_val.min(m.val_err_m);
            if conv.restore_best && best_trained.as_ref().is_none_or(|b| m.val_err_m < b.1) {
                best_trained = Some((epoch, m.val_err_m, mlp.layers().to_vec()));
            }
            if stalled >= conv.patience {
                stopped_early = epoch < cfg.epochs;
                break;
            }
        }
    }

    let mut restored_epoch = None;
    if let Some((epoch, _, layers)) = best_trained {
        if epoch != epochs.len() {
            mlp.layers_mut().clone_from_slice(&layers);
            restored_epoch = Some(epoch);
        }
    }

    Ok(RunReport {
        initial,
        epochs,
        stopped_early,
        restored_epoch,
        transfer: false,
        parent: None,
        power: cfg.power,
    })
}

fn next_source_batch(order: &mut [usize], cursor: &mut usize, size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut picks = Vec::with_capacity(size);
    while picks.len() < size {
        if *cursor == 0 {
            order.shuffle(rng);
        }
        picks.push(order[*cursor]);
        *cursor = (*cursor + 1) % order.len();
    }
    picks
}

fn scale(grads: &mut Gradients, factor: f64) {
    for l in &mut grads.layers {
        l.weight *= factor;
        l.bias *= factor;
    }
}

/// Transfers the base parameters into a fresh model, freezes the shared
/// layers and trains on target data normalized with the base statistics.
pub fn fine_tune(
    base: &Checkpoint,
    target_train: &Dataset,
    target_val: &Dataset,
    cfg: &TrainConfig,
    clock: &mut dyn EpochClock,
) -> Result<(Mlp, RunReport)> {
    fine_tune_with(base, TrainInputs::new(target_train, target_val), cfg, clock)
}

pub fn fine_tune_with(
    base: &Checkpoint,
    inputs: TrainInputs<'_>,
    cfg: &TrainConfig,
    clock: &mut dyn EpochClock,
) -> Result<(Mlp, RunReport)> {
    let target_cfg = base.mlp.config().clone();
    let mut mlp = transfer_weights(&base.mlp, &target_cfg)?;
    let mask = cfg
        .freeze_mask
        .clone()
        .unwrap_or_else(|| default_freeze_mask(&target_cfg));
    mask.check(&target_cfg)?;
    let tl_cfg = TrainConfig {
        freeze_mask: Some(mask),
        ..cfg.clone()
    };
    let mut report = train_with(&mut mlp, inputs, &tl_cfg, clock)?;
    report.transfer = true;
    report.parent = Some(base.provenance.clone());
    Ok((mlp, report))
}

/// Normalizes raw target data with the statistics stored in `base`.
pub fn normalize_for(base: &Checkpoint, raw: &Dataset) -> Result<Dataset> {
    apply_norm(raw, &base.norm_stats)
}

/// Borrowed or freshly normalized view of a dataset.
pub fn normalized<'a>(raw: &'a Dataset, stats: Option<&NormStats>) -> Result<Cow<'a, Dataset>> {
    match stats {
        Some(s) => Ok(Cow::Owned(apply_norm(raw, s)?)),
        None => Ok(Cow::Borrowed(raw)),
    }
}
