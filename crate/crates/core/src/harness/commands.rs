use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::suite::{CHECKPOINT_FILE, REPORT_FILE, SUMMARY_FILE};
use crate::channel_sim::synthesize_dataset;
use crate::dataset::{apply_norm, fit_norm, inject_noise_seeded, load_csv, save_csv, split, Dataset, NoiseSpec};
use crate::error::{Error, Result};
use crate::metrics::{build_cdf, mean_error, success_rate_with, CdfCurve, ErrorSample};
use crate::neuralnet::init_model;
use crate::transfer::{
    evaluate_errors, fine_tune_with, load_checkpoint, load_checkpoint_for, save_checkpoint, train_with, Checkpoint,
    EpochClock, ModelKind, Provenance, Resample, RunReport, TrainInputs,
};

pub const TRAIN_SPLIT_FILE: &str = "train.csv";
pub const VAL_SPLIT_FILE: &str = "val.csv";

/// Synthesizes the configured layout and writes it as CSV.
pub fn cmd_synth(cfg: &ExperimentConfig, out: &Path) -> Result<Dataset> {
    let layout = cfg.load_layout()?;
    let dataset = Dataset::new(synthesize_dataset(&layout, &cfg.channel, cfg.data_seed)?)?;
    create_parent(out)?;
    save_csv(&dataset, out)?;
    Ok(dataset)
}

/// Reads `data` when given, else synthesizes from the config.
pub fn load_or_synthesize(cfg: &ExperimentConfig, data: Option<&Path>) -> Result<Dataset> {
    match data {
        Some(path) => load_csv(path),
        None => {
            let layout = cfg.load_layout()?;
            Dataset::new(synthesize_dataset(&layout, &cfg.channel, cfg.data_seed)?)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub label: String,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub train_err_m: f64,
    pub val_err_m: f64,
    pub train_sr: f64,
    pub val_sr: f64,
    pub cum_time_s: f64,
    pub cum_energy_j: f64,
}

impl TrainSummary {
    fn of(report: &RunReport, provenance: &Provenance) -> Self {
        let m = report.final_metrics();
        Self {
            label: provenance.label(),
            epochs_run: report.epochs.len(),
            stopped_early: report.stopped_early,
            train_err_m: m.train_err_m,
            val_err_m: m.val_err_m,
            train_sr: m.train_sr,
            val_sr: m.val_sr,
            cum_time_s: report.cumulative_time_s(),
            cum_energy_j: report.cumulative_energy_j(),
        }
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub report: RunReport,
    pub checkpoint_path: PathBuf,
}

/// Trains from scratch on the training split of `data` and writes the
/// checkpoint, report, summary and both splits into `out_dir`. With a
/// positive `cfg.noise.nf` the training split is perturbed first, which
/// gives an EV model.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    data: Option<&Path>,
    out_dir: &Path,
    clock: &mut dyn EpochClock,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dataset = load_or_synthesize(cfg, data)?;
    let (train_raw, val_raw) = split(&dataset, cfg.split.train_fraction, cfg.split.seed)?;
    let nf = cfg.noise.nf;
    let (train_raw, val_raw) = if nf > 0.0 {
        let val = if cfg.noise.apply_to_validation {
            let spec = NoiseSpec {
                seed: cfg.noise.seed.wrapping_add(1),
                ..cfg.noise
            };
            inject_noise_seeded(&val_raw, &spec)?
        } else {
            val_raw
        };
        (inject_noise_seeded(&train_raw, &cfg.noise)?, val)
    } else {
        (train_raw, val_raw)
    };
    let stats = fit_norm(&train_raw)?;
    let train = apply_norm(&train_raw, &stats)?;
    let val = apply_norm(&val_raw, &stats)?;
    let mut mlp = init_model(&cfg.model)?;
    let report = train_with(&mut mlp, TrainInputs::new(&train, &val), &cfg.train, clock)?;
    let kind = if nf > 0.0 { ModelKind::Ev } else { ModelKind::Base };
    let checkpoint = Checkpoint {
        mlp,
        norm_stats: stats,
        provenance: Provenance::root(out_dir.display().to_string(), kind, nf),
    };
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    save_csv(&train_raw, out_dir.join(TRAIN_SPLIT_FILE))?;
    save_csv(&val_raw, out_dir.join(VAL_SPLIT_FILE))?;
    let checkpoint_path = write_run(out_dir, &checkpoint, &report)?;
    Ok(TrainOutcome {
        checkpoint,
        report,
        checkpoint_path,
    })
}

fn write_run(out_dir: &Path, checkpoint: &Checkpoint, report: &RunReport) -> Result<PathBuf> {
    let path = out_dir.join(CHECKPOINT_FILE);
    save_checkpoint(checkpoint, &path)?;
    report.write_csv(out_dir.join(REPORT_FILE))?;
    let summary = TrainSummary::of(report, &checkpoint.provenance);
    let summary_path = out_dir.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(&summary_path, text + "\n").map_err(|e| Error::io(&summary_path, e))?;
    Ok(path)
}

/// Adds `N(0, (nf * sigma_base)^2)` to every RSSI value of `input`.
pub fn cmd_perturb(input: &Path, spec: &NoiseSpec, out: &Path) -> Result<Dataset> {
    let data = load_csv(input)?;
    let noisy = inject_noise_seeded(&data, spec)?;
    create_parent(out)?;
    save_csv(&noisy, out)?;
    Ok(noisy)
}

/// Fine-tunes `base` on the training split of `data`. With a positive
/// `cfg.noise.nf` fresh noise is drawn on the training features every epoch
/// (or once, if the transfer settings disable resampling).
pub fn cmd_transfer(
    cfg: &ExperimentConfig,
    base_path: &Path,
    data: Option<&Path>,
    out_dir: &Path,
    clock: &mut dyn EpochClock,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let base = load_checkpoint_for(base_path, &cfg.model)?;
    let dataset = load_or_synthesize(cfg, data)?;
    let (train_raw, val_raw) = split(&dataset, cfg.split.train_fraction, cfg.split.seed)?;
    let nf = cfg.noise.nf;
    let stats = &base.norm_stats;
    let noisy_raw = if nf > 0.0 {
        inject_noise_seeded(&train_raw, &cfg.noise)?
    } else {
        train_raw.clone()
    };
    let train = apply_norm(&noisy_raw, stats)?;
    let val = apply_norm(&val_raw, stats)?;
    let inputs = TrainInputs {
        resample: (nf > 0.0 && cfg.transfer.resample_per_epoch).then(|| Resample {
            raw_train: &train_raw,
            stats,
            noise: NoiseSpec {
                seed: cfg.noise.seed.wrapping_add(2),
                ..cfg.noise
            },
        }),
        ..TrainInputs::new(&train, &val)
    };
    let (mlp, report) = fine_tune_with(&base, inputs, &cfg.transfer_train_config(), clock)?;
    let checkpoint = Checkpoint {
        mlp,
        norm_stats: stats.clone(),
        provenance: Provenance {
            parent_path: Some(base_path.display().to_string()),
            parent: Some(Box::new(base.provenance.clone())),
            ..Provenance::root(out_dir.display().to_string(), ModelKind::Tl, nf)
        },
    };
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    save_csv(&noisy_raw, out_dir.join(TRAIN_SPLIT_FILE))?;
    save_csv(&val_raw, out_dir.join(VAL_SPLIT_FILE))?;
    let checkpoint_path = write_run(out_dir, &checkpoint, &report)?;
    Ok(TrainOutcome {
        checkpoint,
        report,
        checkpoint_path,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub label: String,
    pub samples: usize,
    pub mean_error_m: f64,
    pub success_rate: f64,
    pub success_threshold_m: f64,
    pub median_error_m: f64,
    pub p90_error_m: f64,
}

fn errors_for(checkpoint: &Checkpoint, data: &Dataset, cfg: &ExperimentConfig) -> Result<Vec<ErrorSample>> {
    let normalized = apply_norm(data, &checkpoint.norm_stats)?;
    evaluate_errors(&checkpoint.mlp, &normalized, cfg.train.error_norm)
}

/// Scores a checkpoint on raw (unnormalized) data.
pub fn cmd_evaluate(cfg: &ExperimentConfig, checkpoint: &Path, data: &Path) -> Result<Evaluation> {
    let ckpt = load_checkpoint(checkpoint)?;
    let dataset = load_csv(data)?;
    let errors = errors_for(&ckpt, &dataset, cfg)?;
    let cdf = build_cdf(&errors)?;
    Ok(Evaluation {
        label: ckpt.provenance.label(),
        samples: errors.len(),
        mean_error_m: mean_error(&errors)?,
        success_rate: success_rate_with(&errors, cfg.train.success_threshold_m, cfg.train.success_boundary)?,
        success_threshold_m: cfg.train.success_threshold_m,
        median_error_m: cdf.quantile(0.5),
        p90_error_m: cdf.quantile(0.9),
    })
}

/// Writes the error CDF of a checkpoint on `data` as `error_m,cum_fraction`.
pub fn cmd_cdf(cfg: &ExperimentConfig, checkpoint: &Path, data: &Path, out: &Path) -> Result<CdfCurve> {
    let ckpt = load_checkpoint(checkpoint)?;
    let dataset = load_csv(data)?;
    let cdf = build_cdf(&errors_for(&ckpt, &dataset, cfg)?)?;
    create_parent(out)?;
    cdf.write_csv(out)?;
    Ok(cdf)
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}
