use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::channel_sim::synthesize_dataset;
use crate::dataset::{apply_norm, fit_norm, format_decimal, inject_noise_seeded, split, subsample, Dataset, NoiseSpec};
use crate::error::{Error, Result};
use crate::metrics::build_cdf;
use crate::neuralnet::init_model;
use crate::transfer::{
    evaluate_errors, fine_tune_with, load_checkpoint, load_checkpoint_for, save_checkpoint, train_with, Checkpoint,
    EpochClock, EvalMetrics, FixedClock, ModelKind, Provenance, Resample, RunReport, TrainInputs, WallClock,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt.json";
pub const REPORT_FILE: &str = "report.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CDF_FILE: &str = "cdf.csv";
pub const BEFORE_CHECKPOINT_FILE: &str = "before.ckpt.json";
pub const BEFORE_REPORT_FILE: &str = "before_report.csv";

pub const TABLE_CSV: &str = "table.csv";
pub const TABLE_JSON: &str = "table.json";
pub const BEFORE_AFTER_CSV: &str = "before_after.csv";

// Independent noise streams derived from the configured noise seed.
const VAL_STREAM: u64 = 1;
const RESAMPLE_STREAM: u64 = 2;

/// One unit of work in a suite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellSpec {
    Base,
    Ev {
        nf: f64,
    },
    Tl {
        nf: f64,
    },
    /// EV from scratch and TL on a subsample of the noisy training set.
    Limited {
        nf: f64,
        fraction: f64,
    },
}

fn compact(v: f64) -> String {
    format!("{v}").replace('.', "p")
}

impl CellSpec {
    pub fn id(&self) -> String {
        match *self {
            CellSpec::Base => "base".into(),
            CellSpec::Ev { nf } => format!("ev_nf{}", compact(nf)),
            CellSpec::Tl { nf } => format!("tl_nf{}", compact(nf)),
            CellSpec::Limited { nf, fraction } => {
                format!("ld_nf{}_f{}", compact(nf), compact((fraction * 100.0).round()))
            }
        }
    }

    fn needs_base(&self) -> bool {
        matches!(self, CellSpec::Tl { .. } | CellSpec::Limited { .. })
    }
}

/// Base, then EV and TL per NF, then every (NF, fraction) pair.
pub fn plan_cells(cfg: &ExperimentConfig) -> Vec<CellSpec> {
    let mut cells = vec![CellSpec::Base];
    cells.extend(cfg.nfs.iter().map(|&nf| CellSpec::Ev { nf }));
    cells.extend(cfg.nfs.iter().map(|&nf| CellSpec::Tl { nf }));
    for &nf in &cfg.nfs {
        cells.extend(
            cfg.data_fractions
                .iter()
                .map(|&fraction| CellSpec::Limited { nf, fraction }),
        );
    }
    cells
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Validation {
    Clean,
    Noisy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub metrics: EvalMetrics,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub validation: Validation,
    pub cum_time_s: f64,
    pub cum_energy_j: f64,
}

impl RunSummary {
    fn of(report: &RunReport, validation: Validation) -> Self {
        Self {
            metrics: report.final_metrics(),
            epochs_run: report.epochs.len(),
            stopped_early: report.stopped_early,
            validation,
            cum_time_s: report.cumulative_time_s(),
            cum_energy_j: report.cumulative_energy_j(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell_id: String,
    pub model: ModelKind,
    pub label: String,
    pub nf: f64,
    pub data_fraction: f64,
    pub run: RunSummary,
    /// The from-scratch EV run a limited-data cell compares against.
    pub before: Option<RunSummary>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub suite_id: String,
    pub directory: PathBuf,
    pub cells: Vec<CellSummary>,
    pub failures: Vec<CellFailure>,
    /// Cells whose outputs already existed and were reused.
    pub reused: Vec<String>,
}

impl SuiteResult {
    pub fn is_success(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn cell(&self, id: &str) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.cell_id == id)
    }

    /// Final validation error of the cell, if it ran.
    pub fn val_err(&self, spec: CellSpec) -> Option<f64> {
        self.cell(&spec.id()).map(|c| c.run.metrics.val_err_m)
    }

    /// One row per cell with every column of [`SuiteResult::table_csv`]
    /// except wall time and energy.
    pub fn metrics_table(&self) -> String {
        self.render(false)
    }

    pub fn table_csv(&self) -> String {
        self.render(true)
    }

    fn render(&self, with_cost: bool) -> String {
        let mut out = String::from(
            "cell_id,model,label,nf,data_fraction,validation,epochs,stopped_early,train_err_m,val_err_m,train_sr,val_sr",
        );
        if with_cost {
            out.push_str(",cum_time_s,cum_energy_j");
        }
        out.push('\n');
        for c in &self.cells {
            let m = &c.run.metrics;
            let _ = write!(
                out,
                "{},{:?},{},{},{},{:?},{},{},{},{},{},{}",
                c.cell_id,
                c.model,
                c.label,
                format_decimal(c.nf),
                format_decimal(c.data_fraction),
                c.run.validation,
                c.run.epochs_run,
                c.run.stopped_early,
                format_decimal(m.train_err_m),
                format_decimal(m.val_err_m),
                format_decimal(m.train_sr),
                format_decimal(m.val_sr),
            );
            if with_cost {
                let _ = write!(
                    out,
                    ",{},{}",
                    format_decimal(c.run.cum_time_s),
                    format_decimal(c.run.cum_energy_j)
                );
            }
            out.push('\n');
        }
        out
    }

    /// Mean validation error before and after transfer, one row per data
    /// fraction.
    pub fn before_after_csv(&self) -> String {
        let limited: Vec<&CellSummary> = self.cells.iter().filter(|c| c.before.is_some()).collect();
        let nfs: Vec<f64> = dedup(limited.iter().map(|c| c.nf));
        let fractions: Vec<f64> = dedup(limited.iter().map(|c| c.data_fraction));
        let mut out = String::from("data_fraction");
        for prefix in ["before", "after"] {
            for nf in &nfs {
                let _ = write!(out, ",{prefix}_nf{}_m", compact(*nf));
            }
        }
        out.push('\n');
        for f in &fractions {
            out.push_str(&format_decimal(*f));
            for before in [true, false] {
                for nf in &nfs {
                    let cell = limited.iter().find(|c| c.nf == *nf && c.data_fraction == *f);
                    let value = cell.map(|c| {
                        if before {
                            c.before.as_ref().expect("filtered").metrics.val_err_m
                        } else {
                            c.run.metrics.val_err_m
                        }
                    });
                    out.push(',');
                    if let Some(v) = value {
                        out.push_str(&format_decimal(v));
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

fn dedup(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut seen = Vec::new();
    for v in values {
        if !seen.contains(&v) {
            seen.push(v);
        }
    }
    seen
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SuiteOptions {
    /// Report this duration for every epoch instead of measuring it.
    pub fixed_epoch_time_s: Option<f64>,
}

/// Shared, read-only inputs of every cell.
struct Context<'a> {
    cfg: &'a ExperimentConfig,
    dir: PathBuf,
    suite_id: String,
    train: Dataset,
    val: Dataset,
    options: SuiteOptions,
}

impl Context<'_> {
    fn clock(&self) -> Box<dyn EpochClock> {
        match self.options.fixed_epoch_time_s {
            Some(t) => Box::new(FixedClock(t)),
            None => Box::new(WallClock::default()),
        }
    }

    fn noise(&self, nf: f64) -> NoiseSpec {
        self.cfg.noise.with_nf(nf)
    }

    fn noisy_train(&self, nf: f64, fraction: f64) -> Result<Dataset> {
        let noisy = inject_noise_seeded(&self.train, &self.noise(nf))?;
        self.limit(&noisy, fraction)
    }

    fn limit(&self, data: &Dataset, fraction: f64) -> Result<Dataset> {
        if fraction >= 1.0 {
            Ok(data.clone())
        } else {
            subsample(data, fraction, self.cfg.subsample_seed)
        }
    }

    fn ev_validation(&self, nf: f64) -> Result<(Dataset, Validation)> {
        let spec = self.noise(nf);
        if spec.apply_to_validation {
            let spec = NoiseSpec {
                seed: spec.seed.wrapping_add(VAL_STREAM),
                ..spec
            };
            Ok((inject_noise_seeded(&self.val, &spec)?, Validation::Noisy))
        } else {
            Ok((self.val.clone(), Validation::Clean))
        }
    }

    fn run_id(&self, cell: &str) -> String {
        format!("{}/{}", self.suite_id, cell)
    }
}

/// A trained model and its report, ready to be written to a cell directory.
struct Trained {
    checkpoint: Checkpoint,
    report: RunReport,
    validation: Validation,
    /// Normalized validation data the report was scored on.
    val: Dataset,
}

fn train_base(ctx: &Context) -> Result<Trained> {
    let cfg = ctx.cfg;
    if let Some(path) = &cfg.base_checkpoint {
        let checkpoint = load_checkpoint_for(path, &cfg.model)?;
        let train = apply_norm(&ctx.train, &checkpoint.norm_stats)?;
        let val = apply_norm(&ctx.val, &checkpoint.norm_stats)?;
        let mut mlp = checkpoint.mlp.clone();
        let eval_only = crate::transfer::TrainConfig {
            epochs: 1,
            optimizer: crate::neuralnet::OptimizerConfig::adam(0.0),
            ..cfg.train.clone()
        };
        let mut report = train_with(
            &mut mlp,
            TrainInputs::new(&train, &val),
            &eval_only,
            &mut FixedClock(0.0),
        )?;
        report.epochs.clear();
        return Ok(Trained {
            checkpoint,
            report,
            validation: Validation::Clean,
            val,
        });
    }
    let stats = fit_norm(&ctx.train)?;
    let train = apply_norm(&ctx.train, &stats)?;
    let val = apply_norm(&ctx.val, &stats)?;
    let mut mlp = init_model(&cfg.model)?;
    let report = train_with(
        &mut mlp,
        TrainInputs::new(&train, &val),
        &cfg.train,
        ctx.clock().as_mut(),
    )?;
    Ok(Trained {
        checkpoint: Checkpoint {
            mlp,
            norm_stats: stats,
            provenance: Provenance::root(ctx.run_id("base"), ModelKind::Base, 0.0),
        },
        report,
        validation: Validation::Clean,
        val,
    })
}

fn train_ev(ctx: &Context, nf: f64, fraction: f64, cell: &str) -> Result<Trained> {
    let cfg = ctx.cfg;
    let raw_train = ctx.noisy_train(nf, fraction)?;
    let (raw_val, validation) = ctx.ev_validation(nf)?;
    let stats = fit_norm(&raw_train)?;
    let train = apply_norm(&raw_train, &stats)?;
    let val = apply_norm(&raw_val, &stats)?;
    let clean_subset = ctx.limit(&ctx.train, fraction)?;
    let spec = ctx.noise(nf);
    let inputs = TrainInputs {
        resample: spec.resample_per_epoch.then(|| Resample {
            raw_train: &clean_subset,
            stats: &stats,
            noise: NoiseSpec {
                seed: spec.seed.wrapping_add(RESAMPLE_STREAM),
                ..spec
            },
        }),
        ..TrainInputs::new(&train, &val)
    };
    let mut mlp = init_model(&cfg.model)?;
    let report = train_with(&mut mlp, inputs, &cfg.train, ctx.clock().as_mut())?;
    Ok(Trained {
        checkpoint: Checkpoint {
            mlp,
            norm_stats: stats,
            provenance: Provenance {
                data_fraction: fraction,
                ..Provenance::root(ctx.run_id(cell), ModelKind::Ev, nf)
            },
        },
        report,
        validation,
        val,
    })
}

fn train_tl(ctx: &Context, base: &Checkpoint, base_path: &Path, nf: f64, fraction: f64, cell: &str) -> Result<Trained> {
    let cfg = ctx.cfg;
    let stats = &base.norm_stats;
    let spec = ctx.noise(nf);
    let train = apply_norm(&ctx.noisy_train(nf, fraction)?, stats)?;
    let (val, validation) = if cfg.transfer.validate_on_clean {
        (apply_norm(&ctx.val, stats)?, Validation::Clean)
    } else {
        let (v, kind) = ctx.ev_validation(nf)?;
        (apply_norm(&v, stats)?, kind)
    };
    let clean_subset = ctx.limit(&ctx.train, fraction)?;
    let inputs = TrainInputs {
        resample: cfg.transfer.resample_per_epoch.then(|| Resample {
            raw_train: &clean_subset,
            stats,
            noise: NoiseSpec {
                seed: spec.seed.wrapping_add(RESAMPLE_STREAM),
                ..spec
            },
        }),
        ..TrainInputs::new(&train, &val)
    };
    let (mlp, report) = fine_tune_with(base, inputs, &cfg.transfer_train_config(), ctx.clock().as_mut())?;
    Ok(Trained {
        checkpoint: Checkpoint {
            mlp,
            norm_stats: stats.clone(),
            provenance: Provenance {
                data_fraction: fraction,
                parent_path: Some(base_path.display().to_string()),
                parent: Some(Box::new(base.provenance.clone())),
                ..Provenance::root(ctx.run_id(cell), ModelKind::Tl, nf)
            },
        },
        report,
        validation,
        val,
    })
}

fn write_trained(dir: &Path, t: &Trained, ckpt_name: &str, report_name: &str) -> Result<()> {
    save_checkpoint(&t.checkpoint, dir.join(ckpt_name))?;
    t.report.write_csv(dir.join(report_name))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("summary serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn cell_files(spec: &CellSpec) -> Vec<&'static str> {
    let mut files = vec![CHECKPOINT_FILE, REPORT_FILE, SUMMARY_FILE, CDF_FILE];
    if matches!(spec, CellSpec::Limited { .. }) {
        files.extend([BEFORE_CHECKPOINT_FILE, BEFORE_REPORT_FILE]);
    }
    files
}

fn is_complete(dir: &Path, spec: &CellSpec) -> bool {
    cell_files(spec).iter().all(|f| dir.join(f).is_file())
}

fn run_cell(ctx: &Context, spec: CellSpec) -> Result<CellSummary> {
    let id = spec.id();
    let dir = ctx.dir.join(&id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let base_path = ctx.dir.join("base").join(CHECKPOINT_FILE);
    let base = if spec.needs_base() {
        Some(load_checkpoint(&base_path)?)
    } else {
        None
    };
    let (after, before, nf, fraction) = match spec {
        CellSpec::Base => (train_base(ctx)?, None, 0.0, 1.0),
        CellSpec::Ev { nf } => (train_ev(ctx, nf, 1.0, &id)?, None, nf, 1.0),
        CellSpec::Tl { nf } => {
            let base = base.as_ref().expect("loaded above");
            (train_tl(ctx, base, &base_path, nf, 1.0, &id)?, None, nf, 1.0)
        }
        CellSpec::Limited { nf, fraction } => {
            let base = base.as_ref().expect("loaded above");
            let before = train_ev(ctx, nf, fraction, &format!("{id}/before"))?;
            let after = train_tl(ctx, base, &base_path, nf, fraction, &id)?;
            (after, Some(before), nf, fraction)
        }
    };
    if let Some(b) = &before {
        write_trained(&dir, b, BEFORE_CHECKPOINT_FILE, BEFORE_REPORT_FILE)?;
    }
    let errors = evaluate_errors(&after.checkpoint.mlp, &after.val, ctx.cfg.train.error_norm)?;
    build_cdf(&errors)?.write_csv(dir.join(CDF_FILE))?;
    let summary = CellSummary {
        cell_id: id,
        model: after.checkpoint.provenance.kind,
        label: after.checkpoint.provenance.label(),
        nf,
        data_fraction: fraction,
        run: RunSummary::of(&after.report, after.validation),
        before: before.as_ref().map(|b| RunSummary::of(&b.report, b.validation)),
        provenance: after.checkpoint.provenance.clone(),
    };
    // The summary goes last: its presence marks the cell complete.
    write_trained(&dir, &after, CHECKPOINT_FILE, REPORT_FILE)?;
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Progress notifications from [`run_suite_with`].
#[derive(Debug, Clone)]
pub enum SuiteEvent<'a> {
    Started { cell: &'a str },
    Reused { cell: &'a str },
    Finished { summary: &'a CellSummary },
    Failed { cell: &'a str, error: &'a Error },
}

pub fn run_suite(cfg: &ExperimentConfig) -> Result<SuiteResult> {
    run_suite_with(cfg, SuiteOptions::default(), &|_| {})
}

/// Runs every planned cell, reusing cells whose outputs already exist.
/// A failing cell does not stop independent cells; it is listed in
/// [`SuiteResult::failures`].
pub fn run_suite_with(
    cfg: &ExperimentConfig,
    options: SuiteOptions,
    on_event: &(dyn Fn(SuiteEvent<'_>) + Sync),
) -> Result<SuiteResult> {
    cfg.validate()?;
    let layout = cfg.load_layout()?;
    let records = synthesize_dataset(&layout, &cfg.channel, cfg.data_seed)?;
    let (train, val) = split(&Dataset::new(records)?, cfg.split.train_fraction, cfg.split.seed)?;
    let suite_id = cfg.suite_id();
    let dir = cfg.output_dir.join(&suite_id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_json(&dir.join("config.json"), cfg)?;
    let ctx = Context {
        cfg,
        dir: dir.clone(),
        suite_id: suite_id.clone(),
        train,
        val,
        options,
    };

    let cells = plan_cells(cfg);
    let slots: Vec<Mutex<Option<Result<CellSummary>>>> = cells.iter().map(|_| Mutex::new(None)).collect();
    let reused = Mutex::new(BTreeSet::new());
    run_phase(&ctx, &cells, &slots, &reused, |c| !c.needs_base(), on_event);
    let base_ok = matches!(*slots[0].lock().expect("slot lock"), Some(Ok(_)));
    if base_ok {
        run_phase(&ctx, &cells, &slots, &reused, CellSpec::needs_base, on_event);
    }

    let mut result = SuiteResult {
        suite_id,
        directory: dir.clone(),
        cells: Vec::new(),
        failures: Vec::new(),
        reused: reused.into_inner().expect("reused lock").into_iter().collect(),
    };
    for (spec, slot) in cells.iter().zip(slots) {
        match slot.into_inner().expect("slot lock") {
            Some(Ok(summary)) => result.cells.push(summary),
            Some(Err(e)) => result.failures.push(CellFailure {
                cell_id: spec.id(),
                message: e.to_string(),
            }),
            None => result.failures.push(CellFailure {
                cell_id: spec.id(),
                message: "skipped because the base cell failed".into(),
            }),
        }
    }
    std::fs::write(dir.join(TABLE_CSV), result.table_csv()).map_err(|e| Error::io(dir.join(TABLE_CSV), e))?;
    std::fs::write(dir.join(BEFORE_AFTER_CSV), result.before_after_csv())
        .map_err(|e| Error::io(dir.join(BEFORE_AFTER_CSV), e))?;
    write_json(&dir.join(TABLE_JSON), &result)?;
    Ok(result)
}

/// Runs the selected cells on up to `workers` threads.
fn run_phase(
    ctx: &Context,
    cells: &[CellSpec],
    slots: &[Mutex<Option<Result<CellSummary>>>],
    reused: &Mutex<BTreeSet<String>>,
    select: impl Fn(&CellSpec) -> bool,
    on_event: &(dyn Fn(SuiteEvent<'_>) + Sync),
) {
    let todo: Vec<usize> = (0..cells.len()).filter(|&i| select(&cells[i])).collect();
    let next = AtomicUsize::new(0);
    let workers = ctx.cfg.workers.min(todo.len()).max(1);
    let work = || loop {
        let k = next.fetch_add(1, Ordering::SeqCst);
        let Some(&i) = todo.get(k) else { break };
        let spec = cells[i];
        let id = spec.id();
        let dir = ctx.dir.join(&id);
        let outcome = if is_complete(&dir, &spec) {
            on_event(SuiteEvent::Reused { cell: &id });
            reused.lock().expect("reused lock").insert(id.clone());
            read_json(&dir.join(SUMMARY_FILE))
        } else {
            on_event(SuiteEvent::Started { cell: &id });
            run_cell(ctx, spec)
        };
        match &outcome {
            Ok(summary) => on_event(SuiteEvent::Finished { summary }),
            Err(error) => on_event(SuiteEvent::Failed { cell: &id, error }),
        }
        *slots[i].lock().expect("slot lock") = Some(outcome);
    };
    std::thread::scope(|s| {
        for _ in 1..workers {
            s.spawn(work);
        }
        work();
    });
}
