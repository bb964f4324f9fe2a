//! Browser front end for the workbench. Three operations are exported: an
//! RSSI heatmap of the default room, a noise explorer, and a small
//! base / EV / TL training comparison with error CDFs.
//!
//! Results cross the boundary as JSON strings; the page parses them.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use vlc_transfer::channel_sim::{los_gain, synthesize_dataset, ChannelParams, RoomLayout};
use vlc_transfer::dataset::{apply_norm, fit_norm, inject_noise_seeded, split, Dataset, NoiseSpec};
use vlc_transfer::metrics::{build_cdf, ErrorNorm};
use vlc_transfer::neuralnet::{init_model, ModelConfig, OptimizerConfig};
use vlc_transfer::transfer::{
    evaluate_errors, fine_tune_with, train_with, Checkpoint, Convergence, EpochClock, ModelKind, Provenance, Resample,
    RunReport, TrainConfig, TrainInputs,
};

/// Epoch timer backed by `Date.now()`; `std::time::Instant` is unavailable
/// in the browser.
#[derive(Default)]
struct DateClock {
    started_ms: Option<f64>,
}

impl EpochClock for DateClock {
    fn start(&mut self) {
        self.started_ms = Some(js_sys::Date::now());
    }

    fn stop(&mut self) -> f64 {
        self.started_ms
            .take()
            .map(|t| (js_sys::Date::now() - t) / 1000.0)
            .unwrap_or(0.0)
    }
}

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Noise-free received power at `rx`, floored like the simulator.
pub fn clean_rssi(layout: &RoomLayout, params: &ChannelParams, tx: usize, rx: [f64; 2]) -> f64 {
    let gain = los_gain(&layout.transmitters[tx], rx, layout.rx_height, params).unwrap_or(0.0);
    if gain <= 0.0 {
        params.noise_floor_dbm
    } else {
        (params.tx_power_dbm + 10.0 * gain.log10()).max(params.noise_floor_dbm)
    }
}

/// `[x_min, x_max, y_min, y_max]` covering every transmitter and patch.
pub fn room_bounds(layout: &RoomLayout) -> [f64; 4] {
    let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    let mut grow = |x: f64, y: f64| {
        b[0] = b[0].min(x);
        b[1] = b[1].max(x);
        b[2] = b[2].min(y);
        b[3] = b[3].max(y);
    };
    for t in &layout.transmitters {
        grow(t.x, t.y);
    }
    for p in &layout.patches {
        grow(p.x_min, p.y_min);
        grow(p.x_max, p.y_max);
    }
    let margin = 1.0;
    [b[0] - margin, b[1] + margin, b[2] - margin, b[3] + margin]
}

/// Row-major grid of clean RSSI, `rows` outer, y increasing. `tx = None`
/// takes the strongest transmitter at each point.
pub fn heatmap_values(
    layout: &RoomLayout,
    params: &ChannelParams,
    tx: Option<usize>,
    cols: usize,
    rows: usize,
) -> Vec<f64> {
    let [x0, x1, y0, y1] = room_bounds(layout);
    let mut out = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        let y = y0 + (y1 - y0) * (r as f64 + 0.5) / rows as f64;
        for c in 0..cols {
            let x = x0 + (x1 - x0) * (c as f64 + 0.5) / cols as f64;
            let value = match tx {
                Some(i) => clean_rssi(layout, params, i, [x, y]),
                None => (0..layout.transmitters.len())
                    .map(|i| clean_rssi(layout, params, i, [x, y]))
                    .fold(f64::NEG_INFINITY, f64::max),
            };
            out.push(value);
        }
    }
    out
}

#[derive(Debug, Serialize)]
pub struct NoiseReport {
    pub sigma_db: f64,
    pub empirical_std_db: f64,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub clean_example: Vec<f64>,
    pub noisy_example: Vec<f64>,
}

/// Perturbs every RSSI value and histograms the perturbations.
pub fn noise_report(
    data: &Dataset,
    spec: &NoiseSpec,
    bins: usize,
    example: usize,
) -> vlc_transfer::Result<NoiseReport> {
    let noisy = inject_noise_seeded(data, spec)?;
    let deltas: Vec<f64> = data
        .records()
        .iter()
        .zip(noisy.records())
        .flat_map(|(a, b)| a.rssi.iter().zip(&b.rssi).map(|(x, y)| y - x))
        .collect();
    let n = deltas.len() as f64;
    let mean = deltas.iter().sum::<f64>() / n;
    let std = (deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
    let sigma = spec.sigma();
    let half = (4.0 * sigma).max(0.5);
    let bins = bins.max(1);
    let width = 2.0 * half / bins as f64;
    let mut counts = vec![0usize; bins];
    for d in &deltas {
        let k = ((d + half) / width).floor();
        if k >= 0.0 && (k as usize) < bins {
            counts[k as usize] += 1;
        }
    }
    let example = example.min(data.len() - 1);
    Ok(NoiseReport {
        sigma_db: sigma,
        empirical_std_db: std,
        bin_edges: (0..=bins).map(|i| -half + i as f64 * width).collect(),
        counts,
        clean_example: data.records()[example].rssi.clone(),
        noisy_example: noisy.records()[example].rssi.clone(),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct CompareOptions {
    pub nf: f64,
    pub sigma_base_db: f64,
    pub epochs: usize,
    pub hidden: usize,
    pub seed: u64,
}

#[derive(Debug, Serialize)]
pub struct ModelResult {
    pub label: String,
    pub val_err_m: f64,
    pub val_sr: f64,
    pub epochs_run: usize,
    pub cum_time_s: f64,
    pub cum_energy_j: f64,
    /// Validation error after each epoch.
    pub curve: Vec<f64>,
    /// `(error_m, cum_fraction)` pairs, thinned for plotting.
    pub cdf: Vec<(f64, f64)>,
}

#[derive(Debug, Serialize)]
pub struct Comparison {
    pub base: ModelResult,
    pub ev: ModelResult,
    pub tl: ModelResult,
}

fn model_result(
    label: String,
    report: &RunReport,
    mlp: &vlc_transfer::neuralnet::Mlp,
    val: &Dataset,
) -> vlc_transfer::Result<ModelResult> {
    let cdf = build_cdf(&evaluate_errors(mlp, val, ErrorNorm::Euclidean)?)?;
    let points: Vec<(f64, f64)> = cdf.points().collect();
    let step = points.len().div_ceil(100).max(1);
    let mut thinned: Vec<(f64, f64)> = points.iter().copied().step_by(step).collect();
    if thinned.last() != points.last() {
        thinned.extend(points.last());
    }
    let m = report.final_metrics();
    Ok(ModelResult {
        label,
        val_err_m: m.val_err_m,
        val_sr: m.val_sr,
        epochs_run: report.epochs.len(),
        cum_time_s: report.cumulative_time_s(),
        cum_energy_j: report.cumulative_energy_j(),
        curve: report.epochs.iter().map(|e| e.val_err_m).collect(),
        cdf: thinned,
    })
}

/// Base on clean data, EV from scratch on noisy data, and TL from the base
/// with noise redrawn every epoch, on one 80/20 split of `data`.
pub fn compare(data: &Dataset, opts: CompareOptions, clock: &mut dyn EpochClock) -> vlc_transfer::Result<Comparison> {
    let (train_raw, val_raw) = split(data, 0.8, opts.seed)?;
    let model = ModelConfig {
        input_dim: data.feature_dim(),
        hidden_sizes: vec![opts.hidden, opts.hidden],
        init_seed: opts.seed,
        ..ModelConfig::default()
    };
    let train_cfg = TrainConfig {
        optimizer: OptimizerConfig::adam(3e-3),
        epochs: opts.epochs,
        shuffle_seed: opts.seed,
        ..TrainConfig::default()
    };
    let noise = NoiseSpec {
        nf: opts.nf,
        sigma_base_db: opts.sigma_base_db,
        seed: opts.seed,
        ..NoiseSpec::default()
    };

    let stats = fit_norm(&train_raw)?;
    let train = apply_norm(&train_raw, &stats)?;
    let val = apply_norm(&val_raw, &stats)?;
    let mut base_mlp = init_model(&model)?;
    let base_report = train_with(&mut base_mlp, TrainInputs::new(&train, &val), &train_cfg, clock)?;
    let base_prov = Provenance::root("base", ModelKind::Base, 0.0);
    let base_result = model_result(base_prov.label(), &base_report, &base_mlp, &val)?;

    let noisy_train = inject_noise_seeded(&train_raw, &noise)?;
    let noisy_val = inject_noise_seeded(
        &val_raw,
        &NoiseSpec {
            seed: noise.seed.wrapping_add(1),
            ..noise
        },
    )?;
    let ev_stats = fit_norm(&noisy_train)?;
    let ev_train = apply_norm(&noisy_train, &ev_stats)?;
    let ev_val = apply_norm(&noisy_val, &ev_stats)?;
    let mut ev_mlp = init_model(&model)?;
    let ev_report = train_with(&mut ev_mlp, TrainInputs::new(&ev_train, &ev_val), &train_cfg, clock)?;
    let ev_label = Provenance::root("ev", ModelKind::Ev, opts.nf).label();
    let ev_result = model_result(ev_label, &ev_report, &ev_mlp, &ev_val)?;

    let base = Checkpoint {
        mlp: base_mlp,
        norm_stats: stats.clone(),
        provenance: base_prov,
    };
    let tl_cfg = TrainConfig {
        optimizer: OptimizerConfig::adam(3e-5),
        convergence: Some(Convergence::default()),
        ..train_cfg
    };
    let inputs = TrainInputs {
        resample: Some(Resample {
            raw_train: &train_raw,
            stats: &stats,
            noise: NoiseSpec {
                seed: noise.seed.wrapping_add(2),
                ..noise
            },
        }),
        ..TrainInputs::new(&train, &val)
    };
    let (tl_mlp, tl_report) = fine_tune_with(&base, inputs, &tl_cfg, clock)?;
    let tl_prov = Provenance {
        parent: Some(Box::new(base.provenance.clone())),
        ..Provenance::root("tl", ModelKind::Tl, opts.nf)
    };
    let tl_result = model_result(tl_prov.label(), &tl_report, &tl_mlp, &val)?;
    Ok(Comparison {
        base: base_result,
        ev: ev_result,
        tl: tl_result,
    })
}

#[wasm_bindgen]
pub struct Demo {
    layout: RoomLayout,
    params: ChannelParams,
    data: Dataset,
}

#[wasm_bindgen]
impl Demo {
    /// Synthesizes the default room with the given data seed.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Result<Demo, JsError> {
        let layout = RoomLayout::factory_default();
        let params = ChannelParams::default();
        let records = synthesize_dataset(&layout, &params, seed as u64).map_err(js_err)?;
        Ok(Demo {
            data: Dataset::new(records).map_err(js_err)?,
            layout,
            params,
        })
    }

    #[wasm_bindgen(js_name = layoutJson)]
    pub fn layout_json(&self) -> String {
        serde_json::to_string(&self.layout).expect("layout serializes")
    }

    /// `[x_min, x_max, y_min, y_max]` of the heatmap.
    pub fn bounds(&self) -> Vec<f64> {
        room_bounds(&self.layout).to_vec()
    }

    #[wasm_bindgen(js_name = transmitterCount)]
    pub fn transmitter_count(&self) -> usize {
        self.layout.transmitters.len()
    }

    /// Clean RSSI in dBm for transmitter `tx` (1-based); 0 shows the
    /// strongest transmitter everywhere.
    pub fn heatmap(&self, tx: usize, cols: usize, rows: usize) -> Vec<f64> {
        let tx = (1..=self.layout.transmitters.len()).contains(&tx).then(|| tx - 1);
        heatmap_values(&self.layout, &self.params, tx, cols, rows)
    }

    #[wasm_bindgen(js_name = noiseReport)]
    pub fn noise_report(&self, nf: f64, sigma_base_db: f64, bins: usize, seed: u32) -> Result<String, JsError> {
        let spec = NoiseSpec {
            nf,
            sigma_base_db,
            seed: seed as u64,
            ..NoiseSpec::default()
        };
        spec.validate().map_err(js_err)?;
        let report = noise_report(&self.data, &spec, bins, 0).map_err(js_err)?;
        Ok(serde_json::to_string(&report).expect("report serializes"))
    }

    /// Trains base, EV and TL models; slow for large `epochs`.
    pub fn compare(
        &self,
        nf: f64,
        sigma_base_db: f64,
        epochs: usize,
        hidden: usize,
        seed: u32,
    ) -> Result<String, JsError> {
        let opts = CompareOptions {
            nf,
            sigma_base_db,
            epochs,
            hidden,
            seed: seed as u64,
        };
        let result = compare(&self.data, opts, &mut DateClock::default()).map_err(js_err)?;
        Ok(serde_json::to_string(&result).expect("comparison serializes"))
    }
}
