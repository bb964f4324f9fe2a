//! Fingerprint datasets: CSV I/O, splitting, standardization, environmental
//! noise injection and limited-data subsampling.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel_sim::FingerprintRecord;
use crate::error::{Error, Result};

/// Lower clamp applied to per-feature standard deviations.
pub const EPS_STD: f64 = 1e-8;

const SIGNIFICANT_DIGITS: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<FingerprintRecord>,
    feature_dim: usize,
}

impl Dataset {
    pub fn new(records: Vec<FingerprintRecord>) -> Result<Self> {
        let feature_dim = records.first().map(|r| r.rssi.len()).ok_or(Error::NoRecords)?;
        for r in &records {
            if r.rssi.len() != feature_dim {
                return Err(Error::Dimension {
                    context: "dataset record",
                    expected: feature_dim,
                    got: r.rssi.len(),
                });
            }
        }
        Ok(Self { records, feature_dim })
    }

    pub fn records(&self) -> &[FingerprintRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<FingerprintRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Row-major `n x d` feature matrix.
    pub fn features(&self) -> Array2<f64> {
        let n = self.records.len();
        let mut out = Array2::zeros((n, self.feature_dim));
        for (mut row, rec) in out.rows_mut().into_iter().zip(&self.records) {
            for (dst, src) in row.iter_mut().zip(&rec.rssi) {
                *dst = *src;
            }
        }
        out
    }

    /// `n x 2` matrix of positions in meters.
    pub fn labels(&self) -> Array2<f64> {
        let n = self.records.len();
        let mut out = Array2::zeros((n, 2));
        for (i, rec) in self.records.iter().enumerate() {
            out[[i, 0]] = rec.position[0];
            out[[i, 1]] = rec.position[1];
        }
        out
    }

    fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            feature_dim: self.feature_dim,
        }
    }

    fn map_features(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Dataset {
        let records = self
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| FingerprintRecord {
                scenario_id: r.scenario_id,
                position: r.position,
                rssi: r.rssi.iter().enumerate().map(|(k, &v)| f(i, k, v)).collect(),
            })
            .collect();
        Dataset {
            records,
            feature_dim: self.feature_dim,
        }
    }
}

pub fn csv_header(feature_dim: usize) -> Vec<String> {
    let mut header = vec!["scenario_id".to_string(), "rx_x_m".to_string(), "rx_y_m".to_string()];
    header.extend((1..=feature_dim).map(|k| format!("rssi_tx{k}_dbm")));
    header
}

/// Shortest round-trip decimal, zero-padded to at least nine significant
/// digits. Padding with zeros never changes the parsed value.
pub fn format_decimal(value: f64) -> String {
    let mut s = format!("{value}");
    if !value.is_finite() {
        return s;
    }
    let digits = s
        .chars()
        .filter(char::is_ascii_digit)
        .collect::<String>()
        .trim_start_matches('0')
        .len();
    if digits < SIGNIFICANT_DIGITS {
        if !s.contains('.') {
            s.push('.');
        }
        // All-zero values have no leading digit to count from.
        let pad = if value == 0.0 {
            SIGNIFICANT_DIGITS - 1
        } else {
            SIGNIFICANT_DIGITS - digits
        };
        s.extend(std::iter::repeat_n('0', pad));
    }
    s
}

pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    };
    let mut writer = csv::Writer::from_path(path).map_err(io_err)?;
    writer.write_record(csv_header(dataset.feature_dim)).map_err(io_err)?;
    for rec in &dataset.records {
        let mut row = Vec::with_capacity(3 + rec.rssi.len());
        row.push(rec.scenario_id.to_string());
        row.push(format_decimal(rec.position[0]));
        row.push(format_decimal(rec.position[1]));
        row.extend(rec.rssi.iter().map(|v| format_decimal(*v)));
        writer.write_record(&row).map_err(io_err)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file)
}

/// Parses the fingerprint CSV schema. Row numbers in errors are 1-based file
/// lines (the header is row 1).
pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut rows = rdr.records();
    let header = match rows.next() {
        None => return Err(Error::NoRecords),
        Some(h) => h.map_err(|e| Error::Parse {
            row: 1,
            column: "-".into(),
            message: e.to_string(),
        })?,
    };
    if header.len() < 4 {
        return Err(Error::Parse {
            row: 1,
            column: "-".into(),
            message: format!("expected at least 4 columns, found {}", header.len()),
        });
    }
    let feature_dim = header.len() - 3;
    for (i, (got, want)) in header.iter().zip(csv_header(feature_dim)).enumerate() {
        if got.trim() != want {
            return Err(Error::Parse {
                row: 1,
                column: format!("{} ({want})", i + 1),
                message: format!("expected header `{want}`, found `{got}`"),
            });
        }
    }
    let names = csv_header(feature_dim);
    let mut records = Vec::new();
    for (i, row) in rows.enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse {
            row: line,
            column: "-".into(),
            message: e.to_string(),
        })?;
        if row.len() != header.len() {
            return Err(Error::Parse {
                row: line,
                column: "-".into(),
                message: format!("expected {} columns, found {}", header.len(), row.len()),
            });
        }
        let cell = |c: usize| -> Result<f64> {
            let raw = row[c].trim();
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row: line,
                    column: names[c].clone(),
                    message: format!("`{raw}` is not a finite number"),
                })
        };
        let scenario_id = row[0].trim().parse::<u32>().map_err(|_| Error::Parse {
            row: line,
            column: names[0].clone(),
            message: format!("`{}` is not a non-negative integer", &row[0]),
        })?;
        let position = [cell(1)?, cell(2)?];
        let rssi = (3..header.len()).map(cell).collect::<Result<Vec<_>>>()?;
        records.push(FingerprintRecord {
            scenario_id,
            position,
            rssi,
        });
    }
    Dataset::new(records)
}

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Uniform random train/validation partition. Each side keeps the input's
/// relative record order.
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(
            "/split/train_fraction",
            format!("must lie in (0, 1), got {train_fraction}"),
        ));
    }
    let n = dataset.len();
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::config(
            "/split/train_fraction",
            format!("fraction {train_fraction} of {n} records leaves one side empty"),
        ));
    }
    let idx = shuffled_indices(n, seed);
    let mut train = idx[..n_train].to_vec();
    let mut val = idx[n_train..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    Ok((dataset.select(&train), dataset.select(&val)))
}

/// Uniform random subset without replacement, in input order.
pub fn subsample(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config(
            "/data_fractions",
            format!("fraction must lie in (0, 1], got {fraction}"),
        ));
    }
    let n = dataset.len();
    let keep = (fraction * n as f64).round() as usize;
    if keep == 0 {
        return Err(Error::config(
            "/data_fractions",
            format!("fraction {fraction} of {n} records selects nothing"),
        ));
    }
    let mut idx = shuffled_indices(n, seed);
    idx.truncate(keep);
    idx.sort_unstable();
    Ok(dataset.select(&idx))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Identity transform of the given width.
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }
}

/// Per-feature population mean and standard deviation. A feature whose
/// deviation falls below [`EPS_STD`] (a transmitter no training point sees)
/// keeps unit scale, so later perturbations of it are not amplified.
pub fn fit_norm(train: &Dataset) -> Result<NormStats> {
    if train.is_empty() {
        return Err(Error::Empty("normalization fit"));
    }
    let n = train.len() as f64;
    let d = train.feature_dim;
    let mut mean = vec![0.0; d];
    for r in &train.records {
        for (m, v) in mean.iter_mut().zip(&r.rssi) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in &train.records {
        for ((s, v), m) in var.iter_mut().zip(&r.rssi).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var
        .into_iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd < EPS_STD {
                1.0
            } else {
                sd
            }
        })
        .collect();
    Ok(NormStats { mean, std })
}

pub fn apply_norm(dataset: &Dataset, stats: &NormStats) -> Result<Dataset> {
    check_stats_dim(dataset, stats)?;
    Ok(dataset.map_features(|_, k, v| (v - stats.mean[k]) / stats.std[k]))
}

pub fn invert_norm(dataset: &Dataset, stats: &NormStats) -> Result<Dataset> {
    check_stats_dim(dataset, stats)?;
    Ok(dataset.map_features(|_, k, v| v * stats.std[k] + stats.mean[k]))
}

fn check_stats_dim(dataset: &Dataset, stats: &NormStats) -> Result<()> {
    if stats.dim() != dataset.feature_dim || stats.std.len() != stats.mean.len() {
        return Err(Error::Dimension {
            context: "normalization stats",
            expected: dataset.feature_dim,
            got: stats.dim(),
        });
    }
    Ok(())
}

/// Environmental-variation noise: `sigma = nf * sigma_base_db`, added to raw
/// dBm features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub nf: f64,
    pub sigma_base_db: f64,
    pub resample_per_epoch: bool,
    pub apply_to_validation: bool,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            nf: 0.0,
            sigma_base_db: 0.25,
            resample_per_epoch: false,
            apply_to_validation: true,
            seed: 2024,
        }
    }
}

impl NoiseSpec {
    pub fn sigma(&self) -> f64 {
        self.nf * self.sigma_base_db
    }

    pub fn with_nf(self, nf: f64) -> Self {
        Self { nf, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nf >= 0.0) || !self.nf.is_finite() {
            return Err(Error::config("/noise/nf", "must be finite and non-negative"));
        }
        if !(self.sigma_base_db > 0.0) || !self.sigma_base_db.is_finite() {
            return Err(Error::config("/noise/sigma_base_db", "must be positive"));
        }
        Ok(())
    }
}

/// The additive perturbation field `sigma * z` (one standard normal per cell,
/// row-major). Scaling NF scales every entry by the same factor.
pub fn noise_field<R: Rng + ?Sized>(dataset: &Dataset, spec: &NoiseSpec, rng: &mut R) -> Result<Array2<f64>> {
    spec.validate()?;
    let sigma = spec.sigma();
    Ok(Array2::from_shape_simple_fn(
        (dataset.len(), dataset.feature_dim),
        || {
            let z: f64 = rng.sample(StandardNormal);
            sigma * z
        },
    ))
}

pub fn inject_noise<R: Rng + ?Sized>(dataset: &Dataset, spec: &NoiseSpec, rng: &mut R) -> Result<Dataset> {
    let field = noise_field(dataset, spec, rng)?;
    Ok(dataset.map_features(|i, k, v| v + field[[i, k]]))
}

/// `inject_noise` with a generator seeded from `spec.seed`.
pub fn inject_noise_seeded(dataset: &Dataset, spec: &NoiseSpec) -> Result<Dataset> {
    inject_noise(dataset, spec, &mut ChaCha8Rng::seed_from_u64(spec.seed))
}
