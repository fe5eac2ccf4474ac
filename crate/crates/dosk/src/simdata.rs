//! Seeded synthetic benchmark designs, dataset ingestion, min-max
//! standardization, and evaluation metrics.
//!
//! The four generators reproduce the simulation designs used by the benchmark
//! harness: two nonlinear regressions with irrelevant covariates appended and
//! two spherical classification problems where the negative class lives on an
//! annulus. All generators are pure functions of their seed.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Variance of the noise covariates in the classification designs.
pub const NOISE_VARIANCE: f64 = 0.1;
/// Hard cap on rejection-sampler attempts per observation.
const REJECTION_ATTEMPT_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

/// A design matrix with its response, and — for generated data — the ground
/// truth of which predictors carry signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    /// `true` marks a genuinely informative predictor; `None` for ingested
    /// data where the truth is unknown.
    pub signal_mask: Option<Vec<bool>>,
    pub task: Task,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Indices of the signal predictors (empty when the mask is unknown).
    pub fn signal_variables(&self) -> Vec<usize> {
        match &self.signal_mask {
            Some(mask) => mask
                .iter()
                .enumerate()
                .filter_map(|(j, s)| s.then_some(j))
                .collect(),
            None => Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.y.len() != self.n() {
            return Err(Error::DimensionMismatch {
                context: "dataset(x rows, y)",
                left: self.n(),
                right: self.y.len(),
            });
        }
        if let Some(mask) = &self.signal_mask {
            if mask.len() != self.p() {
                return Err(Error::DimensionMismatch {
                    context: "dataset(signal_mask, p)",
                    left: mask.len(),
                    right: self.p(),
                });
            }
        }
        if self.task == Task::Classification {
            for v in self.y.iter() {
                if *v != 1.0 && *v != -1.0 {
                    return Err(Error::InvalidLabel(*v));
                }
            }
        }
        Ok(())
    }
}

/// Mean function of the first regression design.
pub(crate) fn reg1_mean(x1: f64) -> f64 {
    if x1 > 0.0 && x1 < 2.0 * std::f64::consts::PI {
        10.0 * x1.sin()
    } else {
        0.0
    }
}

/// Regression design 1: a single informative predictor,
/// y = 10·sin(x₁)·1{0 < x₁ < 2π} + ε with x_j ~ U[−2π, 4π] and ε ~ N(0,1);
/// `p0` pure-noise predictors are appended (p = 1 + p0).
pub fn gen_regression1(n: usize, p0: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyData("gen_regression1 requires n >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = 1 + p0;
    let lo = -2.0 * std::f64::consts::PI;
    let hi = 4.0 * std::f64::consts::PI;
    let mut data = Vec::with_capacity(n * p);
    for _ in 0..n {
        for _ in 0..p {
            data.push(rng.random_range(lo..hi));
        }
    }
    let x = Array2::from_shape_vec((n, p), data).expect("shape matches construction");
    let noise = Normal::new(0.0, 1.0).expect("valid normal");
    let y = Array1::from_iter((0..n).map(|i| reg1_mean(x[[i, 0]]) + noise.sample(&mut rng)));
    let mut mask = vec![false; p];
    mask[0] = true;
    Ok(Dataset {
        x,
        y,
        signal_mask: Some(mask),
        task: Task::Regression,
    })
}

/// Mean function of the second regression design (first four coordinates).
pub(crate) fn reg2_mean(row: &[f64]) -> f64 {
    10.0 * row.iter().take(4).map(|v| (-v * v).exp()).sum::<f64>()
}

/// Regression design 2: y = 10·Σ_{j=1..4} exp(−x_j²) + ε with
/// x_j ~ U[−6, 6] and ε ~ N(0,1); p = 4 + p0.
pub fn gen_regression2(n: usize, p0: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyData("gen_regression2 requires n >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = 4 + p0;
    let mut data = Vec::with_capacity(n * p);
    for _ in 0..n {
        for _ in 0..p {
            data.push(rng.random_range(-6.0..6.0));
        }
    }
    let x = Array2::from_shape_vec((n, p), data).expect("shape matches construction");
    let noise = Normal::new(0.0, 1.0).expect("valid normal");
    let y = Array1::from_iter((0..n).map(|i| {
        let row = x.row(i);
        reg2_mean(row.to_slice().expect("rows are contiguous")) + noise.sample(&mut rng)
    }));
    let mut mask = vec![false; p];
    for s in mask.iter_mut().take(4) {
        *s = true;
    }
    Ok(Dataset {
        x,
        y,
        signal_mask: Some(mask),
        task: Task::Regression,
    })
}

/// Draws one point from N(0, I_d) conditioned on 9 < ‖x‖² < 16, returning the
/// accepted point and the number of proposals it took.
fn sample_annulus(rng: &mut ChaCha8Rng, d: usize) -> Result<(Vec<f64>, usize)> {
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    for attempt in 1..=REJECTION_ATTEMPT_CAP {
        let cand: Vec<f64> = (0..d).map(|_| std_normal.sample(rng)).collect();
        let r2: f64 = cand.iter().map(|v| v * v).sum();
        if r2 > 9.0 && r2 < 16.0 {
            return Ok((cand, attempt));
        }
    }
    Err(Error::Data(
        "annulus rejection sampler exceeded its attempt cap".into(),
    ))
}

/// Classification designs: class +1 draws its `signal_dim` informative
/// coordinates from N(0, I); class −1 draws them from N(0, I) conditioned on
/// the annulus 9 < ‖x‖² < 16. Both classes get `p0` noise coordinates from
/// N(0, 0.1) (variance 0.1). Classes are balanced, so n must be even; the
/// first n/2 rows are the +1 class.
pub fn gen_classification(n: usize, signal_dim: usize, p0: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::InvalidConfig(format!(
            "gen_classification requires positive even n, got {n}"
        )));
    }
    if signal_dim != 2 && signal_dim != 4 {
        return Err(Error::InvalidConfig(format!(
            "signal_dim must be 2 or 4, got {signal_dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = signal_dim + p0;
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let noise = Normal::new(0.0, NOISE_VARIANCE.sqrt()).expect("valid normal");
    let mut data = Vec::with_capacity(n * p);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n / 2 {
        for _ in 0..signal_dim {
            data.push(std_normal.sample(&mut rng));
        }
        for _ in 0..p0 {
            data.push(noise.sample(&mut rng));
        }
        y.push(1.0);
    }
    for _ in 0..n / 2 {
        let (sig, _) = sample_annulus(&mut rng, signal_dim)?;
        data.extend_from_slice(&sig);
        for _ in 0..p0 {
            data.push(noise.sample(&mut rng));
        }
        y.push(-1.0);
    }
    let x = Array2::from_shape_vec((n, p), data).expect("shape matches construction");
    let mut mask = vec![false; p];
    for s in mask.iter_mut().take(signal_dim) {
        *s = true;
    }
    Ok(Dataset {
        x,
        y: Array1::from_vec(y),
        signal_mask: Some(mask),
        task: Task::Classification,
    })
}

/// Per-column min-max scaling fitted on training data. Columns map to [0,1]
/// on the training set; transformed test values may fall outside. Constant
/// columns map to 0 by convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    /// One `(min, max)` per column.
    pub min_max: Vec<(f64, f64)>,
}

impl Standardizer {
    pub fn fit(x: &Array2<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::EmptyData("standardizer needs a nonempty matrix"));
        }
        let mut min_max = Vec::with_capacity(x.ncols());
        for col in x.columns() {
            let mut mn = f64::INFINITY;
            let mut mx = f64::NEG_INFINITY;
            for v in col.iter() {
                if !v.is_finite() {
                    return Err(Error::NonFinite("standardizer input"));
                }
                mn = mn.min(*v);
                mx = mx.max(*v);
            }
            min_max.push((mn, mx));
        }
        Ok(Standardizer { min_max })
    }

    /// Pass-through standardizer: every column maps through (v − 0)/1 = v.
    /// Used where the caller wants kernel bandwidths to apply to the
    /// original coordinates.
    pub fn identity(p: usize) -> Self {
        Standardizer {
            min_max: vec![(0.0, 1.0); p],
        }
    }

    pub fn p(&self) -> usize {
        self.min_max.len()
    }

    pub fn transform(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.p() {
            return Err(Error::DimensionMismatch {
                context: "standardizer(columns)",
                left: x.ncols(),
                right: self.p(),
            });
        }
        let mut out = x.clone();
        for (j, (mn, mx)) in self.min_max.iter().enumerate() {
            let range = mx - mn;
            for v in out.column_mut(j).iter_mut() {
                *v = if range > 0.0 { (*v - mn) / range } else { 0.0 };
            }
        }
        Ok(out)
    }
}

/// Fits a min-max scaler on `train`, returning the scaled training matrix,
/// every `others` matrix scaled with the training min/max, and the scaler.
pub fn standardize(
    train: &Array2<f64>,
    others: &[&Array2<f64>],
) -> Result<(Array2<f64>, Vec<Array2<f64>>, Standardizer)> {
    let scaler = Standardizer::fit(train)?;
    let train_scaled = scaler.transform(train)?;
    let mut scaled = Vec::with_capacity(others.len());
    for other in others {
        scaled.push(scaler.transform(other)?);
    }
    Ok((train_scaled, scaled, scaler))
}

/// Mean prediction error: (1/n)Σ(f̂(x_i) − y_i)².
pub fn mpe(pred: &Array1<f64>, y: &Array1<f64>) -> Result<f64> {
    if pred.len() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "mpe(pred, y)",
            left: pred.len(),
            right: y.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyData("mpe requires n > 0"));
    }
    let mut s = 0.0;
    for i in 0..pred.len() {
        let d = pred[i] - y[i];
        s += d * d;
    }
    Ok(s / pred.len() as f64)
}

/// Misclassification rate: fraction of i with y_i ≠ sign(f̂(x_i)), with
/// sign(0) counted as +1. `y` must be ±1; `pred` holds real scores.
pub fn mcr(pred: &Array1<f64>, y: &Array1<f64>) -> Result<f64> {
    if pred.len() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "mcr(pred, y)",
            left: pred.len(),
            right: y.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyData("mcr requires n > 0"));
    }
    let mut wrong = 0usize;
    for i in 0..pred.len() {
        let label = y[i];
        if label != 1.0 && label != -1.0 {
            return Err(Error::InvalidLabel(label));
        }
        let sign = if pred[i] >= 0.0 { 1.0 } else { -1.0 };
        if sign != label {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / pred.len() as f64)
}

/// Variable-selection quality against a ground-truth signal mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionRates {
    /// Fraction of signal variables that were selected.
    pub tp_rate: f64,
    /// Fraction of noise variables that were (falsely) selected.
    pub fn_rate: f64,
}

/// TP rate = |selected ∩ signal| / |signal|, FN rate = |selected ∩ noise| /
/// |noise|, with 0/0 → 0. Indices outside the mask are ignored.
pub fn selection_rates(selected: &[usize], mask: &[bool]) -> SelectionRates {
    let signal_total = mask.iter().filter(|s| **s).count();
    let noise_total = mask.len() - signal_total;
    let mut signal_hit = 0usize;
    let mut noise_hit = 0usize;
    for &j in selected {
        if j >= mask.len() {
            continue;
        }
        if mask[j] {
            signal_hit += 1;
        } else {
            noise_hit += 1;
        }
    }
    let rate = |hit: usize, total: usize| if total == 0 { 0.0 } else { hit as f64 / total as f64 };
    SelectionRates {
        tp_rate: rate(signal_hit, signal_total),
        fn_rate: rate(noise_hit, noise_total),
    }
}

/// Reads an RFC-4180 CSV with a header row. The `label` column becomes y;
/// every other column becomes a predictor, in file order.
pub fn read_csv(path: &Path, label: &str, task: Task) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label)
        .ok_or_else(|| Error::Data(format!("label column not found: {label}")))?;
    if headers.len() < 2 {
        return Err(Error::Data("no predictor columns in file".into()));
    }
    let p = headers.len() - 1;
    let mut data = Vec::new();
    let mut y = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Data(format!(
                "row {} has {} fields, expected {}",
                row + 2,
                record.len(),
                headers.len()
            )));
        }
        for (col, field) in record.iter().enumerate() {
            let value: f64 = field.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "row {}, column {:?}: cannot parse {:?} as a number",
                    row + 2,
                    &headers[col],
                    field
                ))
            })?;
            if col == label_idx {
                y.push(value);
            } else {
                data.push(value);
            }
        }
    }
    if y.is_empty() {
        return Err(Error::EmptyData("CSV contains no data rows"));
    }
    let n = y.len();
    let x = Array2::from_shape_vec((n, p), data).expect("shape matches construction");
    let ds = Dataset {
        x,
        y: Array1::from_vec(y),
        signal_mask: None,
        task,
    };
    ds.validate()?;
    Ok(ds)
}

/// Reads a header-first CSV of pure predictors (no label column).
pub fn read_csv_features(path: &Path) -> Result<Array2<f64>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::Data("no predictor columns in file".into()));
    }
    let p = headers.len();
    let mut data = Vec::new();
    let mut n = 0usize;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != p {
            return Err(Error::Data(format!(
                "row {} has {} fields, expected {}",
                row + 2,
                record.len(),
                p
            )));
        }
        for (col, field) in record.iter().enumerate() {
            let value: f64 = field.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "row {}, column {:?}: cannot parse {:?} as a number",
                    row + 2,
                    &headers[col],
                    field
                ))
            })?;
            data.push(value);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyData("CSV contains no data rows"));
    }
    Ok(Array2::from_shape_vec((n, p), data).expect("shape matches construction"))
}

/// Writes the dataset as CSV with columns x1..xp, y.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (1..=ds.p()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    writer.write_record(&header)?;
    for i in 0..ds.n() {
        let mut record: Vec<String> = ds.x.row(i).iter().map(|v| v.to_string()).collect();
        record.push(ds.y[i].to_string());
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct SignalSidecar {
    signal_mask: Vec<bool>,
}

/// Writes the ground-truth signal mask next to an exported CSV.
pub fn write_signal_sidecar(ds: &Dataset, path: &Path) -> Result<()> {
    let mask = ds
        .signal_mask
        .clone()
        .ok_or_else(|| Error::Data("dataset has no signal mask to export".into()))?;
    let body = serde_json::to_string_pretty(&SignalSidecar { signal_mask: mask })?;
    fs::write(path, body)?;
    Ok(())
}

/// Reads a signal-mask sidecar written by [`write_signal_sidecar`].
pub fn read_signal_sidecar(path: &Path) -> Result<Vec<bool>> {
    let body = fs::read_to_string(path)?;
    let sidecar: SignalSidecar = serde_json::from_str(&body)?;
    Ok(sidecar.signal_mask)
}
