//! User-facing estimator: fit/predict lifecycle, support extraction,
//! cross-validation tuning, and JSON persistence.
//!
//! A fitted [`DoskModel`] keeps only what prediction needs — the kernel, the
//! weight vector ŵ, the support points (training rows with |α̂| above the
//! support threshold, stored in standardized coordinates), the intercept, and
//! the column scaler. Everything else about the training run is summarized in
//! [`TraceSummary`].

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::kernel::{eval_slices, KernelSpec};
use crate::loss::LossSpec;
use crate::simdata::{mcr, mpe, Standardizer};
use crate::solver::{fit_dosk, FitTrace, Hyperparams, SolverConfig, SUPPORT_THRESHOLD};
use crate::{Error, Result};

/// Version tag written into every model file.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// One retained training observation: its original row index, its predictor
/// vector in the standardized scale, and its dual coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportPoint {
    pub index: usize,
    pub x: Vec<f64>,
    pub alpha: f64,
}

/// Condensed optimizer diagnostics kept with the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    /// Final objective value φ.
    pub objective: f64,
    /// Outer iterations consumed.
    pub iterations: usize,
    pub converged: bool,
}

/// A fitted double-sparsity kernel model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoskModel {
    pub kernel: KernelSpec,
    pub loss: LossSpec,
    pub lambda: Hyperparams,
    /// Kernel weights ŵ ∈ [0,1]^p on the standardized predictors.
    pub w_hat: Vec<f64>,
    /// Support points with |α̂| > 1e-8, in standardized coordinates.
    pub support_points: Vec<SupportPoint>,
    pub b_hat: f64,
    pub standardizer: Standardizer,
    pub trace_summary: TraceSummary,
}

impl DoskModel {
    /// Number of predictors the model expects.
    pub fn p(&self) -> usize {
        self.w_hat.len()
    }

    /// Fits on raw data: min-max standardizes the columns internally, runs the
    /// solver, and keeps only the support.
    pub fn fit(
        x: &Array2<f64>,
        y: &Array1<f64>,
        kernel: KernelSpec,
        loss: LossSpec,
        lambda: Hyperparams,
        cfg: &SolverConfig,
    ) -> Result<DoskModel> {
        Self::fit_with_trace(x, y, kernel, loss, lambda, cfg).map(|(m, _)| m)
    }

    /// As [`DoskModel::fit`], also returning the full objective trace.
    pub fn fit_with_trace(
        x: &Array2<f64>,
        y: &Array1<f64>,
        kernel: KernelSpec,
        loss: LossSpec,
        lambda: Hyperparams,
        cfg: &SolverConfig,
    ) -> Result<(DoskModel, FitTrace)> {
        Self::fit_with_standardizer(x, y, kernel, loss, lambda, cfg, Standardizer::fit(x)?)
    }

    /// As [`DoskModel::fit_with_trace`] but with the column transform chosen
    /// by the caller — in particular [`Standardizer::identity`] to run the
    /// kernel on the original coordinates. The transform is stored in the
    /// model so `predict` stays consistent either way.
    pub(crate) fn fit_with_standardizer(
        x: &Array2<f64>,
        y: &Array1<f64>,
        kernel: KernelSpec,
        loss: LossSpec,
        lambda: Hyperparams,
        cfg: &SolverConfig,
        standardizer: Standardizer,
    ) -> Result<(DoskModel, FitTrace)> {
        let xs = standardizer.transform(x)?;
        let (state, trace) = fit_dosk(&kernel, &xs, y, &loss, &lambda, cfg)?;
        let mut support_points = Vec::new();
        for (i, &a) in state.alpha.iter().enumerate() {
            if a.abs() > SUPPORT_THRESHOLD {
                support_points.push(SupportPoint {
                    index: i,
                    x: xs.row(i).to_vec(),
                    alpha: a,
                });
            }
        }
        let model = DoskModel {
            kernel,
            loss,
            lambda,
            w_hat: state.w.to_vec(),
            support_points,
            b_hat: state.b,
            standardizer,
            trace_summary: TraceSummary {
                objective: trace.final_objective(),
                iterations: trace.iters_used,
                converged: trace.converged,
            },
        };
        Ok((model, trace))
    }

    /// Evaluates f̂(x) = Σ_{support} α̂_j K_ŵ(x_j, x) + b̂ for each row of
    /// `x_new` (raw scale; standardization is applied internally).
    /// Classification callers take the sign downstream.
    pub fn predict(&self, x_new: &Array2<f64>) -> Result<Array1<f64>> {
        let xs = self.standardizer.transform(x_new)?;
        let mut out = Array1::zeros(xs.nrows());
        for (i, row) in xs.rows().into_iter().enumerate() {
            let row = row.to_slice().expect("rows are contiguous");
            let mut f = self.b_hat;
            for sp in &self.support_points {
                f += sp.alpha * eval_slices(&self.kernel, &self.w_hat, &sp.x, row);
            }
            out[i] = f;
        }
        Ok(out)
    }

    /// Indices of predictors the fit kept: {j : ŵ_j > 1e-8}.
    pub fn selected_variables(&self) -> Vec<usize> {
        self.w_hat
            .iter()
            .enumerate()
            .filter_map(|(j, w)| (*w > SUPPORT_THRESHOLD).then_some(j))
            .collect()
    }

    /// Indices of training rows the fit kept as support points.
    pub fn selected_points(&self) -> Vec<usize> {
        self.support_points.iter().map(|sp| sp.index).collect()
    }

    /// Structural sanity checks, applied to every loaded file.
    fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        self.loss.validate()?;
        self.lambda.validate()?;
        let field_err = |field: &str, message: String| Error::ModelField {
            field: field.into(),
            message,
        };
        for (j, w) in self.w_hat.iter().enumerate() {
            if !(*w >= 0.0 && *w <= 1.0) {
                return Err(field_err(
                    "w_hat",
                    format!("entry {j} = {w} is outside [0, 1]"),
                ));
            }
        }
        if self.standardizer.p() != self.p() {
            return Err(field_err(
                "standardizer",
                format!(
                    "{} column ranges for {} weights",
                    self.standardizer.p(),
                    self.p()
                ),
            ));
        }
        for sp in &self.support_points {
            if sp.x.len() != self.p() {
                return Err(field_err(
                    "support",
                    format!(
                        "point {} has {} coordinates, expected {}",
                        sp.index,
                        sp.x.len(),
                        self.p()
                    ),
                ));
            }
            if !(sp.alpha.abs() > SUPPORT_THRESHOLD) || !sp.alpha.is_finite() {
                return Err(field_err(
                    "support",
                    format!("point {} has alpha {} below threshold", sp.index, sp.alpha),
                ));
            }
        }
        if !self.b_hat.is_finite() {
            return Err(field_err("b_hat", format!("{} is not finite", self.b_hat)));
        }
        Ok(())
    }

    /// Writes the model as pretty-printed JSON with a `format_version` tag.
    /// Serialization is deterministic, so saving an unchanged model twice
    /// yields byte-identical files.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            kernel: self.kernel,
            loss: self.loss,
            lambda: self.lambda,
            w_hat: self.w_hat.clone(),
            support: self.support_points.clone(),
            b_hat: self.b_hat,
            standardizer: self.standardizer.clone(),
            trace_summary: self.trace_summary,
        };
        let mut body = serde_json::to_string_pretty(&file)?;
        body.push('\n');
        fs::write(path, body)?;
        Ok(())
    }

    /// Reads a model file written by [`DoskModel::save`], rejecting unknown
    /// format versions and structurally invalid content.
    pub fn load(path: &Path) -> Result<DoskModel> {
        let body = fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&body)?;
        let version = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::ModelField {
                field: "format_version".into(),
                message: "missing or not an unsigned integer".into(),
            })?;
        if version != u64::from(MODEL_FORMAT_VERSION) {
            return Err(Error::FormatVersion {
                found: version as u32,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let file: ModelFile = serde_json::from_value(value)?;
        let model = DoskModel {
            kernel: file.kernel,
            loss: file.loss,
            lambda: file.lambda,
            w_hat: file.w_hat,
            support_points: file.support,
            b_hat: file.b_hat,
            standardizer: file.standardizer,
            trace_summary: file.trace_summary,
        };
        model.validate()?;
        Ok(model)
    }
}

/// On-disk layout. The support list is named `support` in the file.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    kernel: KernelSpec,
    loss: LossSpec,
    lambda: Hyperparams,
    w_hat: Vec<f64>,
    support: Vec<SupportPoint>,
    b_hat: f64,
    standardizer: Standardizer,
    trace_summary: TraceSummary,
}

/// Hyperparameter search grid for cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvGrid {
    pub lambda1_candidates: Vec<f64>,
    pub lambda2_candidates: Vec<f64>,
    pub gamma_candidates: Vec<f64>,
    /// λ₃ is not tuned; it stays at this value in every cell.
    pub lambda3_fixed: f64,
    pub folds: usize,
}

impl Default for CvGrid {
    fn default() -> Self {
        CvGrid {
            lambda1_candidates: vec![0.0, 0.25, 0.5],
            lambda2_candidates: (-3..=3).map(|i| 2f64.powi(i)).collect(),
            gamma_candidates: (1..=10).map(|i| i as f64 / 10.0).collect(),
            lambda3_fixed: 0.5,
            folds: 5,
        }
    }
}

impl CvGrid {
    pub fn validate(&self) -> Result<()> {
        if self.lambda1_candidates.is_empty()
            || self.lambda2_candidates.is_empty()
            || self.gamma_candidates.is_empty()
        {
            return Err(Error::InvalidConfig(
                "all CV candidate sets must be nonempty".into(),
            ));
        }
        if self.folds < 2 {
            return Err(Error::InvalidConfig(format!(
                "cross-validation needs folds >= 2, got {}",
                self.folds
            )));
        }
        for v in self
            .lambda1_candidates
            .iter()
            .chain(&self.lambda2_candidates)
        {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "lambda candidates must be nonnegative and finite, got {v}"
                )));
            }
        }
        for g in &self.gamma_candidates {
            if !(g.is_finite() && *g > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "gamma candidates must be positive and finite, got {g}"
                )));
            }
        }
        if !(self.lambda3_fixed.is_finite() && self.lambda3_fixed >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda3_fixed must be nonnegative and finite, got {}",
                self.lambda3_fixed
            )));
        }
        Ok(())
    }

    /// Number of grid cells evaluated.
    pub fn n_cells(&self) -> usize {
        self.lambda1_candidates.len() * self.lambda2_candidates.len() * self.gamma_candidates.len()
    }
}

/// One evaluated grid cell: the hyperparameters and the mean held-out error
/// (MPE for regression, MCR for classification).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub gamma: f64,
    pub score: f64,
}

impl CvRow {
    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams::new(self.lambda1, self.lambda2, self.lambda3)
    }
}

/// Result of a grid search: the winning cell, the full table in grid order,
/// and the largest objective-trace increase seen across every fold fit (a
/// monotonicity diagnostic; 0 for exactly monotone runs).
#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub best: CvRow,
    pub table: Vec<CvRow>,
    pub max_trace_increase: f64,
}

/// Tie-break preference between equal-score cells: larger λ₁, then larger λ₂,
/// then larger λ₃, then smaller γ — the sparser/smoother model. Total order,
/// so the winner does not depend on grid iteration order.
fn prefer(a: &CvRow, b: &CvRow) -> Ordering {
    a.score
        .total_cmp(&b.score)
        .then_with(|| b.lambda1.total_cmp(&a.lambda1))
        .then_with(|| b.lambda2.total_cmp(&a.lambda2))
        .then_with(|| b.lambda3.total_cmp(&a.lambda3))
        .then_with(|| a.gamma.total_cmp(&b.gamma))
}

/// One train/held-out split, as row indices into the original matrix.
#[derive(Debug, Clone)]
struct FoldSplit {
    train: Vec<usize>,
    test: Vec<usize>,
}

/// Deals shuffled indices round-robin into `folds` parts; classification
/// shuffles and deals each class separately so per-fold class counts stay
/// within one of proportional.
fn build_folds(y: &Array1<f64>, classification: bool, folds: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    let n = y.len();
    if n < folds {
        return Err(Error::InvalidConfig(format!(
            "cannot make {folds} folds from {n} observations"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; n];
    if classification {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (i, v) in y.iter().enumerate() {
            match *v {
                1.0 => pos.push(i),
                -1.0 => neg.push(i),
                other => return Err(Error::InvalidLabel(other)),
            }
        }
        if pos.len() < folds || neg.len() < folds {
            return Err(Error::Data(format!(
                "cannot stratify {folds} folds: class sizes are {} and {}",
                pos.len(),
                neg.len()
            )));
        }
        for class in [&mut pos, &mut neg] {
            class.shuffle(&mut rng);
            for (k, &i) in class.iter().enumerate() {
                assignment[i] = k % folds;
            }
        }
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        for (k, &i) in idx.iter().enumerate() {
            assignment[i] = k % folds;
        }
    }
    let mut out = Vec::with_capacity(folds);
    for f in 0..folds {
        let test: Vec<usize> = (0..n).filter(|i| assignment[*i] == f).collect();
        let train: Vec<usize> = (0..n).filter(|i| assignment[*i] != f).collect();
        out.push(FoldSplit { train, test });
    }
    Ok(out)
}

/// How grid λ values translate into the solver's `Hyperparams` for a fit on
/// n rows.
///
/// `Absolute` passes them straight through. `Normalized` quotes each grid
/// value against the natural scale of the quantity it multiplies, so one
/// grid stays comparable across sample sizes: the dual vector α has one
/// coefficient per observation and its norm grows with n, so λ₁ is a
/// per-sample quote (λ₁/n); the kernel weights live in the fixed box
/// [0, 1]^p independent of n, so λ₂ passes through; and the quadratic form
/// α'Kα scales like n² (an n×n sum over coefficients that do not shrink),
/// so λ₃ is quoted per entry (λ₃/n²).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LambdaScale {
    Absolute,
    Normalized,
}

impl LambdaScale {
    fn apply(self, l1: f64, l2: f64, l3: f64, n: usize) -> Hyperparams {
        let n = n as f64;
        match self {
            LambdaScale::Absolute => Hyperparams::new(l1, l2, l3),
            LambdaScale::Normalized => Hyperparams::new(l1 / n, l2, l3 / (n * n)),
        }
    }
}

/// Crate-internal switches for the CV engine: whether per-fit columns are
/// min-max standardized or left alone, and how grid λ values are scaled.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CvOpts {
    pub standardize: bool,
    pub lambda_scale: LambdaScale,
}

impl Default for CvOpts {
    fn default() -> Self {
        CvOpts {
            standardize: true,
            lambda_scale: LambdaScale::Absolute,
        }
    }
}

/// Single fit under the engine's conventions: λ values are grid-level (see
/// [`LambdaScale`]) and the column transform follows `opts.standardize`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fit_cell(
    x: &Array2<f64>,
    y: &Array1<f64>,
    kernel: KernelSpec,
    loss: LossSpec,
    l1: f64,
    l2: f64,
    l3: f64,
    cfg: &SolverConfig,
    opts: CvOpts,
) -> Result<(DoskModel, FitTrace)> {
    let lambda = opts.lambda_scale.apply(l1, l2, l3, x.nrows());
    let standardizer = if opts.standardize {
        Standardizer::fit(x)?
    } else {
        Standardizer::identity(x.ncols())
    };
    DoskModel::fit_with_standardizer(x, y, kernel, loss, lambda, cfg, standardizer)
}

/// Shared grid-search engine: evaluates each (λ₁, λ₂, λ₃, γ) cell by fitting
/// on every fold's training part and averaging the held-out error. Cells run
/// in parallel; the table is assembled in cell order.
fn evaluate_cells(
    x: &Array2<f64>,
    y: &Array1<f64>,
    kernel_proto: &KernelSpec,
    loss: &LossSpec,
    cells: &[(f64, f64, f64, f64)],
    folds: &[FoldSplit],
    cfg: &SolverConfig,
    opts: CvOpts,
) -> Result<(Vec<CvRow>, f64)> {
    // Materialize the splits once; every cell reuses them.
    let splits: Vec<(Array2<f64>, Array1<f64>, Array2<f64>, Array1<f64>)> = folds
        .iter()
        .map(|f| {
            (
                x.select(Axis(0), &f.train),
                y.select(Axis(0), &f.train),
                x.select(Axis(0), &f.test),
                y.select(Axis(0), &f.test),
            )
        })
        .collect();
    let classification = loss.is_classification();
    let rows: Vec<(CvRow, f64)> = cells
        .par_iter()
        .map(|&(l1, l2, l3, gamma)| -> Result<(CvRow, f64)> {
            let kernel = kernel_proto.with_gamma(gamma);
            let mut score_sum = 0.0;
            let mut max_increase = 0.0f64;
            for (xtr, ytr, xte, yte) in &splits {
                let (model, trace) = fit_cell(xtr, ytr, kernel, *loss, l1, l2, l3, cfg, opts)?;
                let pred = model.predict(xte)?;
                score_sum += if classification {
                    mcr(&pred, yte)?
                } else {
                    mpe(&pred, yte)?
                };
                max_increase = max_increase.max(trace.max_step_increase());
            }
            let row = CvRow {
                lambda1: l1,
                lambda2: l2,
                lambda3: l3,
                gamma,
                score: score_sum / splits.len() as f64,
            };
            Ok((row, max_increase))
        })
        .collect::<Result<Vec<_>>>()?;
    let max_increase = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok((rows.into_iter().map(|r| r.0).collect(), max_increase))
}

/// Grid-search over `grid` by k-fold cross-validation. Every cell is fitted
/// on each fold's training part and scored on the held-out part (MPE for
/// regression, MCR for classification); the winner minimizes the mean
/// held-out error, with ties broken toward sparser models.
pub fn cross_validate(
    x: &Array2<f64>,
    y: &Array1<f64>,
    kernel_proto: &KernelSpec,
    loss: &LossSpec,
    grid: &CvGrid,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<CvOutcome> {
    cross_validate_with(x, y, kernel_proto, loss, grid, cfg, seed, CvOpts::default())
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn cross_validate_with(
    x: &Array2<f64>,
    y: &Array1<f64>,
    kernel_proto: &KernelSpec,
    loss: &LossSpec,
    grid: &CvGrid,
    cfg: &SolverConfig,
    seed: u64,
    opts: CvOpts,
) -> Result<CvOutcome> {
    grid.validate()?;
    let folds = build_folds(y, loss.is_classification(), grid.folds, seed)?;
    let mut cells = Vec::with_capacity(grid.n_cells());
    for &l1 in &grid.lambda1_candidates {
        for &l2 in &grid.lambda2_candidates {
            for &g in &grid.gamma_candidates {
                cells.push((l1, l2, grid.lambda3_fixed, g));
            }
        }
    }
    let (table, max_trace_increase) =
        evaluate_cells(x, y, kernel_proto, loss, &cells, &folds, cfg, opts)?;
    let best = *table.iter().min_by(|a, b| prefer(a, b)).expect("grid is nonempty");
    Ok(CvOutcome {
        best,
        table,
        max_trace_increase,
    })
}

/// Reference grid search for the frozen-weights baseline (w ≡ 1, i.e. a
/// standard kernel method with no variable selection): tunes λ₃ over
/// {2⁻³..2³} and γ over the given candidates with λ₁ = λ₂ = 0.
pub fn cross_validate_frozen_baseline(
    x: &Array2<f64>,
    y: &Array1<f64>,
    kernel_proto: &KernelSpec,
    loss: &LossSpec,
    gamma_candidates: &[f64],
    folds: usize,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<CvOutcome> {
    cross_validate_frozen_baseline_with(
        x,
        y,
        kernel_proto,
        loss,
        gamma_candidates,
        folds,
        cfg,
        seed,
        CvOpts::default(),
    )
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn cross_validate_frozen_baseline_with(
    x: &Array2<f64>,
    y: &Array1<f64>,
    kernel_proto: &KernelSpec,
    loss: &LossSpec,
    gamma_candidates: &[f64],
    folds: usize,
    cfg: &SolverConfig,
    seed: u64,
    opts: CvOpts,
) -> Result<CvOutcome> {
    if gamma_candidates.is_empty() {
        return Err(Error::InvalidConfig(
            "baseline needs at least one gamma candidate".into(),
        ));
    }
    let mut frozen_cfg = cfg.clone();
    frozen_cfg.freeze_w = true;
    let splits = build_folds(y, loss.is_classification(), folds, seed)?;
    let mut cells = Vec::new();
    for i in -3..=3 {
        for &g in gamma_candidates {
            cells.push((0.0, 0.0, 2f64.powi(i), g));
        }
    }
    let (table, max_trace_increase) =
        evaluate_cells(x, y, kernel_proto, loss, &cells, &splits, &frozen_cfg, opts)?;
    let best = *table.iter().min_by(|a, b| prefer(a, b)).expect("grid is nonempty");
    Ok(CvOutcome {
        best,
        table,
        max_trace_increase,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::gram_matrix;
    use crate::simdata::{gen_regression1, Task};
    use ndarray::arr2;
    use rand::Rng;

    fn tiny_model(w_hat: Vec<f64>, support_points: Vec<SupportPoint>, b_hat: f64) -> DoskModel {
        let p = w_hat.len();
        DoskModel {
            kernel: KernelSpec::gaussian(0.5),
            loss: LossSpec::squared_error(),
            lambda: Hyperparams::new(0.1, 0.1, 0.5),
            w_hat,
            support_points,
            b_hat,
            standardizer: Standardizer {
                min_max: vec![(0.0, 1.0); p],
            },
            trace_summary: TraceSummary {
                objective: 0.0,
                iterations: 0,
                converged: true,
            },
        }
    }

    #[test]
    fn empty_support_predicts_the_intercept() {
        let model = tiny_model(vec![0.5, 0.5], vec![], 0.7);
        let x = arr2(&[[0.1, 0.9], [0.4, 0.2], [5.0, -3.0]]);
        let pred = model.predict(&x).unwrap();
        assert!(pred.iter().all(|v| *v == 0.7));
    }

    #[test]
    fn zero_weight_makes_predictions_invariant_to_that_column() {
        let support = vec![
            SupportPoint {
                index: 0,
                x: vec![0.2, 0.8],
                alpha: 1.3,
            },
            SupportPoint {
                index: 2,
                x: vec![0.9, 0.1],
                alpha: -0.4,
            },
        ];
        let model = tiny_model(vec![0.7, 0.0], support, -0.2);
        let x1 = arr2(&[[0.3, 0.5], [0.8, 0.6]]);
        let mut x2 = x1.clone();
        x2.column_mut(1).map_inplace(|v| *v = *v * 17.0 - 3.0);
        let p1 = model.predict(&x1).unwrap();
        let p2 = model.predict(&x2).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn predict_rejects_column_mismatch() {
        let model = tiny_model(vec![0.5, 0.5], vec![], 0.0);
        let x = arr2(&[[0.1, 0.2, 0.3]]);
        assert!(model.predict(&x).is_err());
    }

    #[test]
    fn selection_examples() {
        let model = tiny_model(vec![0.8, 0.0, 0.0], vec![], 0.0);
        assert_eq!(model.selected_variables(), vec![0]);

        let support = vec![
            SupportPoint {
                index: 1,
                x: vec![0.0, 0.0, 0.0],
                alpha: -0.3,
            },
            SupportPoint {
                index: 3,
                x: vec![0.0, 0.0, 0.0],
                alpha: 0.1,
            },
        ];
        let model = tiny_model(vec![0.8, 0.0, 0.0], support, 0.0);
        assert_eq!(model.selected_points(), vec![1, 3]);
    }

    #[test]
    fn interpolating_fit_reproduces_training_responses() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 6;
        let x = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
        let y = Array1::from_shape_fn(n, |_| rng.random_range(-2.0..2.0));
        let cfg = SolverConfig::default();
        let model = DoskModel::fit(
            &x,
            &y,
            KernelSpec::gaussian(0.8),
            LossSpec::squared_error(),
            Hyperparams::new(0.0, 0.0, 0.0),
            &cfg,
        )
        .unwrap();
        let fitted = model.predict(&x).unwrap();
        for i in 0..n {
            assert!(
                (fitted[i] - y[i]).abs() < 1e-6,
                "row {i}: {} vs {}",
                fitted[i],
                y[i]
            );
        }
        // An interpolating fit keeps every training point in the support.
        assert_eq!(model.selected_points(), (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn heavy_alpha_penalty_empties_the_support() {
        let ds = gen_regression1(20, 1, 8).unwrap();
        let model = DoskModel::fit(
            &ds.x,
            &ds.y,
            KernelSpec::gaussian(0.5),
            LossSpec::squared_error(),
            Hyperparams::new(100.0, 0.0, 0.5),
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(model.selected_points().is_empty());
        // The null model predicts a constant.
        let pred = model.predict(&ds.x).unwrap();
        assert!(pred.iter().all(|v| *v == pred[0]));
    }

    #[test]
    fn frozen_fit_matches_kernel_ridge_oracle_through_the_model_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 25;
        let x: Array2<f64> = Array2::from_shape_fn((n, 2), |_| rng.random_range(-3.0..3.0));
        let y: Array1<f64> = Array1::from_shape_fn(n, |_| rng.random_range(-2.0..2.0));
        let spec = KernelSpec::gaussian(0.6);
        let lambda3 = 0.5;

        let cfg = SolverConfig {
            freeze_w: true,
            max_outer_iters: 500,
            tol_objective: 1e-12,
            ..SolverConfig::default()
        };
        let model = DoskModel::fit(
            &x,
            &y,
            spec,
            LossSpec::squared_error(),
            Hyperparams::new(0.0, 0.0, lambda3),
            &cfg,
        )
        .unwrap();

        // Oracle: alternate the closed-form ridge system and the mean
        // intercept on the standardized matrix until the fixed point.
        let scaler = Standardizer::fit(&x).unwrap();
        let xs = scaler.transform(&x).unwrap();
        let ones = Array1::ones(2);
        let k = gram_matrix(&spec, &ones, &xs).unwrap();
        let km = nalgebra::DMatrix::from_fn(n, n, |i, j| k[[i, j]])
            + nalgebra::DMatrix::identity(n, n) * (n as f64 * lambda3);
        let lu = km.lu();
        let mut alpha = nalgebra::DVector::zeros(n);
        let mut b = 0.0;
        for _ in 0..500 {
            let rhs = nalgebra::DVector::from_fn(n, |i, _| y[i] - b);
            alpha = lu.solve(&rhs).unwrap();
            let ka = nalgebra::DMatrix::from_fn(n, n, |i, j| k[[i, j]]) * &alpha;
            b = (0..n).map(|i| y[i] - ka[i]).sum::<f64>() / n as f64;
        }
        let ka = nalgebra::DMatrix::from_fn(n, n, |i, j| k[[i, j]]) * &alpha;

        let fitted = model.predict(&x).unwrap();
        for i in 0..n {
            let oracle = ka[i] + b;
            assert!(
                (fitted[i] - oracle).abs() < 1e-4,
                "row {i}: {} vs {}",
                fitted[i],
                oracle
            );
        }
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let ds = gen_regression1(15, 1, 2).unwrap();
        let model = DoskModel::fit(
            &ds.x,
            &ds.y,
            KernelSpec::gaussian(0.4),
            LossSpec::squared_error(),
            Hyperparams::new(0.25, 0.5, 0.5),
            &SolverConfig::default(),
        )
        .unwrap();
        model.save(&path).unwrap();
        let loaded = DoskModel::load(&path).unwrap();
        assert_eq!(loaded, model);

        // Re-serialization is byte-identical.
        let path2 = dir.path().join("model2.json");
        loaded.save(&path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );

        // Predictions from the loaded model agree to the last bit.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let xnew = Array2::from_shape_fn((100, ds.p()), |_| rng.random_range(-10.0..25.0));
        let a = model.predict(&xnew).unwrap();
        let b = loaded.predict(&xnew).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn load_rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");

        std::fs::write(&path, "{\"format_version\": 1, \"kern").unwrap();
        assert!(matches!(DoskModel::load(&path).unwrap_err(), Error::Json(_)));

        std::fs::write(&path, "{\"w_hat\": [0.5]}").unwrap();
        let err = DoskModel::load(&path).unwrap_err();
        assert!(err.to_string().contains("format_version"), "{err}");

        std::fs::write(&path, "{\"format_version\": 7}").unwrap();
        assert!(matches!(
            DoskModel::load(&path).unwrap_err(),
            Error::FormatVersion {
                found: 7,
                expected: 1
            }
        ));

        // Structurally complete but missing a required field: the error
        // names it.
        let ds = gen_regression1(8, 0, 3).unwrap();
        let model = DoskModel::fit(
            &ds.x,
            &ds.y,
            KernelSpec::gaussian(0.4),
            LossSpec::squared_error(),
            Hyperparams::new(0.25, 0.5, 0.5),
            &SolverConfig::default(),
        )
        .unwrap();
        model.save(&path).unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        let mut value: serde_json::Value = serde_json::from_str(&body).unwrap();
        value.as_object_mut().unwrap().remove("b_hat");
        std::fs::write(&path, value.to_string()).unwrap();
        let err = DoskModel::load(&path).unwrap_err();
        assert!(err.to_string().contains("b_hat"), "{err}");

        // Out-of-box weights are rejected with the offending field named.
        let mut value: serde_json::Value = serde_json::from_str(&body).unwrap();
        value["w_hat"][0] = serde_json::json!(1.5);
        std::fs::write(&path, value.to_string()).unwrap();
        let err = DoskModel::load(&path).unwrap_err();
        assert!(
            matches!(&err, Error::ModelField { field, .. } if field == "w_hat"),
            "{err}"
        );
    }

    #[test]
    fn default_grid_has_210_cells_and_cv_returns_a_full_table() {
        let grid = CvGrid::default();
        assert_eq!(grid.lambda1_candidates.len(), 3);
        assert_eq!(grid.lambda2_candidates.len(), 7);
        assert_eq!(grid.gamma_candidates.len(), 10);
        assert_eq!(grid.lambda3_fixed, 0.5);
        assert_eq!(grid.folds, 5);
        assert_eq!(grid.n_cells(), 210);

        let ds = gen_regression1(15, 0, 6).unwrap();
        let cfg = SolverConfig {
            max_outer_iters: 3,
            tol_objective: 1e-4,
            ..SolverConfig::default()
        };
        let out = cross_validate(
            &ds.x,
            &ds.y,
            &KernelSpec::gaussian(0.5),
            &LossSpec::squared_error(),
            &grid,
            &cfg,
            11,
        )
        .unwrap();
        assert_eq!(out.table.len(), 210);
        assert!(out.table.iter().all(|r| r.score.is_finite()));
        assert!(out
            .table
            .iter()
            .any(|r| r.lambda1 == out.best.lambda1
                && r.lambda2 == out.best.lambda2
                && r.gamma == out.best.gamma));
        assert!(out.max_trace_increase <= 1e-10);
    }

    #[test]
    fn single_cell_grid_returns_that_cell() {
        let ds = gen_regression1(12, 0, 2).unwrap();
        let grid = CvGrid {
            lambda1_candidates: vec![0.25],
            lambda2_candidates: vec![1.0],
            gamma_candidates: vec![0.5],
            lambda3_fixed: 0.5,
            folds: 3,
        };
        let out = cross_validate(
            &ds.x,
            &ds.y,
            &KernelSpec::gaussian(0.5),
            &LossSpec::squared_error(),
            &grid,
            &SolverConfig::default(),
            5,
        )
        .unwrap();
        assert_eq!(out.table.len(), 1);
        assert_eq!(out.best.lambda1, 0.25);
        assert_eq!(out.best.lambda2, 1.0);
        assert_eq!(out.best.gamma, 0.5);
        assert_eq!(out.best.score, out.table[0].score);
    }

    #[test]
    fn exact_ties_break_toward_smaller_gamma_independent_of_order() {
        // A linear kernel ignores gamma, so every gamma candidate produces a
        // bitwise-identical score and the tie rule must pick the smallest.
        let ds = gen_regression1(15, 0, 13).unwrap();
        let cfg = SolverConfig {
            max_outer_iters: 5,
            ..SolverConfig::default()
        };
        let make_grid = |gammas: Vec<f64>| CvGrid {
            lambda1_candidates: vec![0.25],
            lambda2_candidates: vec![1.0],
            gamma_candidates: gammas,
            lambda3_fixed: 0.5,
            folds: 3,
        };
        let forward = cross_validate(
            &ds.x,
            &ds.y,
            &KernelSpec::linear(),
            &LossSpec::squared_error(),
            &make_grid(vec![0.1, 0.5, 1.0]),
            &cfg,
            2,
        )
        .unwrap();
        let reversed = cross_validate(
            &ds.x,
            &ds.y,
            &KernelSpec::linear(),
            &LossSpec::squared_error(),
            &make_grid(vec![1.0, 0.5, 0.1]),
            &cfg,
            2,
        )
        .unwrap();
        assert_eq!(forward.best.gamma, 0.1);
        assert_eq!(reversed.best.gamma, 0.1);
        assert_eq!(forward.best.score, reversed.best.score);
    }

    #[test]
    fn pure_noise_prefers_the_largest_lambda1() {
        let grid = CvGrid {
            lambda1_candidates: vec![0.0, 0.25, 0.5],
            lambda2_candidates: vec![0.125],
            gamma_candidates: vec![0.5],
            lambda3_fixed: 0.5,
            folds: 3,
        };
        let cfg = SolverConfig {
            max_outer_iters: 10,
            ..SolverConfig::default()
        };
        let mut wins = 0;
        let trials = 20;
        for t in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + t);
            let x: Array2<f64> = Array2::from_shape_fn((30, 2), |_| rng.random_range(0.0..1.0));
            let y: Array1<f64> = {
                let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
                Array1::from_shape_fn(30, |_| rand_distr::Distribution::sample(&normal, &mut rng))
            };
            let out = cross_validate(
                &x,
                &y,
                &KernelSpec::gaussian(0.5),
                &LossSpec::squared_error(),
                &grid,
                &cfg,
                t,
            )
            .unwrap();
            if out.best.lambda1 == 0.5 {
                wins += 1;
            }
        }
        assert!(
            wins * 5 >= trials * 3,
            "largest lambda1 won only {wins}/{trials} trials"
        );
    }

    #[test]
    fn stratified_folds_preserve_class_proportions() {
        let mut y = Vec::new();
        for i in 0..23 {
            y.push(if i < 13 { 1.0 } else { -1.0 });
        }
        let y = Array1::from_vec(y);
        let folds = build_folds(&y, true, 5, 7).unwrap();
        let mut seen = vec![false; 23];
        for fold in &folds {
            let pos = fold.test.iter().filter(|i| y[**i] == 1.0).count();
            let neg = fold.test.iter().filter(|i| y[**i] == -1.0).count();
            assert!(pos == 2 || pos == 3, "pos = {pos}");
            assert_eq!(neg, 2);
            for &i in &fold.test {
                assert!(!seen[i], "index {i} in two folds");
                seen[i] = true;
            }
            assert_eq!(fold.train.len() + fold.test.len(), 23);
        }
        assert!(seen.iter().all(|s| *s));

        // A class smaller than the fold count cannot be stratified.
        let mut y = vec![1.0; 20];
        for v in y.iter_mut().take(3) {
            *v = -1.0;
        }
        let y = Array1::from_vec(y);
        assert!(matches!(
            build_folds(&y, true, 5, 7).unwrap_err(),
            Error::Data(_)
        ));
    }

    #[test]
    fn classification_cv_smoke() {
        let ds = crate::simdata::gen_classification(30, 2, 1, 3).unwrap();
        assert_eq!(ds.task, Task::Classification);
        let grid = CvGrid {
            lambda1_candidates: vec![0.25],
            lambda2_candidates: vec![1.0],
            gamma_candidates: vec![0.5],
            lambda3_fixed: 0.5,
            folds: 3,
        };
        let cfg = SolverConfig {
            max_outer_iters: 5,
            ..SolverConfig::default()
        };
        let out = cross_validate(
            &ds.x,
            &ds.y,
            &KernelSpec::gaussian(0.5),
            &LossSpec::huberized_hinge(0.5),
            &grid,
            &cfg,
            9,
        )
        .unwrap();
        assert!(out.best.score >= 0.0 && out.best.score <= 1.0);
    }

    #[test]
    fn cv_is_seed_deterministic() {
        let ds = gen_regression1(12, 0, 4).unwrap();
        let grid = CvGrid {
            lambda1_candidates: vec![0.0, 0.5],
            lambda2_candidates: vec![1.0],
            gamma_candidates: vec![0.5],
            lambda3_fixed: 0.5,
            folds: 3,
        };
        let cfg = SolverConfig {
            max_outer_iters: 5,
            ..SolverConfig::default()
        };
        let run = || {
            cross_validate(
                &ds.x,
                &ds.y,
                &KernelSpec::gaussian(0.5),
                &LossSpec::squared_error(),
                &grid,
                &cfg,
                42,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.table.len(), b.table.len());
        for (ra, rb) in a.table.iter().zip(&b.table) {
            assert_eq!(ra, rb);
        }
    }

    #[test]
    fn frozen_baseline_keeps_all_weights() {
        let ds = gen_regression1(15, 1, 6).unwrap();
        let cfg = SolverConfig {
            max_outer_iters: 5,
            ..SolverConfig::default()
        };
        let out = cross_validate_frozen_baseline(
            &ds.x,
            &ds.y,
            &KernelSpec::gaussian(0.5),
            &LossSpec::squared_error(),
            &[0.3, 0.6],
            3,
            &cfg,
            8,
        )
        .unwrap();
        // 7 lambda3 values × 2 gammas.
        assert_eq!(out.table.len(), 14);
        assert_eq!(out.best.lambda1, 0.0);
        assert_eq!(out.best.lambda2, 0.0);

        // The winning cell refit on everything keeps w ≡ 1.
        let mut cfg2 = cfg.clone();
        cfg2.freeze_w = true;
        let model = DoskModel::fit(
            &ds.x,
            &ds.y,
            KernelSpec::gaussian(out.best.gamma),
            LossSpec::squared_error(),
            out.best.hyperparams(),
            &cfg2,
        )
        .unwrap();
        assert!(model.w_hat.iter().all(|w| *w == 1.0));
    }

    #[test]
    fn grid_validation_rejects_degenerate_grids() {
        let mut grid = CvGrid::default();
        grid.folds = 1;
        assert!(grid.validate().is_err());

        let mut grid = CvGrid::default();
        grid.lambda1_candidates.clear();
        assert!(grid.validate().is_err());

        let mut grid = CvGrid::default();
        grid.gamma_candidates = vec![0.0];
        assert!(grid.validate().is_err());

        // More folds than observations.
        let ds = gen_regression1(4, 0, 1).unwrap();
        let err = cross_validate(
            &ds.x,
            &ds.y,
            &KernelSpec::gaussian(0.5),
            &LossSpec::squared_error(),
            &CvGrid::default(),
            &SolverConfig::default(),
            0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }
}
