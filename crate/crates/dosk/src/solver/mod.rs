//! The DOSK objective and its alternating optimizer.
//!
//! A fit alternates three steps until the objective change falls below
//! `tol_objective`:
//!
//! 1. α-step: minimize over the dual coefficients with w, b fixed (coordinate
//!    descent for squared error, accelerated proximal gradient otherwise).
//! 2. b-step: exact mean update for squared error, bisection on the monotone
//!    derivative for margin losses.
//! 3. w-step: minimize a local linearization of the kernel over the box
//!    [0,1]^p; the candidate is accepted only if the true objective (recomputed
//!    with a fresh gram) does not increase, otherwise the step is rerun through
//!    an Armijo line search on the same descent direction.
//!
//! Once the alternation has converged, a face-refinement pass probes each
//! remaining positive kernel weight: it sets the coordinate to exactly zero,
//! refits (α, b) with the reduced kernel, and adopts the candidate only when
//! that strictly lowers the objective, after which the alternation resumes.
//! Coordinatewise alternation alone approaches the w-box faces geometrically
//! (each w-step is anchored by the α it just fit), so without the probes a
//! weight the objective wants *off* can survive any practical iteration cap
//! at a small positive value.
//!
//! Every acceptance decision compares freshly evaluated objectives, so the
//! returned trace is non-increasing by construction.

mod alpha;
mod bstep;
mod wstep;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kernel::{gram_matrix, KernelSpec};
use crate::loss::LossSpec;
use crate::{Error, Result};

pub use wstep::{line_search, w_step_qp};

/// KKT residual tolerance the α-step solves to.
pub const ALPHA_KKT_TOL: f64 = 1e-6;
/// Projected-gradient norm tolerance the w-step QP solves to.
pub const WSTEP_PG_TOL: f64 = 1e-6;
/// Tolerance on Σ L'(y_i, f_i + b) for the bisection b-step.
pub const BSTEP_DERIV_TOL: f64 = 1e-10;
/// Support/selection threshold absorbing float dust in α and w.
pub const SUPPORT_THRESHOLD: f64 = 1e-8;
/// Cap on (α, b) refit sweeps inside one face probe.
const FACE_REFIT_ITERS: usize = 200;
/// Relative margin a face candidate must clear to be adopted; keeps the
/// refinement from churning on float-level ties.
const FACE_PROBE_MARGIN: f64 = 1e-10;

/// The three penalty weights of the DOSK objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Hyperparams {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Self {
        Hyperparams {
            lambda1,
            lambda2,
            lambda3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be nonnegative and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Optimizer knobs. The defaults mirror the benchmark protocol: at most 300
/// outer iterations, stopping when the objective change drops below 1e-3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub max_outer_iters: usize,
    pub tol_objective: f64,
    /// Cap on the inner linearize→QP→line-search loop used when a plain w-step
    /// fails to decrease the objective.
    pub inner_w_iters: usize,
    /// The inner loop stops once the w move is smaller than this (∞-norm).
    pub tol_w: f64,
    pub line_search_max_halvings: usize,
    pub armijo_c: f64,
    /// Number of starts; the first uses w⁰ = 1, the rest draw w⁰ uniformly.
    pub n_starts: usize,
    pub seed: u64,
    /// Skip the w-step entirely (the `--freeze-w` reduction).
    pub freeze_w: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_outer_iters: 300,
            tol_objective: 1e-3,
            inner_w_iters: 50,
            tol_w: 1e-4,
            line_search_max_halvings: 50,
            armijo_c: 1e-4,
            n_starts: 1,
            seed: 0,
            freeze_w: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer_iters == 0 || self.inner_w_iters == 0 || self.n_starts == 0 {
            return Err(Error::InvalidConfig(
                "iteration counts and n_starts must be positive".into(),
            ));
        }
        for (name, v) in [
            ("tol_objective", self.tol_objective),
            ("tol_w", self.tol_w),
            ("armijo_c", self.armijo_c),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must lie in (0, 1), got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Decision variables of the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateState {
    pub w: Array1<f64>,
    pub alpha: Array1<f64>,
    pub b: f64,
}

/// Per-fit diagnostics. `objective_per_iter[0]` is the initialization
/// objective; one entry follows per outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct FitTrace {
    pub objective_per_iter: Vec<f64>,
    pub line_search_invocations: usize,
    pub converged: bool,
    pub iters_used: usize,
}

impl FitTrace {
    /// Largest single-step increase of the trace (0 for a monotone trace).
    pub fn max_step_increase(&self) -> f64 {
        self.objective_per_iter
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    pub fn final_objective(&self) -> f64 {
        *self
            .objective_per_iter
            .last()
            .expect("trace is never empty")
    }
}

pub(crate) fn l1_norm(v: &Array1<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub(crate) fn inf_norm(v: &Array1<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn all_finite<'a>(vals: impl IntoIterator<Item = &'a f64>) -> bool {
    vals.into_iter().all(|v| v.is_finite())
}

/// Objective value with the K·α product already available; every acceptance
/// decision in the solver funnels through this one evaluation path so that
/// monotonicity comparisons are bitwise-consistent.
pub(crate) fn objective_cached(
    ka: &Array1<f64>,
    alpha: &Array1<f64>,
    b: f64,
    w: &Array1<f64>,
    y: &Array1<f64>,
    loss: &LossSpec,
    hp: &Hyperparams,
) -> Result<f64> {
    let n = y.len();
    let mut fit = 0.0;
    for i in 0..n {
        fit += loss.value(y[i], ka[i] + b);
    }
    fit /= n as f64;
    let phi = fit
        + hp.lambda1 * l1_norm(alpha)
        + hp.lambda2 * l1_norm(w)
        + hp.lambda3 * alpha.dot(ka);
    if phi.is_finite() {
        Ok(phi)
    } else {
        Err(Error::NonFinite("objective"))
    }
}

/// The DOSK objective
/// φ(α, b, w) = (1/n) Σ L(y_i, (Kα)_i + b) + λ₁‖α‖₁ + λ₂‖w‖₁ + λ₃ αᵀKα,
/// evaluated with `k` the gram matrix at `state.w`.
pub fn objective(
    state: &IterateState,
    k: &Array2<f64>,
    y: &Array1<f64>,
    loss: &LossSpec,
    hp: &Hyperparams,
) -> Result<f64> {
    if k.nrows() != k.ncols() || k.nrows() != state.alpha.len() {
        return Err(Error::DimensionMismatch {
            context: "objective(K, alpha)",
            left: k.nrows(),
            right: state.alpha.len(),
        });
    }
    if y.len() != state.alpha.len() {
        return Err(Error::DimensionMismatch {
            context: "objective(y, alpha)",
            left: y.len(),
            right: state.alpha.len(),
        });
    }
    if !state.b.is_finite()
        || !all_finite(&state.alpha)
        || !all_finite(&state.w)
        || !all_finite(y)
    {
        return Err(Error::NonFinite("objective inputs"));
    }
    let ka = k.dot(&state.alpha);
    objective_cached(&ka, &state.alpha, state.b, &state.w, y, loss, hp)
}

/// α-step: minimizes the objective over α with w, b fixed, to KKT residual
/// ≤ [`ALPHA_KKT_TOL`]. `k` must be the gram at `state.w`. The returned vector
/// never has a larger objective than `state.alpha`.
pub fn alpha_step(
    state: &IterateState,
    k: &Array2<f64>,
    y: &Array1<f64>,
    loss: &LossSpec,
    hp: &Hyperparams,
) -> Result<Array1<f64>> {
    alpha::alpha_step_impl(k, y, &state.alpha, state.b, loss, hp)
}

/// b-step: exact minimizer of the mean loss over the intercept with α, w
/// fixed. `k` must be the gram at `state.w`.
pub fn b_step(
    state: &IterateState,
    k: &Array2<f64>,
    y: &Array1<f64>,
    loss: &LossSpec,
) -> Result<f64> {
    let ka = k.dot(&state.alpha);
    bstep::b_step_impl(&ka, y, loss, state.b)
}

/// Fits the DOSK model by alternating minimization with a line-search guard.
///
/// Initialization is w⁰ = 1, α⁰ = 0, b⁰ = 0; additional starts (Remark-style
/// multi-start) draw w⁰ uniformly on [0,1]^p from a generator seeded with
/// `cfg.seed` and the smallest final objective wins. `x` is expected to be
/// standardized to [0,1] per column (the model layer guarantees this).
pub fn fit_dosk(
    kernel: &KernelSpec,
    x: &Array2<f64>,
    y: &Array1<f64>,
    loss: &LossSpec,
    hp: &Hyperparams,
    cfg: &SolverConfig,
) -> Result<(IterateState, FitTrace)> {
    kernel.validate()?;
    loss.validate()?;
    hp.validate()?;
    cfg.validate()?;
    let n = x.nrows();
    let p = x.ncols();
    if n == 0 || p == 0 {
        return Err(Error::EmptyData("fit_dosk requires a nonempty matrix"));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            context: "fit_dosk(x rows, y)",
            left: n,
            right: y.len(),
        });
    }
    if !all_finite(y) || !all_finite(x.iter()) {
        return Err(Error::NonFinite("fit_dosk inputs"));
    }
    loss.validate_labels(y)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(IterateState, FitTrace)> = None;
    for start in 0..cfg.n_starts {
        let w0 = if start == 0 {
            Array1::ones(p)
        } else {
            Array1::from_iter((0..p).map(|_| rng.random_range(0.0..1.0)))
        };
        let (state, trace) = fit_single_start(kernel, x, y, loss, hp, cfg, w0)?;
        let better = match &best {
            None => true,
            Some((_, bt)) => trace.final_objective() < bt.final_objective(),
        };
        if better {
            best = Some((state, trace));
        }
    }
    Ok(best.expect("n_starts >= 1"))
}

fn fit_single_start(
    kernel: &KernelSpec,
    x: &Array2<f64>,
    y: &Array1<f64>,
    loss: &LossSpec,
    hp: &Hyperparams,
    cfg: &SolverConfig,
    w0: Array1<f64>,
) -> Result<(IterateState, FitTrace)> {
    let n = x.nrows();
    let p = x.ncols();
    let mut w = w0;
    let mut alpha = Array1::zeros(n);
    let mut b = 0.0;
    let mut k = gram_matrix(kernel, &w, x)?;
    let mut ka = Array1::zeros(n);
    let mut phi = objective_cached(&ka, &alpha, b, &w, y, loss, hp)?;
    let mut trace = Vec::with_capacity(cfg.max_outer_iters + 1);
    trace.push(phi);
    let mut line_search_invocations = 0;
    let mut converged = false;
    let mut iters_used = 0;
    let mut iters_left = cfg.max_outer_iters;
    // Each refinement round ends in either an adopted face candidate (one
    // coordinate forced to zero) or loop exit, so p + 1 rounds suffice.
    let rounds = if cfg.freeze_w { 1 } else { p + 1 };

    for _ in 0..rounds {
        // Alternation segment: α-step, b-step, guarded w-step.
        while iters_left > 0 {
            iters_left -= 1;
            iters_used += 1;
            let mut phi_cur = phi;

            // α-step. Fresh re-evaluation guards against accumulation drift
            // in the step's internal bookkeeping ever surfacing as a trace
            // increase.
            let alpha_new = alpha::alpha_step_impl(&k, y, &alpha, b, loss, hp)?;
            let ka_new = k.dot(&alpha_new);
            let phi_a = objective_cached(&ka_new, &alpha_new, b, &w, y, loss, hp)?;
            if phi_a <= phi_cur {
                alpha = alpha_new;
                ka = ka_new;
                phi_cur = phi_a;
            }

            // b-step.
            let b_new = bstep::b_step_impl(&ka, y, loss, b)?;
            if b_new != b {
                let phi_b = objective_cached(&ka, &alpha, b_new, &w, y, loss, hp)?;
                if phi_b <= phi_cur {
                    b = b_new;
                    phi_cur = phi_b;
                }
            }

            // w-step with the monotonicity guard.
            if !cfg.freeze_w {
                let out = wstep::w_update(
                    kernel, x, y, loss, hp, cfg, &w, &k, &alpha, &ka, b, phi_cur,
                )?;
                line_search_invocations += out.line_searches;
                if let Some((w_new, k_new, ka_new, phi_w)) = out.accepted {
                    w = w_new;
                    k = k_new;
                    ka = ka_new;
                    phi_cur = phi_w;
                }
            }

            trace.push(phi_cur);
            let delta = phi - phi_cur;
            phi = phi_cur;
            if delta.abs() < cfg.tol_objective {
                converged = true;
                break;
            }
        }

        if cfg.freeze_w || !converged || iters_left == 0 {
            break;
        }

        // Face refinement: adopt the first strict improvement, then resume
        // the alternation from it; stop once no probe helps.
        match face_probe(kernel, x, y, loss, hp, cfg, &w, &alpha, b, phi)? {
            None => break,
            Some(probe) => {
                w = probe.w;
                k = probe.k;
                ka = probe.ka;
                alpha = probe.alpha;
                b = probe.b;
                phi = probe.phi;
                iters_left -= 1;
                iters_used += 1;
                trace.push(phi);
                // The adopted point changed w after the stationarity check;
                // it only counts as converged again once the alternation
                // segment re-confirms.
                converged = false;
            }
        }
    }

    Ok((
        IterateState { w, alpha, b },
        FitTrace {
            objective_per_iter: trace,
            line_search_invocations,
            converged,
            iters_used,
        },
    ))
}

/// An adopted face candidate: one kernel weight forced to exactly zero with
/// (α, b) refit under the reduced kernel.
struct FaceCandidate {
    w: Array1<f64>,
    k: Array2<f64>,
    ka: Array1<f64>,
    alpha: Array1<f64>,
    b: f64,
    phi: f64,
}

/// Probes the box faces adjacent to `w`, smallest coordinate first: zeroes
/// one positive weight, refits (α, b) with w frozen (warm-started, convex),
/// and returns the first candidate whose refit objective strictly beats
/// `phi_in` by [`FACE_PROBE_MARGIN`].
#[allow(clippy::too_many_arguments)]
fn face_probe(
    kernel: &KernelSpec,
    x: &Array2<f64>,
    y: &Array1<f64>,
    loss: &LossSpec,
    hp: &Hyperparams,
    cfg: &SolverConfig,
    w: &Array1<f64>,
    alpha: &Array1<f64>,
    b: f64,
    phi_in: f64,
) -> Result<Option<FaceCandidate>> {
    let mut order: Vec<usize> = (0..w.len()).filter(|&j| w[j] > 0.0).collect();
    order.sort_by(|&a, &c| w[a].total_cmp(&w[c]).then(a.cmp(&c)));

    for j in order {
        let mut w_try = w.clone();
        w_try[j] = 0.0;
        let k_try = gram_matrix(kernel, &w_try, x)?;
        let mut a_try = alpha.clone();
        let mut b_try = b;
        let mut ka_try = k_try.dot(&a_try);
        let mut phi_try = objective_cached(&ka_try, &a_try, b_try, &w_try, y, loss, hp)?;

        for _ in 0..FACE_REFIT_ITERS {
            let phi_prev = phi_try;
            let a_new = alpha::alpha_step_impl(&k_try, y, &a_try, b_try, loss, hp)?;
            let ka_new = k_try.dot(&a_new);
            let phi_a = objective_cached(&ka_new, &a_new, b_try, &w_try, y, loss, hp)?;
            if phi_a <= phi_try {
                a_try = a_new;
                ka_try = ka_new;
                phi_try = phi_a;
            }
            let b_new = bstep::b_step_impl(&ka_try, y, loss, b_try)?;
            if b_new != b_try {
                let phi_b = objective_cached(&ka_try, &a_try, b_new, &w_try, y, loss, hp)?;
                if phi_b <= phi_try {
                    b_try = b_new;
                    phi_try = phi_b;
                }
            }
            if (phi_prev - phi_try).abs() < cfg.tol_objective {
                break;
            }
        }

        if phi_try < phi_in - FACE_PROBE_MARGIN * (1.0 + phi_in.abs()) {
            return Ok(Some(FaceCandidate {
                w: w_try,
                k: k_try,
                ka: ka_try,
                alpha: a_try,
                b: b_try,
                phi: phi_try,
            }));
        }
    }
    Ok(None)
}

/// Power-iteration estimate of the largest eigenvalue of a symmetric PSD
/// matrix; used to initialize gradient step sizes (backtracking corrects any
/// underestimate).
pub(crate) fn spectral_bound(m: &Array2<f64>, iters: usize) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    for _ in 0..iters {
        let mv = m.dot(&v);
        let norm = mv.dot(&mv).sqrt();
        if norm <= 1e-300 {
            return 0.0;
        }
        v = mv / norm;
    }
    let lam = v.dot(&m.dot(&v));
    lam.max(0.0)
}
