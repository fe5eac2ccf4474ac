//! w-step: descent on the kernel weights through a local linearization.
//!
//! Around an anchor w₀ the fitted values are replaced by their first-order
//! model Aw + Bα (see [`crate::kernel::linearize`]), which turns the w-block
//! of the objective into the convex box-constrained problem
//!
//!   G(w) = (1/n) Σ L(y_i, (Aw)_i + (Bα)_i + b) + λ₂ Σ w_j + λ₃ (Aᵀα)ᵀ w,
//!   w ∈ [0,1]^p.
//!
//! G is solved by accelerated projected gradient with backtracking; because
//! the linearization is first-order exact at the anchor, ∇G(w₀) equals the
//! true objective gradient there and the QP direction is a descent direction
//! for φ. A full fit accepts the QP answer outright when the freshly
//! re-evaluated φ does not increase, and otherwise falls back to an Armijo
//! line search along the QP direction (re-linearizing after each accepted
//! move), which restores guaranteed descent.

use ndarray::{Array1, Array2};

use crate::kernel::{gram_matrix, linearize_with_gram, KernelSpec, Linearization};
use crate::loss::LossSpec;
use crate::solver::{
    inf_norm, objective_cached, spectral_bound, Hyperparams, IterateState, SolverConfig,
    WSTEP_PG_TOL,
};
use crate::{Error, Result};

const QP_MAX_ITERS: usize = 500_000;
/// Accelerated iterations between stationarity checks at the main iterate.
const QP_CHECK_EVERY: usize = 4;

/// The linearized w-subproblem with its α-dependent constants folded in.
struct QpProblem<'a> {
    a: &'a Array2<f64>,
    /// (Bα)_i + b, the part of the fitted values w cannot move.
    offset: Array1<f64>,
    /// λ₂·1 + λ₃·Aᵀα, the linear term of G.
    linear: Array1<f64>,
    y: &'a Array1<f64>,
    loss: &'a LossSpec,
}

impl<'a> QpProblem<'a> {
    fn new(
        lin: &'a Linearization,
        alpha: &Array1<f64>,
        b: f64,
        y: &'a Array1<f64>,
        loss: &'a LossSpec,
        hp: &Hyperparams,
    ) -> Self {
        let offset = lin.b.dot(alpha) + b;
        let linear = lin.a.t().dot(alpha) * hp.lambda3 + hp.lambda2;
        QpProblem {
            a: &lin.a,
            offset,
            linear,
            y,
            loss,
        }
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    fn value(&self, w: &Array1<f64>) -> f64 {
        let f = self.a.dot(w) + &self.offset;
        let mut fit = 0.0;
        for i in 0..self.n() {
            fit += self.loss.value(self.y[i], f[i]);
        }
        fit / self.n() as f64 + self.linear.dot(w)
    }

    fn value_grad(&self, w: &Array1<f64>) -> (f64, Array1<f64>) {
        let f = self.a.dot(w) + &self.offset;
        let n = self.n();
        let mut fit = 0.0;
        let mut lp = Array1::zeros(n);
        for i in 0..n {
            fit += self.loss.value(self.y[i], f[i]);
            lp[i] = self.loss.derivative(self.y[i], f[i]);
        }
        let grad = self.a.t().dot(&lp) / n as f64 + &self.linear;
        (fit / n as f64 + self.linear.dot(w), grad)
    }
}

fn clamp01(v: &Array1<f64>) -> Array1<f64> {
    v.mapv(|x| x.clamp(0.0, 1.0))
}

/// ‖w − Π(w − ∇G(w))‖₂, the unit-step projected-gradient residual.
fn projected_gradient_norm(w: &Array1<f64>, grad: &Array1<f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..w.len() {
        let d = w[j] - (w[j] - grad[j]).clamp(0.0, 1.0);
        s += d * d;
    }
    s.sqrt()
}

/// Minimizes G over the box to projected-gradient norm ≤ [`WSTEP_PG_TOL`],
/// warm-started at `w0` (which must lie in the box).
fn solve_qp_box(qp: &QpProblem, w0: &Array1<f64>) -> Result<Array1<f64>> {
    let nf = qp.n() as f64;
    let ata = qp.a.t().dot(qp.a);
    let sigma = spectral_bound(&ata, 30);
    let lip = qp.loss.curvature_bound() / nf * sigma;
    let mut t = (1.0 / lip.max(1e-12)).min(1e12);

    let mut x = w0.clone();
    let mut z = x.clone();
    let mut theta = 1.0f64;
    let mut gx = f64::INFINITY;

    for it in 0..QP_MAX_ITERS {
        if it % QP_CHECK_EVERY == 0 {
            let (val, grad) = qp.value_grad(&x);
            gx = val;
            if projected_gradient_norm(&x, &grad) <= WSTEP_PG_TOL {
                return Ok(x);
            }
        }

        let (vz, gz) = qp.value_grad(&z);
        let cand = loop {
            let cand = clamp01(&(&z - &(&gz * t)));
            let vc = qp.value(&cand);
            let diff = &cand - &z;
            let bound = vz + gz.dot(&diff) + diff.dot(&diff) / (2.0 * t);
            if vc <= bound + 1e-12 * (1.0 + vc.abs()) {
                break cand;
            }
            t *= 0.5;
            if t < 1e-18 {
                return Err(Error::WStepDiverged {
                    iters: it,
                    pg_norm: projected_gradient_norm(&x, &qp.value_grad(&x).1),
                });
            }
        };
        let vc = qp.value(&cand);

        let momentum_bad = {
            let mut s = 0.0;
            for j in 0..x.len() {
                s += (z[j] - cand[j]) * (cand[j] - x[j]);
            }
            s > 0.0
        };
        if momentum_bad || vc > gx {
            theta = 1.0;
            z = cand.clone();
        } else {
            let theta_new = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
            let beta = (theta - 1.0) / theta_new;
            z = Array1::from_shape_fn(x.len(), |j| cand[j] + beta * (cand[j] - x[j]));
            theta = theta_new;
        }
        gx = vc;
        x = cand;
    }
    Err(Error::WStepDiverged {
        iters: QP_MAX_ITERS,
        pg_norm: projected_gradient_norm(&x, &qp.value_grad(&x).1),
    })
}

/// Solves the linearized w-subproblem anchored at `anchor`, warm-started from
/// `state.w`. Returns the QP minimizer; whether to adopt it is the caller's
/// decision (a full fit re-checks the true objective first).
pub fn w_step_qp(
    kernel: &KernelSpec,
    state: &IterateState,
    x: &Array2<f64>,
    y: &Array1<f64>,
    loss: &LossSpec,
    hp: &Hyperparams,
    anchor: &Array1<f64>,
) -> Result<Array1<f64>> {
    let lin = crate::kernel::linearize(kernel, anchor, &state.alpha, x)?;
    let qp = QpProblem::new(&lin, &state.alpha, state.b, y, loss, hp);
    solve_qp_box(&qp, &state.w)
}

/// Armijo backtracking along `dw` from `w`, on the true objective φ.
/// `dd` must be the directional derivative ∇φ(w)ᵀdw (strictly negative).
/// Returns the accepted step with its refreshed gram/objective, or `None`
/// when every trial within the halving budget failed the Armijo test.
#[allow(clippy::too_many_arguments)]
fn armijo_search(
    kernel: &KernelSpec,
    x: &Array2<f64>,
    y: &Array1<f64>,
    loss: &LossSpec,
    hp: &Hyperparams,
    cfg: &SolverConfig,
    w: &Array1<f64>,
    dw: &Array1<f64>,
    dd: f64,
    phi0: f64,
    alpha: &Array1<f64>,
    b: f64,
) -> Result<Option<Accepted>> {
    let mut s = 1.0;
    for _ in 0..=cfg.line_search_max_halvings {
        let w_trial = clamp01(&(w + &(dw * s)));
        let k_trial = gram_matrix(kernel, &w_trial, x)?;
        let ka_trial = k_trial.dot(alpha);
        let phi_trial = objective_cached(&ka_trial, alpha, b, &w_trial, y, loss, hp)?;
        if phi_trial <= phi0 + cfg.armijo_c * s * dd {
            return Ok(Some((s, w_trial, k_trial, ka_trial, phi_trial)));
        }
        s *= 0.5;
    }
    Ok(None)
}

type Accepted = (f64, Array1<f64>, Array2<f64>, Array1<f64>, f64);

/// Armijo step size along `direction` from `state.w` on the true objective.
/// Returns 0 when the direction is not a strict descent direction or no step
/// within the halving budget passes the Armijo test.
#[allow(clippy::too_many_arguments)]
pub fn line_search(
    kernel: &KernelSpec,
    state: &IterateState,
    direction: &Array1<f64>,
    x: &Array2<f64>,
    y: &Array1<f64>,
    loss: &LossSpec,
    hp: &Hyperparams,
    cfg: &SolverConfig,
) -> Result<f64> {
    if direction.len() != state.w.len() {
        return Err(Error::DimensionMismatch {
            context: "line_search(direction, w)",
            left: direction.len(),
            right: state.w.len(),
        });
    }
    if inf_norm(direction) == 0.0 {
        return Ok(0.0);
    }
    let k = gram_matrix(kernel, &state.w, x)?;
    let ka = k.dot(&state.alpha);
    let phi0 = objective_cached(&ka, &state.alpha, state.b, &state.w, y, loss, hp)?;
    let lin = linearize_with_gram(kernel, &state.w, &state.alpha, x, Some(&k))?;
    let qp = QpProblem::new(&lin, &state.alpha, state.b, y, loss, hp);
    let (_, grad) = qp.value_grad(&state.w);
    let dd = grad.dot(direction);
    if dd >= 0.0 {
        return Ok(0.0);
    }
    let hit = armijo_search(
        kernel,
        x,
        y,
        loss,
        hp,
        cfg,
        &state.w,
        direction,
        dd,
        phi0,
        &state.alpha,
        state.b,
    )?;
    Ok(hit.map_or(0.0, |(s, ..)| s))
}

pub(crate) struct WUpdateOut {
    /// `(w, gram, K·α, φ)` for the accepted move, or `None` to keep the
    /// current weights.
    pub accepted: Option<(Array1<f64>, Array2<f64>, Array1<f64>, f64)>,
    pub line_searches: usize,
}

/// One guarded w-update inside the outer loop: QP step, fresh-objective
/// acceptance test, Armijo fallback. `k`/`ka` must be consistent with `w`,
/// and `phi_in` must be the objective at (α, b, w).
#[allow(clippy::too_many_arguments)]
pub(crate) fn w_update(
    kernel: &KernelSpec,
    x: &Array2<f64>,
    y: &Array1<f64>,
    loss: &LossSpec,
    hp: &Hyperparams,
    cfg: &SolverConfig,
    w: &Array1<f64>,
    k: &Array2<f64>,
    alpha: &Array1<f64>,
    ka: &Array1<f64>,
    b: f64,
    phi_in: f64,
) -> Result<WUpdateOut> {
    let p = w.len();
    let none = WUpdateOut {
        accepted: None,
        line_searches: 0,
    };

    // With α = 0 the kernel no longer enters the objective and the w-block
    // reduces to λ₂Σw over the box.
    if alpha.iter().all(|a| *a == 0.0) {
        if hp.lambda2 == 0.0 || w.iter().all(|v| *v == 0.0) {
            return Ok(none);
        }
        let w_zero = Array1::zeros(p);
        let k_zero = gram_matrix(kernel, &w_zero, x)?;
        let ka_zero = Array1::zeros(ka.len());
        let phi_zero = objective_cached(&ka_zero, alpha, b, &w_zero, y, loss, hp)?;
        if phi_zero <= phi_in {
            return Ok(WUpdateOut {
                accepted: Some((w_zero, k_zero, ka_zero, phi_zero)),
                line_searches: 0,
            });
        }
        return Ok(none);
    }

    // Inner loop (Algorithm 2's "repeat until convergence"): linearize at
    // the current weights, jump to the QP minimizer when the fresh objective
    // agrees, otherwise walk the same direction back through an Armijo
    // search. Iterating to a small move — rather than taking a single jump —
    // converges the whole w-block for the current α, which keeps the outer
    // alternation count low.
    let mut cur_w = w.clone();
    let mut cur_k: Option<Array2<f64>> = None;
    let mut cur_ka = ka.clone();
    let mut cur_phi = phi_in;
    let mut line_searches = 0;
    let mut lin = linearize_with_gram(kernel, &cur_w, alpha, x, Some(k))?;

    for _ in 0..cfg.inner_w_iters {
        let target = {
            let qp = QpProblem::new(&lin, alpha, b, y, loss, hp);
            solve_qp_box(&qp, &cur_w)?
        };
        let dw = &target - &cur_w;
        if inf_norm(&dw) < cfg.tol_w {
            break;
        }

        // Fast path: adopt the QP answer when the true objective agrees.
        let k_try = gram_matrix(kernel, &target, x)?;
        let ka_try = k_try.dot(alpha);
        let phi_try = objective_cached(&ka_try, alpha, b, &target, y, loss, hp)?;
        if phi_try <= cur_phi {
            cur_w = target;
            cur_ka = ka_try;
            cur_phi = phi_try;
            lin = linearize_with_gram(kernel, &cur_w, alpha, x, Some(&k_try))?;
            cur_k = Some(k_try);
            continue;
        }

        // The linearization overshot; walk it back along the same direction.
        let dd = {
            let qp = QpProblem::new(&lin, alpha, b, y, loss, hp);
            qp.value_grad(&cur_w).1.dot(&dw)
        };
        if dd >= 0.0 {
            break;
        }
        line_searches += 1;
        let hit = armijo_search(
            kernel, x, y, loss, hp, cfg, &cur_w, &dw, dd, cur_phi, alpha, b,
        )?;
        let Some((s, w_new, k_new, ka_new, phi_new)) = hit else {
            break;
        };
        let moved = s * inf_norm(&dw);
        cur_w = w_new;
        cur_ka = ka_new;
        cur_phi = phi_new;
        if moved < cfg.tol_w {
            cur_k = Some(k_new);
            break;
        }
        lin = linearize_with_gram(kernel, &cur_w, alpha, x, Some(&k_new))?;
        cur_k = Some(k_new);
    }

    match cur_k {
        Some(k_new) => Ok(WUpdateOut {
            accepted: Some((cur_w, k_new, cur_ka, cur_phi)),
            line_searches,
        }),
        None => Ok(WUpdateOut {
            accepted: None,
            line_searches,
        }),
    }
}
