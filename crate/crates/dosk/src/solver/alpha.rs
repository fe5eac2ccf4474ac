//! α-step solvers.
//!
//! With w and b fixed the objective restricted to α is
//!
//!   h(α) = (1/n) Σ L(y_i, (Kα)_i + b) + λ₁‖α‖₁ + λ₃ αᵀKα,
//!
//! an ℓ₁-penalized convex problem. Squared error admits exact coordinate-wise
//! soft-threshold updates, so cyclic coordinate descent with cached residuals
//! is used there, falling back to the accelerated loop when the gram is so
//! ill-conditioned that cyclic updates crawl. The huberized hinge and deviance
//! losses have no closed-form coordinate update; those go straight through the
//! accelerated proximal-gradient loop (backtracking step sizes, gradient-based
//! momentum restarts). Both solvers run until the KKT residual of h drops to
//! [`ALPHA_KKT_TOL`] and both start from the incoming α, returning it
//! untouched when it is already optimal.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};

use crate::loss::{LossKind, LossSpec};
use crate::solver::{spectral_bound, Hyperparams, ALPHA_KKT_TOL};
use crate::{Error, Result};

/// Coordinate-descent sweep budget before the accelerated solver takes over.
/// Warm-started healthy instances converge well under this; burning more
/// sweeps almost always means near-collinear gram columns, where cyclic
/// updates shuffle ± coefficient mass at only O(λ₁) per sweep.
const CD_STALL_SWEEPS: usize = 150;
const FISTA_MAX_ITERS: usize = 400_000;
/// Sweeps between full recomputations of the cached residual vectors.
const CD_REFRESH_EVERY: usize = 64;
/// First sweep at which the active-set Newton polish fires (λ₁ > 0 path);
/// a warm start that has not converged by then is usually crawling, and the
/// polish is orders of magnitude cheaper than the sweeps it saves.
const CD_POLISH_FIRST: usize = 25;
/// Sweeps between subsequent polish attempts.
const CD_POLISH_EVERY: usize = 50;
/// Accelerated iterations between (matvec-costing) KKT checks.
const FISTA_CHECK_EVERY: usize = 8;
/// Accelerated iterations between active-set polish attempts (squared error
/// only; the margin losses have no closed-form Newton system).
const FISTA_POLISH_EVERY: usize = 2_000;

fn soft_threshold(u: f64, t: f64) -> f64 {
    if u > t {
        u - t
    } else if u < -t {
        u + t
    } else {
        0.0
    }
}

/// Max-norm KKT residual of min g(α) + λ₁‖α‖₁ given ∇g(α).
fn kkt_residual(grad: &Array1<f64>, alpha: &Array1<f64>, lambda1: f64) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..alpha.len() {
        let r = if alpha[j] > 0.0 {
            (grad[j] + lambda1).abs()
        } else if alpha[j] < 0.0 {
            (grad[j] - lambda1).abs()
        } else {
            (grad[j].abs() - lambda1).max(0.0)
        };
        worst = worst.max(r);
    }
    worst
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub(crate) fn alpha_step_impl(
    k: &Array2<f64>,
    y: &Array1<f64>,
    alpha0: &Array1<f64>,
    b: f64,
    loss: &LossSpec,
    hp: &Hyperparams,
) -> Result<Array1<f64>> {
    let n = y.len();
    if k.nrows() != n || k.ncols() != n || alpha0.len() != n {
        return Err(Error::DimensionMismatch {
            context: "alpha_step(K, y, alpha)",
            left: k.nrows(),
            right: n,
        });
    }
    if n == 0 {
        return Err(Error::EmptyData("alpha_step requires n > 0"));
    }
    match loss.kind {
        LossKind::SquaredError => cd_squared(k, y, alpha0, b, hp),
        LossKind::HuberizedHinge => {
            if let Some(found) = hinge_piecewise_newton(k, y, alpha0, b, loss, hp)? {
                return Ok(found);
            }
            fista(k, y, alpha0, b, loss, hp)
        }
        LossKind::Deviance => fista(k, y, alpha0, b, loss, hp),
    }
}

/// h(α) with squared error, evaluated fresh (one matvec).
fn h_squared(
    k: &Array2<f64>,
    y: &Array1<f64>,
    alpha: &Array1<f64>,
    b: f64,
    hp: &Hyperparams,
) -> f64 {
    let ka = k.dot(alpha);
    let n = y.len();
    let mut fit = 0.0;
    for i in 0..n {
        let r = y[i] - b - ka[i];
        fit += r * r;
    }
    fit / n as f64
        + hp.lambda1 * alpha.iter().map(|a| a.abs()).sum::<f64>()
        + hp.lambda3 * alpha.dot(&ka)
}

/// λ₁ = 0 short-circuit. The smooth stationarity condition
/// K[(2/n)(Kα − (y − b)) + 2λ₃α] = 0 is implied by the ridge system
/// (K + nλ₃I)α = y − b, which is solved directly (LU plus two rounds of
/// iterative refinement). Returns `None` when the system is too degenerate to
/// beat the warm start.
fn ridge_direct(
    k: &Array2<f64>,
    y: &Array1<f64>,
    b: f64,
    hp: &Hyperparams,
    alpha0: &Array1<f64>,
) -> Option<Array1<f64>> {
    let n = y.len();
    let nf = n as f64;
    let m = DMatrix::from_fn(n, n, |i, j| {
        k[[i, j]] + if i == j { nf * hp.lambda3 } else { 0.0 }
    });
    let lu = m.clone().lu();
    let rhs = DVector::from_fn(n, |i, _| y[i] - b);
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..2 {
        let resid = &rhs - &m * &sol;
        match lu.solve(&resid) {
            Some(corr) => sol += corr,
            None => break,
        }
    }
    let alpha = Array1::from_iter(sol.iter().cloned());
    if !alpha.iter().all(|a| a.is_finite()) {
        return None;
    }
    if h_squared(k, y, &alpha, b, hp) <= h_squared(k, y, alpha0, b, hp) {
        Some(alpha)
    } else {
        None
    }
}

/// Solve the (symmetric PSD up to rounding) system m·x = rhs, escalating a
/// diagonal jitter until the Cholesky factorization succeeds. Near-singular
/// systems arise whenever the gram is close to rank-deficient; the jittered
/// solution is then one valid proposal among the many near-minimizers, and
/// the caller's objective guard decides whether it helps.
fn solve_spd_jittered(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let dim = m.nrows();
    if let Some(chol) = m.clone().cholesky() {
        return Some(chol.solve(rhs));
    }
    let scale = (0..dim).map(|i| m[(i, i)]).sum::<f64>() / dim as f64;
    for tau_rel in [1e-12, 1e-9, 1e-6] {
        let tau = tau_rel * scale.max(f64::MIN_POSITIVE);
        let mut mj = m.clone();
        for i in 0..dim {
            mj[(i, i)] += tau;
        }
        if let Some(chol) = mj.cholesky() {
            return Some(chol.solve(rhs));
        }
    }
    None
}

/// Newton system of the smooth terms restricted to `active` with the ℓ₁ term
/// linearized by `signs`: M·a = rhs with M = (2/n)KₛᵀKₛ + 2λ₃Kₛₛ and
/// rhs = (2/n)Kₛᵀ(y − b) − λ₁·signs.
fn reduced_system(
    k: &Array2<f64>,
    ymb: &[f64],
    active: &[usize],
    signs: &[f64],
    hp: &Hyperparams,
    nf: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let dim = active.len();
    let mut m = DMatrix::zeros(dim, dim);
    for ai in 0..dim {
        let i = active[ai];
        let ki = k.row(i);
        let ki = ki.to_slice().expect("gram rows are contiguous");
        for aj in ai..dim {
            let j = active[aj];
            let kj = k.row(j);
            let kj = kj.to_slice().expect("gram rows are contiguous");
            let v = 2.0 / nf * dot(ki, kj) + 2.0 * hp.lambda3 * k[[i, j]];
            m[(ai, aj)] = v;
            m[(aj, ai)] = v;
        }
    }
    let rhs = DVector::from_fn(dim, |ai, _| {
        let j = active[ai];
        let kj = k.row(j);
        let kj = kj.to_slice().expect("gram rows are contiguous");
        2.0 / nf * dot(kj, ymb) - hp.lambda1 * signs[ai]
    });
    (m, rhs)
}

/// One active-set Newton pass for λ₁ > 0: solve the stationarity system of
/// the smooth terms restricted to the current support (with the ℓ₁ term
/// contributing λ₁·sign(α) there), dropping coordinates whose solved sign
/// contradicts the assumption. Purely a proposal; the caller accepts it only
/// if h does not increase.
fn active_set_polish(
    k: &Array2<f64>,
    y: &Array1<f64>,
    b: f64,
    hp: &Hyperparams,
    alpha: &Array1<f64>,
) -> Option<Array1<f64>> {
    let n = y.len();
    let nf = n as f64;
    let ymb: Vec<f64> = (0..n).map(|i| y[i] - b).collect();
    let mut active: Vec<usize> = (0..n).filter(|&j| alpha[j] != 0.0).collect();
    let mut signs: Vec<f64> = active.iter().map(|&j| alpha[j].signum()).collect();
    for _ in 0..12 {
        if active.is_empty() {
            return None;
        }
        let dim = active.len();
        let (m, rhs) = reduced_system(k, &ymb, &active, &signs, hp, nf);
        let sol = solve_spd_jittered(&m, &rhs)?;
        let mut kept_active = Vec::with_capacity(dim);
        let mut kept_signs = Vec::with_capacity(dim);
        for ai in 0..dim {
            if sol[ai] * signs[ai] > 0.0 {
                kept_active.push(active[ai]);
                kept_signs.push(signs[ai]);
            }
        }
        if kept_active.len() == dim {
            let mut out = Array1::zeros(n);
            for ai in 0..dim {
                out[active[ai]] = sol[ai];
            }
            if out.iter().all(|a| a.is_finite()) {
                return Some(out);
            }
            return None;
        }
        active = kept_active;
        signs = kept_signs;
    }
    None
}

/// Feature-sign search (active-set Newton with exact segment search to the
/// first sign flip) for the λ₁ > 0 squared-error problem. Within a fixed
/// sign pattern h is a smooth quadratic, so the reduced Newton solution is
/// the orthant minimizer; walking toward it either lands there or hits a
/// zero crossing first, and in both cases h strictly decreases, so sign
/// configurations never repeat. New coordinates enter through the worst
/// KKT violators of the fresh gradient.
///
/// Returns `Ok(None)` when a jittered (near-singular) Newton proposal fails
/// to decrease h or the round budget runs out — the caller falls back to
/// plain coordinate descent, keeping this purely an accelerator.
fn feature_sign(
    k: &Array2<f64>,
    y: &Array1<f64>,
    alpha0: &Array1<f64>,
    b: f64,
    hp: &Hyperparams,
) -> Result<Option<Array1<f64>>> {
    const FS_MAX_ROUNDS: usize = 200;
    const FS_MAX_DROPS: usize = 400;
    const FS_ADD_PER_ROUND: usize = 8;

    let n = y.len();
    let nf = n as f64;
    let ymb: Vec<f64> = (0..n).map(|i| y[i] - b).collect();
    let mut alpha = alpha0.clone();
    let mut h_cur = h_squared(k, y, &alpha, b, hp);
    let mut active: Vec<usize> = (0..n).filter(|&j| alpha[j] != 0.0).collect();
    let mut signs: Vec<f64> = active.iter().map(|&j| alpha[j].signum()).collect();
    let mut drops_left = FS_MAX_DROPS;

    for _ in 0..FS_MAX_ROUNDS {
        // Fresh KKT state: done, or grow the active set by the violators.
        let q = k.dot(&alpha);
        let r = Array1::from_shape_fn(n, |i| ymb[i] - q[i]);
        let grad = full_gradient_squared(k, &r, &q, hp, nf);
        if kkt_residual(&grad, &alpha, hp.lambda1) <= ALPHA_KKT_TOL {
            return Ok(Some(alpha));
        }
        let mut violators: Vec<(f64, usize)> = (0..n)
            .filter(|&j| alpha[j] == 0.0 && !active.contains(&j))
            .map(|j| ((grad[j].abs() - hp.lambda1).max(0.0), j))
            .filter(|&(v, _)| v > 0.0)
            .collect();
        violators.sort_by(|a, c| c.0.total_cmp(&a.0).then(a.1.cmp(&c.1)));
        if !violators.is_empty() {
            let cut = 0.5 * violators[0].0;
            for &(v, j) in violators.iter().take(FS_ADD_PER_ROUND) {
                if v >= cut {
                    active.push(j);
                    signs.push(-grad[j].signum());
                }
            }
        }
        // With no violators the failure is an interior condition on the
        // current support; the sign-fixed Newton below does the organizing.

        // Inner: solve the sign-fixed Newton system, walking segments to the
        // first zero crossing and dropping the crossing coordinate.
        loop {
            if active.is_empty() {
                return Ok(Some(Array1::zeros(n)));
            }
            let (m, rhs) = reduced_system(k, &ymb, &active, &signs, hp, nf);
            let Some(sol) = solve_spd_jittered(&m, &rhs) else {
                return Ok(None);
            };
            if sol.iter().any(|v| !v.is_finite()) {
                return Ok(None);
            }

            // Earliest zero crossing along the segment current → proposal.
            let mut t_cross = 1.0f64;
            let mut crossing: Option<usize> = None;
            for (ai, &j) in active.iter().enumerate() {
                let cur = alpha[j];
                let new = sol[ai];
                if new * signs[ai] > 0.0 {
                    continue;
                }
                let d = new - cur;
                if d == 0.0 {
                    continue;
                }
                let t = -cur / d;
                if t.is_finite() && (0.0..t_cross).contains(&t) {
                    t_cross = t;
                    crossing = Some(ai);
                }
            }

            let mut cand = alpha.clone();
            for (ai, &j) in active.iter().enumerate() {
                cand[j] = alpha[j] + t_cross * (sol[ai] - alpha[j]);
            }
            if let Some(ai) = crossing {
                cand[active[ai]] = 0.0;
            }
            let h_cand = h_squared(k, y, &cand, b, hp);
            if !(h_cand <= h_cur) {
                // Only possible off the exact-Newton path (jittered solve on
                // a singular system); hand the instance back.
                return Ok(None);
            }
            alpha = cand;
            h_cur = h_cand;
            match crossing {
                Some(ai) => {
                    active.swap_remove(ai);
                    signs.swap_remove(ai);
                    if drops_left == 0 {
                        return Ok(None);
                    }
                    drops_left -= 1;
                }
                None => break,
            }
        }
    }
    Ok(None)
}

/// Cyclic coordinate descent for squared error. For coordinate j with
/// residual r = y − b − Kα and q = Kα the coordinate curvature is
/// a_j = (2/n)‖K_j‖² + 2λ₃K_jj and the partial gradient of the smooth part is
/// g_j = −(2/n)K_jᵀr + 2λ₃q_j, giving the exact minimizer
/// soft(α_j − g_j/a_j, λ₁/a_j).
///
/// Plain cyclic descent crawls on badly conditioned grams (smooth kernels on
/// close-by points make near-collinear columns), so two exact accelerators
/// sit on top of it: λ₁ = 0 is handed to [`ridge_direct`], and λ₁ > 0 runs an
/// [`active_set_polish`] every [`CD_POLISH_EVERY`] sweeps. Both are accepted
/// only when they do not increase h, so the contract is unaffected. If the
/// budget of [`CD_STALL_SWEEPS`] runs out — in practice only when the gram is
/// nearly rank-one and opposite-signed coefficients must annihilate through
/// the ℓ₁ term — the instance is handed to [`fista`], whose momentum covers
/// such zero-curvature directions quadratically faster than cyclic updates.
fn cd_squared(
    k: &Array2<f64>,
    y: &Array1<f64>,
    alpha0: &Array1<f64>,
    b: f64,
    hp: &Hyperparams,
) -> Result<Array1<f64>> {
    let n = y.len();
    let nf = n as f64;
    let mut alpha = alpha0.clone();
    let mut q = k.dot(&alpha);
    let mut r = Array1::from_shape_fn(n, |i| y[i] - b - q[i]);

    let mut curv = Array1::zeros(n);
    for j in 0..n {
        let col = k.row(j);
        let col = col.to_slice().expect("gram rows are contiguous");
        curv[j] = 2.0 / nf * dot(col, col) + 2.0 * hp.lambda3 * k[[j, j]];
    }

    // Fast path: the warm start may already satisfy the KKT conditions.
    let grad = full_gradient_squared(k, &r, &q, hp, nf);
    if kkt_residual(&grad, &alpha, hp.lambda1) <= ALPHA_KKT_TOL {
        return Ok(alpha);
    }

    if hp.lambda1 == 0.0 {
        if let Some(direct) = ridge_direct(k, y, b, hp, &alpha) {
            q = k.dot(&direct);
            r = Array1::from_shape_fn(n, |i| y[i] - b - q[i]);
            let grad = full_gradient_squared(k, &r, &q, hp, nf);
            if kkt_residual(&grad, &direct, hp.lambda1) <= ALPHA_KKT_TOL {
                return Ok(direct);
            }
            alpha = direct;
        }
    } else if let Some(found) = feature_sign(k, y, &alpha, b, hp)? {
        return Ok(found);
    }

    for sweep in 0..CD_STALL_SWEEPS {
        // Largest |Δα_j|·curvature over the sweep: a stale-by-one-sweep bound
        // on how much the sweep shifted any coordinate gradient, used as a
        // cheap proxy before paying a matvec for the exact KKT residual.
        let mut max_move = 0.0f64;
        for j in 0..n {
            let row = k.row(j);
            let kj = row.to_slice().expect("gram rows are contiguous");
            if curv[j] <= 0.0 {
                // A zero kernel column cannot reduce the fit; the penalized
                // optimum for the coordinate is 0.
                if alpha[j] != 0.0 && hp.lambda1 > 0.0 {
                    let delta = -alpha[j];
                    for i in 0..n {
                        r[i] -= delta * kj[i];
                        q[i] += delta * kj[i];
                    }
                    alpha[j] = 0.0;
                }
                continue;
            }
            let g = -2.0 / nf * dot(kj, r.as_slice().unwrap()) + 2.0 * hp.lambda3 * q[j];
            let new = soft_threshold(alpha[j] - g / curv[j], hp.lambda1 / curv[j]);
            let delta = new - alpha[j];
            if delta != 0.0 {
                for i in 0..n {
                    r[i] -= delta * kj[i];
                    q[i] += delta * kj[i];
                }
                alpha[j] = new;
                max_move = max_move.max(delta.abs() * curv[j]);
            }
        }
        if (sweep + 1) % CD_REFRESH_EVERY == 0 {
            q = k.dot(&alpha);
            r = Array1::from_shape_fn(n, |i| y[i] - b - q[i]);
        }
        let polish_due = hp.lambda1 > 0.0
            && sweep + 1 >= CD_POLISH_FIRST
            && (sweep + 1 - CD_POLISH_FIRST) % CD_POLISH_EVERY == 0;
        if polish_due {
            if let Some(polished) = active_set_polish(k, y, b, hp, &alpha) {
                if h_squared(k, y, &polished, b, hp) <= h_squared(k, y, &alpha, b, hp) {
                    alpha = polished;
                    q = k.dot(&alpha);
                    r = Array1::from_shape_fn(n, |i| y[i] - b - q[i]);
                    let grad = full_gradient_squared(k, &r, &q, hp, nf);
                    if kkt_residual(&grad, &alpha, hp.lambda1) <= ALPHA_KKT_TOL {
                        return Ok(alpha);
                    }
                }
            }
        }
        if max_move <= 0.5 * ALPHA_KKT_TOL || sweep + 1 == CD_STALL_SWEEPS {
            let grad = full_gradient_squared(k, &r, &q, hp, nf);
            let res = kkt_residual(&grad, &alpha, hp.lambda1);
            if res <= ALPHA_KKT_TOL {
                return Ok(alpha);
            }
            if !res.is_finite() {
                return Err(Error::AlphaStepDiverged {
                    iters: sweep + 1,
                    residual: res,
                    alpha: alpha.to_vec(),
                });
            }
        }
    }
    // Out of sweeps: the coordinate path is crawling. Hand the current
    // iterate to the accelerated solver, which never ends above it in h.
    fista(k, y, &alpha, b, &LossSpec::squared_error(), hp)
}

fn full_gradient_squared(
    k: &Array2<f64>,
    r: &Array1<f64>,
    q: &Array1<f64>,
    hp: &Hyperparams,
    nf: f64,
) -> Array1<f64> {
    let kr = k.dot(r);
    let mut grad = Array1::zeros(r.len());
    for j in 0..r.len() {
        grad[j] = -2.0 / nf * kr[j] + 2.0 * hp.lambda3 * q[j];
    }
    grad
}

/// ∇ of the smooth part (1/n)ΣL + λ₃αᵀKα is K·v with
/// v = (1/n)L'(y, Kα + b) + 2λ₃α; `ka` caches K·α.
fn smooth_gradient(
    k: &Array2<f64>,
    y: &Array1<f64>,
    alpha: &Array1<f64>,
    ka: &Array1<f64>,
    b: f64,
    loss: &LossSpec,
    hp: &Hyperparams,
) -> Array1<f64> {
    let n = y.len();
    let nf = n as f64;
    let mut v = Array1::zeros(n);
    for i in 0..n {
        v[i] = loss.derivative(y[i], ka[i] + b) / nf + 2.0 * hp.lambda3 * alpha[i];
    }
    k.dot(&v)
}

fn smooth_value(
    y: &Array1<f64>,
    alpha: &Array1<f64>,
    ka: &Array1<f64>,
    b: f64,
    loss: &LossSpec,
    hp: &Hyperparams,
) -> f64 {
    let n = y.len();
    let mut fit = 0.0;
    for i in 0..n {
        fit += loss.value(y[i], ka[i] + b);
    }
    fit / n as f64 + hp.lambda3 * alpha.dot(ka)
}

/// Active-set Newton for the huberized hinge (any λ₁ ≥ 0). The loss is
/// piecewise quadratic in f, so freezing each sample's piece (flat margin,
/// quadratic transition, linear tail) and the sign pattern of α makes h an
/// exact quadratic whose stationarity system is
///
///   M·αₛ = rhs,  M = (1/(nδ)) KₛᵀD_Q Kₛ + 2λ₃Kₛₛ,
///   rhs_j = (1/(nδ)) Σ_{i∈Q} K_ij (y_i − b) + (1/n) Σ_{i∈lin} K_ij y_i − λ₁s_j,
///
/// with D_Q selecting the in-transition samples. The loss is C¹, so the
/// frozen model agrees with h to first order at the expansion point and the
/// Newton direction is a descent direction for h itself: each round takes
/// the largest backtracked step toward the model minimizer (capped at the
/// first sign flip when λ₁ > 0, which zeroes and drops that coordinate),
/// then reclassifies pieces from the fresh margins. Rounds end when the
/// fresh-gradient KKT conditions hold; for λ₁ > 0 the worst violators enter
/// the active set each round.
///
/// Purely an accelerator: `Ok(None)` (budget exhausted, singular system, or
/// no step along the proposal decreasing h) sends the instance to the
/// accelerated proximal-gradient loop instead.
fn hinge_piecewise_newton(
    k: &Array2<f64>,
    y: &Array1<f64>,
    alpha0: &Array1<f64>,
    b: f64,
    loss: &LossSpec,
    hp: &Hyperparams,
) -> Result<Option<Array1<f64>>> {
    const HN_MAX_ROUNDS: usize = 150;
    const HN_MAX_BACKTRACKS: usize = 40;
    const HN_ADD_PER_ROUND: usize = 8;

    let n = y.len();
    let nf = n as f64;
    let delta = loss.huber_delta;
    let l1 = hp.lambda1;

    let mut alpha = alpha0.clone();
    let mut ka = k.dot(&alpha);
    let h0 =
        smooth_value(y, &alpha, &ka, b, loss, hp) + l1 * alpha.iter().map(|v| v.abs()).sum::<f64>();
    let mut h_cur = h0;

    let mut active: Vec<usize>;
    let mut signs: Vec<f64>;
    if l1 == 0.0 {
        active = (0..n).collect();
        signs = vec![0.0; n];
    } else {
        active = (0..n).filter(|&j| alpha[j] != 0.0).collect();
        signs = active.iter().map(|&j| alpha[j].signum()).collect();
    }

    for _ in 0..HN_MAX_ROUNDS {
        ka = k.dot(&alpha);
        let grad = smooth_gradient(k, y, &alpha, &ka, b, loss, hp);
        if kkt_residual(&grad, &alpha, l1) <= ALPHA_KKT_TOL {
            return Ok(if h_cur <= h0 { Some(alpha) } else { None });
        }
        if l1 > 0.0 {
            for (ai, &j) in active.iter().enumerate() {
                if alpha[j] != 0.0 {
                    signs[ai] = alpha[j].signum();
                }
            }
            let mut violators: Vec<(f64, usize)> = (0..n)
                .filter(|&j| alpha[j] == 0.0 && !active.contains(&j))
                .map(|j| ((grad[j].abs() - l1).max(0.0), j))
                .filter(|&(v, _)| v > 0.0)
                .collect();
            violators.sort_by(|a, c| c.0.total_cmp(&a.0).then(a.1.cmp(&c.1)));
            if !violators.is_empty() {
                let cut = 0.5 * violators[0].0;
                for &(v, j) in violators.iter().take(HN_ADD_PER_ROUND) {
                    if v >= cut {
                        active.push(j);
                        signs.push(-grad[j].signum());
                    }
                }
            }
        }
        if active.is_empty() {
            return Ok(None);
        }
        let dim = active.len();

        // Piece sets from the current margins.
        let mut quad = Vec::new();
        let mut lin = Vec::new();
        for i in 0..n {
            let u = y[i] * (ka[i] + b);
            if u >= 1.0 {
                // flat: no contribution
            } else if u > 1.0 - delta {
                quad.push(i);
            } else {
                lin.push(i);
            }
        }

        // Rows of K over the transition samples, restricted to S.
        let mut kq = vec![0.0f64; quad.len() * dim];
        for (qi, &i) in quad.iter().enumerate() {
            let row = k.row(i);
            let row = row.to_slice().expect("gram rows are contiguous");
            for (aj, &j) in active.iter().enumerate() {
                kq[qi * dim + aj] = row[j];
            }
        }
        let mut m = DMatrix::zeros(dim, dim);
        for aj in 0..dim {
            for ak in aj..dim {
                let mut s = 0.0;
                for qi in 0..quad.len() {
                    s += kq[qi * dim + aj] * kq[qi * dim + ak];
                }
                let v = s / (nf * delta) + 2.0 * hp.lambda3 * k[[active[aj], active[ak]]];
                m[(aj, ak)] = v;
                m[(ak, aj)] = v;
            }
        }
        let mut rhs = DVector::zeros(dim);
        for aj in 0..dim {
            let mut s = 0.0;
            for (qi, &i) in quad.iter().enumerate() {
                s += kq[qi * dim + aj] * (y[i] - b);
            }
            s /= nf * delta;
            let col = active[aj];
            for &i in &lin {
                s += k[[i, col]] * y[i] / nf;
            }
            rhs[aj] = s - l1 * signs[aj];
        }
        let Some(sol) = solve_spd_jittered(&m, &rhs) else {
            return Ok(None);
        };
        if sol.iter().any(|v| !v.is_finite()) {
            return Ok(None);
        }

        // Direction and its fitted-value image.
        let mut kd: Array1<f64> = Array1::zeros(n);
        let mut d = vec![0.0f64; dim];
        for (aj, &j) in active.iter().enumerate() {
            let dj = sol[aj] - alpha[j];
            d[aj] = dj;
            if dj != 0.0 {
                let col = k.row(j);
                let col = col.to_slice().expect("gram rows are contiguous");
                for i in 0..n {
                    kd[i] += dj * col[i];
                }
            }
        }

        // Cap the step at the first sign flip (λ₁ > 0 only); piece
        // boundaries need no cap because the line evaluation below is exact
        // across them.
        let mut t_max = 1.0f64;
        let mut sign_cross: Option<usize> = None;
        if l1 > 0.0 {
            for ai in 0..dim {
                let cur = alpha[active[ai]];
                let new = sol[ai];
                if new * signs[ai] > 0.0 || d[ai] == 0.0 {
                    continue;
                }
                let t = -cur / d[ai];
                if t.is_finite() && t > 0.0 && t < t_max {
                    t_max = t;
                    sign_cross = Some(ai);
                }
            }
        }

        // Exact h along the ray: O(n) margin pass plus the closed-form
        // quadratic αᵀKα = s0 + t·c1 + t²·c2 (support stays inside S).
        let s0 = alpha.dot(&ka);
        let mut c1 = 0.0;
        let mut c2 = 0.0;
        for (aj, &j) in active.iter().enumerate() {
            c1 += d[aj] * ka[j] + alpha[j] * kd[j];
            c2 += d[aj] * kd[j];
        }
        let h_line = |t: f64| -> f64 {
            let mut fit = 0.0;
            for i in 0..n {
                fit += loss.value(y[i], ka[i] + t * kd[i] + b);
            }
            let mut l1n = 0.0;
            if l1 > 0.0 {
                for (aj, &j) in active.iter().enumerate() {
                    l1n += (alpha[j] + t * d[aj]).abs();
                }
            }
            fit / nf + hp.lambda3 * (s0 + t * c1 + t * t * c2) + l1 * l1n
        };

        let mut accepted = None;
        let mut t = t_max;
        for _ in 0..HN_MAX_BACKTRACKS {
            let h_t = h_line(t);
            if h_t.is_finite() && h_t < h_cur {
                accepted = Some((t, h_t));
                break;
            }
            t *= 0.5;
        }
        let Some((t, h_new)) = accepted else {
            return Ok(None);
        };
        for (aj, &j) in active.iter().enumerate() {
            alpha[j] += t * d[aj];
        }
        if t == t_max {
            if let Some(ai) = sign_cross {
                alpha[active[ai]] = 0.0;
                active.swap_remove(ai);
                signs.swap_remove(ai);
            }
        }
        h_cur = h_new;
    }
    Ok(None)
}

/// Accelerated proximal gradient (FISTA with backtracking and gradient
/// restarts) for the margin losses. Terminates only from a point whose h-value
/// does not exceed the warm start's, so the step never increases the
/// objective.
fn fista(
    k: &Array2<f64>,
    y: &Array1<f64>,
    alpha0: &Array1<f64>,
    b: f64,
    loss: &LossSpec,
    hp: &Hyperparams,
) -> Result<Array1<f64>> {
    let n = y.len();
    let nf = n as f64;
    let l1 = hp.lambda1;

    let sigma = spectral_bound(k, 30);
    let lip = loss.curvature_bound() / nf * sigma * sigma + 2.0 * hp.lambda3 * sigma;
    let mut t = 1.0 / lip.max(1e-12);

    let mut x = alpha0.clone();
    let mut kx = k.dot(&x);
    let h0 = smooth_value(y, &x, &kx, b, loss, hp) + l1 * x.iter().map(|a| a.abs()).sum::<f64>();
    let mut hx = h0;
    let mut z = x.clone();
    let mut kz = kx.clone();
    let mut theta = 1.0f64;

    for it in 0..FISTA_MAX_ITERS {
        if it % FISTA_CHECK_EVERY == 0 && hx <= h0 {
            let g = smooth_gradient(k, y, &x, &kx, b, loss, hp);
            if kkt_residual(&g, &x, l1) <= ALPHA_KKT_TOL {
                return Ok(x);
            }
        }

        // The accelerated endgame on a near-rank-deficient gram crawls; the
        // active-set Newton proposal snaps straight to the vertex when the
        // support and signs have settled (squared error only — the margin
        // losses have no closed-form stationarity system).
        if it > 0
            && it % FISTA_POLISH_EVERY == 0
            && l1 > 0.0
            && loss.kind == LossKind::SquaredError
        {
            if let Some(polished) = active_set_polish(k, y, b, hp, &x) {
                let kp = k.dot(&polished);
                let h_pol = smooth_value(y, &polished, &kp, b, loss, hp)
                    + l1 * polished.iter().map(|a| a.abs()).sum::<f64>();
                if h_pol <= hx {
                    x = polished;
                    kx = kp;
                    hx = h_pol;
                    z = x.clone();
                    kz = kx.clone();
                    theta = 1.0;
                    if hx <= h0 {
                        let g = smooth_gradient(k, y, &x, &kx, b, loss, hp);
                        if kkt_residual(&g, &x, l1) <= ALPHA_KKT_TOL {
                            return Ok(x);
                        }
                    }
                }
            }
        }

        let gz = smooth_gradient(k, y, &z, &kz, b, loss, hp);
        let sz = smooth_value(y, &z, &kz, b, loss, hp);

        // Backtracking: shrink t until the quadratic upper bound holds.
        let (cand, kcand, scand) = loop {
            let cand = Array1::from_shape_fn(n, |j| soft_threshold(z[j] - t * gz[j], t * l1));
            let kcand = k.dot(&cand);
            let scand = smooth_value(y, &cand, &kcand, b, loss, hp);
            let diff = &cand - &z;
            let bound = sz + gz.dot(&diff) + diff.dot(&diff) / (2.0 * t);
            if scand <= bound + 1e-12 * (1.0 + scand.abs()) {
                break (cand, kcand, scand);
            }
            t *= 0.5;
            if t < 1e-18 {
                return Err(Error::AlphaStepDiverged {
                    iters: it,
                    residual: f64::NAN,
                    alpha: x.to_vec(),
                });
            }
        };
        let h_new = scand + l1 * cand.iter().map(|a| a.abs()).sum::<f64>();
        if !h_new.is_finite() {
            return Err(Error::AlphaStepDiverged {
                iters: it,
                residual: f64::NAN,
                alpha: x.to_vec(),
            });
        }

        // Restart momentum when it points against progress or h increased.
        let momentum_bad = {
            let mut s = 0.0;
            for j in 0..n {
                s += (z[j] - cand[j]) * (cand[j] - x[j]);
            }
            s > 0.0
        };
        if momentum_bad || h_new > hx {
            theta = 1.0;
            z = cand.clone();
            kz = kcand.clone();
        } else {
            let theta_new = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
            let beta = (theta - 1.0) / theta_new;
            z = Array1::from_shape_fn(n, |j| cand[j] + beta * (cand[j] - x[j]));
            kz = Array1::from_shape_fn(n, |j| kcand[j] + beta * (kcand[j] - kx[j]));
            theta = theta_new;
        }
        x = cand;
        kx = kcand;
        hx = h_new;
    }

    let g = smooth_gradient(k, y, &x, &kx, b, loss, hp);
    Err(Error::AlphaStepDiverged {
        iters: FISTA_MAX_ITERS,
        residual: kkt_residual(&g, &x, l1),
        alpha: x.to_vec(),
    })
}
