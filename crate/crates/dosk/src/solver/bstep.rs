//! Intercept update.
//!
//! With α and w fixed, only the mean-loss term depends on b, so the step
//! minimizes ψ̄(b) = (1/n) Σ L(y_i, f_i + b) over a single scalar. Squared
//! error gives the closed form b = mean(y − f). The huberized hinge and
//! deviance losses are convex and C¹ in b with monotone nondecreasing
//! derivative sum ψ(b) = Σ L'(y_i, f_i + b), so the minimizer is found by
//! bracketing a sign change of ψ and bisecting until |ψ| ≤ [`BSTEP_DERIV_TOL`].

use ndarray::Array1;

use crate::loss::{LossKind, LossSpec};
use crate::solver::BSTEP_DERIV_TOL;
use crate::{Error, Result};

const MAX_BRACKET_DOUBLINGS: usize = 200;
const MAX_BISECTIONS: usize = 500;

pub(crate) fn b_step_impl(
    ka: &Array1<f64>,
    y: &Array1<f64>,
    loss: &LossSpec,
    b0: f64,
) -> Result<f64> {
    let n = y.len();
    if n == 0 {
        return Err(Error::EmptyData("b_step requires n > 0"));
    }
    if ka.len() != n {
        return Err(Error::DimensionMismatch {
            context: "b_step(Kα, y)",
            left: ka.len(),
            right: n,
        });
    }
    match loss.kind {
        LossKind::SquaredError => {
            let mut s = 0.0;
            for i in 0..n {
                s += y[i] - ka[i];
            }
            Ok(s / n as f64)
        }
        LossKind::HuberizedHinge | LossKind::Deviance => {
            // Without both classes ψ never changes sign and the minimizer
            // runs off to ±∞.
            let has_pos = y.iter().any(|v| *v == 1.0);
            let has_neg = y.iter().any(|v| *v == -1.0);
            if !has_pos || !has_neg {
                return Err(Error::MissingClass);
            }
            let psi = |b: f64| -> f64 {
                let mut s = 0.0;
                for i in 0..n {
                    s += loss.derivative(y[i], ka[i] + b);
                }
                s
            };
            bisect(psi, b0)
        }
    }
}

/// Finds b with |ψ(b)| ≤ tolerance for a monotone nondecreasing ψ, starting
/// from a unit bracket around `b0` and doubling its width until the sign
/// change is enclosed.
fn bisect(psi: impl Fn(f64) -> f64, b0: f64) -> Result<f64> {
    let mut lo = b0 - 1.0;
    let mut hi = b0 + 1.0;
    let mut psi_lo = psi(lo);
    let mut psi_hi = psi(hi);
    if psi_lo.abs() <= BSTEP_DERIV_TOL {
        return Ok(lo);
    }
    if psi_hi.abs() <= BSTEP_DERIV_TOL {
        return Ok(hi);
    }
    let mut width = 2.0;
    let mut doublings = 0;
    while psi_lo > 0.0 {
        lo -= width;
        width *= 2.0;
        psi_lo = psi(lo);
        doublings += 1;
        if doublings > MAX_BRACKET_DOUBLINGS || !psi_lo.is_finite() {
            return Err(Error::NonFinite("b_step bracket expansion"));
        }
    }
    while psi_hi < 0.0 {
        hi += width;
        width *= 2.0;
        psi_hi = psi(hi);
        doublings += 1;
        if doublings > MAX_BRACKET_DOUBLINGS || !psi_hi.is_finite() {
            return Err(Error::NonFinite("b_step bracket expansion"));
        }
    }

    let mut mid = 0.5 * (lo + hi);
    for _ in 0..MAX_BISECTIONS {
        mid = 0.5 * (lo + hi);
        let pm = psi(mid);
        if pm.abs() <= BSTEP_DERIV_TOL {
            return Ok(mid);
        }
        if pm > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= f64::EPSILON * (1.0 + mid.abs()) {
            break;
        }
    }
    // The interval has collapsed to machine width; accept the midpoint if the
    // derivative sum is as small as float summation allows.
    if psi(mid).abs() <= 1e-6 {
        Ok(mid)
    } else {
        Err(Error::NonFinite("b_step bisection stalled"))
    }
}
