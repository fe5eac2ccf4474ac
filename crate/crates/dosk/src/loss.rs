//! Loss functions L(y, f) with first derivatives in f.
//!
//! All three kinds are convex and continuously differentiable in f, which is
//! what the line-search convergence argument needs. The huberized hinge is the
//! standard three-branch smoothing of the SVM hinge with transition width δ:
//! flat for margins u = yf ≥ 1, quadratic on (1−δ, 1), linear below.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SquaredError,
    HuberizedHinge,
    Deviance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Transition width of the huberized hinge; ignored by the other kinds.
    pub huber_delta: f64,
}

pub const DEFAULT_HUBER_DELTA: f64 = 0.5;

impl LossSpec {
    pub fn squared_error() -> Self {
        LossSpec {
            kind: LossKind::SquaredError,
            huber_delta: DEFAULT_HUBER_DELTA,
        }
    }

    pub fn huberized_hinge(delta: f64) -> Self {
        LossSpec {
            kind: LossKind::HuberizedHinge,
            huber_delta: delta,
        }
    }

    pub fn deviance() -> Self {
        LossSpec {
            kind: LossKind::Deviance,
            huber_delta: DEFAULT_HUBER_DELTA,
        }
    }

    /// Margin-based losses expect ±1 labels and imply a classification task.
    pub fn is_classification(&self) -> bool {
        matches!(self.kind, LossKind::HuberizedHinge | LossKind::Deviance)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == LossKind::HuberizedHinge
            && !(self.huber_delta > 0.0 && self.huber_delta.is_finite())
        {
            return Err(Error::InvalidConfig(format!(
                "huber_delta must be positive and finite, got {}",
                self.huber_delta
            )));
        }
        Ok(())
    }

    /// Checks that every label is ±1 when the loss is margin-based.
    pub fn validate_labels<'a>(&self, labels: impl IntoIterator<Item = &'a f64>) -> Result<()> {
        if self.is_classification() {
            for &y in labels {
                if y != 1.0 && y != -1.0 {
                    return Err(Error::InvalidLabel(y));
                }
            }
        }
        Ok(())
    }

    /// Largest curvature sup_f L''(y, f); used for proximal-gradient step sizes.
    pub(crate) fn curvature_bound(&self) -> f64 {
        match self.kind {
            LossKind::SquaredError => 2.0,
            LossKind::HuberizedHinge => 1.0 / self.huber_delta,
            LossKind::Deviance => 0.25,
        }
    }

    /// L(y, f).
    #[inline]
    pub fn value(&self, y: f64, f: f64) -> f64 {
        match self.kind {
            LossKind::SquaredError => {
                let r = y - f;
                r * r
            }
            LossKind::HuberizedHinge => {
                let u = y * f;
                let d = self.huber_delta;
                if u >= 1.0 {
                    0.0
                } else if u > 1.0 - d {
                    let t = 1.0 - u;
                    t * t / (2.0 * d)
                } else {
                    (1.0 - u) - d / 2.0
                }
            }
            LossKind::Deviance => softplus(-y * f),
        }
    }

    /// ∂L/∂f, continuous in f.
    #[inline]
    pub fn derivative(&self, y: f64, f: f64) -> f64 {
        match self.kind {
            LossKind::SquaredError => 2.0 * (f - y),
            LossKind::HuberizedHinge => {
                let u = y * f;
                let d = self.huber_delta;
                if u >= 1.0 {
                    0.0
                } else if u > 1.0 - d {
                    -y * (1.0 - u) / d
                } else {
                    -y
                }
            }
            // d/df log(1 + exp(−yf)) = −y σ(−yf)
            LossKind::Deviance => -y * sigmoid(-y * f),
        }
    }
}

/// Numerically stable log(1 + exp(t)).
#[inline]
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_kinds() -> Vec<LossSpec> {
        vec![
            LossSpec::squared_error(),
            LossSpec::huberized_hinge(0.5),
            LossSpec::deviance(),
        ]
    }

    /// Draws a (y, f) pair valid for the given loss.
    fn sample_point(spec: &LossSpec, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let y = if spec.is_classification() {
            if rng.random_range(0.0..1.0) < 0.5 {
                -1.0
            } else {
                1.0
            }
        } else {
            rng.random_range(-3.0..3.0)
        };
        (y, rng.random_range(-3.0..3.0))
    }

    #[test]
    fn squared_error_values() {
        let l = LossSpec::squared_error();
        assert_eq!(l.value(2.0, 2.0), 0.0);
        assert_eq!(l.value(0.0, 1.0), 1.0);
        assert_eq!(l.derivative(1.0, 1.0), 0.0);
        assert_eq!(l.derivative(0.0, 1.0), 2.0);
    }

    #[test]
    fn huberized_hinge_branches() {
        let l = LossSpec::huberized_hinge(0.5);
        // Margin ≥ 1: flat zero.
        assert_eq!(l.value(1.0, 1.5), 0.0);
        assert_eq!(l.derivative(1.0, 1.5), 0.0);
        assert_eq!(l.derivative(-1.0, -2.0), 0.0);
        // Linear branch: u = 0 ≤ 1 − δ.
        assert!((l.value(1.0, 0.0) - 0.75).abs() < 1e-15);
        assert_eq!(l.derivative(1.0, 0.0), -1.0);
        // Quadratic branch: u = 0.75 ∈ (0.5, 1).
        assert!((l.value(1.0, 0.75) - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn deviance_values() {
        let l = LossSpec::deviance();
        assert!((l.value(1.0, 0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((l.derivative(1.0, 0.0) + 0.5).abs() < 1e-15);
        // Extreme margins stay finite.
        assert!(l.value(1.0, -1000.0).is_finite());
        assert!(l.value(-1.0, 1000.0).is_finite());
    }

    #[test]
    fn huberized_hinge_is_c1_at_breakpoints() {
        for delta in [0.25, 0.5, 1.0] {
            let l = LossSpec::huberized_hinge(delta);
            for y in [1.0, -1.0] {
                for u_star in [1.0, 1.0 - delta] {
                    let f_star = u_star / y;
                    let eps = 1e-12;
                    let left = l.derivative(y, f_star - eps);
                    let right = l.derivative(y, f_star + eps);
                    assert!(
                        (left - right).abs() <= 1e-11,
                        "derivative jump at u={u_star}, y={y}: {left} vs {right}"
                    );
                    // Value continuity too.
                    let lv = l.value(y, f_star - eps);
                    let rv = l.value(y, f_star + eps);
                    assert!((lv - rv).abs() <= 1e-11);
                }
            }
        }
    }

    #[test]
    fn losses_are_convex_along_random_chords() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for spec in all_kinds() {
            for _ in 0..100 {
                let (y, f1) = sample_point(&spec, &mut rng);
                let f2 = rng.random_range(-3.0..3.0);
                let t = rng.random_range(0.0..1.0);
                let mid = t * f1 + (1.0 - t) * f2;
                let lhs = spec.value(y, mid);
                let rhs = t * spec.value(y, f1) + (1.0 - t) * spec.value(y, f2);
                assert!(lhs <= rhs + 1e-12, "{:?}: {lhs} > {rhs}", spec.kind);
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let h = 1e-6;
        for spec in all_kinds() {
            let mut checked = 0;
            while checked < 100 {
                let (y, f) = sample_point(&spec, &mut rng);
                if spec.kind == LossKind::HuberizedHinge {
                    // Central differences straddle the C¹ (not C²) breakpoints
                    // badly; sample on one branch.
                    let u = y * f;
                    if (u - 1.0).abs() < 1e-3 || (u - (1.0 - spec.huber_delta)).abs() < 1e-3 {
                        continue;
                    }
                }
                let fd = (spec.value(y, f + h) - spec.value(y, f - h)) / (2.0 * h);
                let an = spec.derivative(y, f);
                let tol = 1e-6 * fd.abs().max(1.0);
                assert!(
                    (an - fd).abs() <= tol,
                    "{:?} at y={y}, f={f}: analytic {an} vs fd {fd}",
                    spec.kind
                );
                checked += 1;
            }
        }
    }

    #[test]
    fn label_validation() {
        let hinge = LossSpec::huberized_hinge(0.5);
        assert!(hinge.validate_labels([1.0, -1.0, 1.0].iter()).is_ok());
        assert!(matches!(
            hinge.validate_labels([1.0, 0.5].iter()),
            Err(Error::InvalidLabel(v)) if v == 0.5
        ));
        // Squared error takes any real response.
        let sq = LossSpec::squared_error();
        assert!(sq.validate_labels([3.7, -2.2].iter()).is_ok());
    }

    #[test]
    fn validate_rejects_bad_delta() {
        assert!(LossSpec::huberized_hinge(0.0).validate().is_err());
        assert!(LossSpec::huberized_hinge(-1.0).validate().is_err());
        assert!(LossSpec::huberized_hinge(0.5).validate().is_ok());
    }
}
