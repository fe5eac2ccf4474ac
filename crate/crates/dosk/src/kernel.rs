//! Variable-weighted kernels: evaluation, gram matrices, gradients in the
//! weight vector, and the local linearization used by the w-step.
//!
//! Every family applies a per-coordinate weight w ∈ [0,1]^p to its inputs, so a
//! zero weight removes the corresponding predictor entirely:
//!
//! ```text
//! linear     K_w(x1,x2) = Σ_k w_k² x1_k x2_k
//! polynomial K_w(x1,x2) = (c + Σ_k w_k² x1_k x2_k)^d
//! gaussian   K_w(x1,x2) = exp(−γ Σ_k (w_k x1_k − w_k x2_k)²)
//! laplacian  K_w(x1,x2) = exp(−γ Σ_k |w_k x1_k − w_k x2_k|)
//! ```

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Kernel family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Linear,
    Polynomial,
    Gaussian,
    Laplacian,
}

/// A kernel family together with its hyperparameters. `gamma` is the
/// bandwidth for Gaussian/Laplacian and ignored otherwise; `offset_c` and
/// `degree_d` belong to the polynomial family and are held fixed (not tuned).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub gamma: f64,
    pub offset_c: f64,
    pub degree_d: u32,
}

impl KernelSpec {
    pub fn linear() -> Self {
        KernelSpec {
            family: KernelFamily::Linear,
            gamma: 1.0,
            offset_c: 0.0,
            degree_d: 1,
        }
    }

    pub fn polynomial(offset_c: f64, degree_d: u32) -> Self {
        KernelSpec {
            family: KernelFamily::Polynomial,
            gamma: 1.0,
            offset_c,
            degree_d,
        }
    }

    pub fn gaussian(gamma: f64) -> Self {
        KernelSpec {
            family: KernelFamily::Gaussian,
            gamma,
            offset_c: 0.0,
            degree_d: 1,
        }
    }

    pub fn laplacian(gamma: f64) -> Self {
        KernelSpec {
            family: KernelFamily::Laplacian,
            gamma,
            offset_c: 0.0,
            degree_d: 1,
        }
    }

    /// Returns a copy with a different bandwidth (used by the tuning grid).
    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    /// True if the family actually consumes the bandwidth γ.
    pub fn uses_gamma(&self) -> bool {
        matches!(self.family, KernelFamily::Gaussian | KernelFamily::Laplacian)
    }

    pub fn validate(&self) -> Result<()> {
        if self.uses_gamma() && !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "kernel gamma must be positive and finite, got {}",
                self.gamma
            )));
        }
        if self.family == KernelFamily::Polynomial {
            if self.degree_d < 1 {
                return Err(Error::InvalidConfig(
                    "polynomial degree must be >= 1".into(),
                ));
            }
            if !self.offset_c.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "polynomial offset must be finite, got {}",
                    self.offset_c
                )));
            }
        }
        Ok(())
    }
}

fn check_len(context: &'static str, left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::DimensionMismatch {
            context,
            left,
            right,
        });
    }
    Ok(())
}

/// Weighted inner product Σ_k w_k² x1_k x2_k shared by linear/polynomial.
#[inline]
fn weighted_dot(w: &[f64], x1: &[f64], x2: &[f64]) -> f64 {
    // Grouped so that swapping x1 and x2 is bitwise neutral, which keeps gram
    // matrices exactly symmetric.
    let mut s = 0.0;
    for k in 0..w.len() {
        s += (w[k] * w[k]) * (x1[k] * x2[k]);
    }
    s
}

/// Slice-level kernel evaluation; dimensions are the caller's responsibility.
#[inline]
pub(crate) fn eval_slices(spec: &KernelSpec, w: &[f64], x1: &[f64], x2: &[f64]) -> f64 {
    match spec.family {
        KernelFamily::Linear => weighted_dot(w, x1, x2),
        KernelFamily::Polynomial => {
            (spec.offset_c + weighted_dot(w, x1, x2)).powi(spec.degree_d as i32)
        }
        KernelFamily::Gaussian => {
            let mut s = 0.0;
            for k in 0..w.len() {
                let d = w[k] * (x1[k] - x2[k]);
                s += d * d;
            }
            (-spec.gamma * s).exp()
        }
        KernelFamily::Laplacian => {
            let mut s = 0.0;
            for k in 0..w.len() {
                s += (w[k] * (x1[k] - x2[k])).abs();
            }
            (-spec.gamma * s).exp()
        }
    }
}

/// Writes ∂K_w(x1,x2)/∂w_k into `out` and returns the kernel value itself.
///
/// For the Laplacian the partial at w_k|x1_k − x2_k| = 0 is defined as 0 (the
/// symmetric subgradient element), which keeps the w-step well-posed.
#[inline]
pub(crate) fn grad_slices(
    spec: &KernelSpec,
    w: &[f64],
    x1: &[f64],
    x2: &[f64],
    out: &mut [f64],
) -> f64 {
    match spec.family {
        KernelFamily::Linear => {
            for k in 0..w.len() {
                out[k] = 2.0 * w[k] * (x1[k] * x2[k]);
            }
            weighted_dot(w, x1, x2)
        }
        KernelFamily::Polynomial => {
            let base = spec.offset_c + weighted_dot(w, x1, x2);
            let d = spec.degree_d;
            let scale = d as f64 * base.powi(d as i32 - 1);
            for k in 0..w.len() {
                out[k] = scale * 2.0 * w[k] * (x1[k] * x2[k]);
            }
            base.powi(d as i32)
        }
        KernelFamily::Gaussian => {
            let mut s = 0.0;
            for k in 0..w.len() {
                let d = x1[k] - x2[k];
                s += w[k] * w[k] * d * d;
            }
            let kv = (-spec.gamma * s).exp();
            for k in 0..w.len() {
                let d = x1[k] - x2[k];
                out[k] = -2.0 * spec.gamma * w[k] * d * d * kv;
            }
            kv
        }
        KernelFamily::Laplacian => {
            let mut s = 0.0;
            for k in 0..w.len() {
                s += (w[k] * (x1[k] - x2[k])).abs();
            }
            let kv = (-spec.gamma * s).exp();
            for k in 0..w.len() {
                let d = (x1[k] - x2[k]).abs();
                out[k] = if w[k] * d == 0.0 {
                    0.0
                } else {
                    -spec.gamma * d * kv
                };
            }
            kv
        }
    }
}

/// Evaluates the weighted kernel K_w(x1, x2).
pub fn eval_weighted_kernel(
    spec: &KernelSpec,
    w: &Array1<f64>,
    x1: &Array1<f64>,
    x2: &Array1<f64>,
) -> Result<f64> {
    check_len("eval_weighted_kernel(w, x1)", w.len(), x1.len())?;
    check_len("eval_weighted_kernel(x1, x2)", x1.len(), x2.len())?;
    Ok(eval_slices(
        spec,
        w.as_slice().unwrap(),
        x1.as_slice().unwrap(),
        x2.as_slice().unwrap(),
    ))
}

/// Gradient of K_w(x1, x2) with respect to w.
pub fn kernel_gradient(
    spec: &KernelSpec,
    w: &Array1<f64>,
    x1: &Array1<f64>,
    x2: &Array1<f64>,
) -> Result<Array1<f64>> {
    check_len("kernel_gradient(w, x1)", w.len(), x1.len())?;
    check_len("kernel_gradient(x1, x2)", x1.len(), x2.len())?;
    let mut out = Array1::zeros(w.len());
    grad_slices(
        spec,
        w.as_slice().unwrap(),
        x1.as_slice().unwrap(),
        x2.as_slice().unwrap(),
        out.as_slice_mut().unwrap(),
    );
    Ok(out)
}

fn row(x: &Array2<f64>, i: usize) -> &[f64] {
    x.row(i).to_slice().expect("row-major layout")
}

/// Dense symmetric gram matrix K[i][j] = K_w(x_i, x_j).
pub fn gram_matrix(spec: &KernelSpec, w: &Array1<f64>, x: &Array2<f64>) -> Result<Array2<f64>> {
    check_len("gram_matrix(w, x columns)", w.len(), x.ncols())?;
    let n = x.nrows();
    let ws = w.as_slice().unwrap();
    let mut k = Array2::zeros((n, n));
    for i in 0..n {
        let xi = row(x, i);
        for j in i..n {
            let v = eval_slices(spec, ws, xi, row(x, j));
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    Ok(k)
}

/// First-order model of w ↦ K_w·α around an anchor weight vector:
/// `A` has row i = Σ_j α_j ∇_w K_w(x_i,x_j)ᵀ and
/// `B(i,j) = K_w(x_i,x_j) − ∇_w K_w(x_i,x_j)ᵀ w` evaluated at the anchor, so
/// `A·w1 + B·α ≈ K_{w1}·α`, with equality at w1 = anchor.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub anchor_w: Array1<f64>,
}

impl Linearization {
    /// Evaluates the linear model A·w1 + B·alpha.
    pub fn reconstruct(&self, w1: &Array1<f64>, alpha: &Array1<f64>) -> Result<Array1<f64>> {
        check_len("reconstruct(w1, anchor)", w1.len(), self.anchor_w.len())?;
        check_len("reconstruct(alpha, B rows)", alpha.len(), self.b.nrows())?;
        Ok(self.a.dot(w1) + self.b.dot(alpha))
    }
}

/// Builds the linearization of w ↦ K_w·α at `w0`, reusing a precomputed gram
/// when the caller already has it.
pub(crate) fn linearize_with_gram(
    spec: &KernelSpec,
    w0: &Array1<f64>,
    alpha: &Array1<f64>,
    x: &Array2<f64>,
    gram: Option<&Array2<f64>>,
) -> Result<Linearization> {
    check_len("linearize(w0, x columns)", w0.len(), x.ncols())?;
    check_len("linearize(alpha, x rows)", alpha.len(), x.nrows())?;
    let n = x.nrows();
    let p = x.ncols();
    let ws = w0.as_slice().unwrap();
    let al = alpha.as_slice().unwrap();
    let mut a = Array2::zeros((n, p));
    let mut b = Array2::zeros((n, n));
    let mut g = vec![0.0; p];
    for i in 0..n {
        let xi = row(x, i);
        for j in i..n {
            let kv = grad_slices(spec, ws, xi, row(x, j), &mut g);
            let kv = match gram {
                Some(k) => k[[i, j]],
                None => kv,
            };
            let mut gw = 0.0;
            for t in 0..p {
                gw += g[t] * ws[t];
            }
            let bij = kv - gw;
            b[[i, j]] = bij;
            b[[j, i]] = bij;
            // A accumulates α_j ∇K(x_i, x_j) over j; the gradient is symmetric
            // in (x_i, x_j) for every family, so one evaluation feeds both rows.
            for t in 0..p {
                a[[i, t]] += al[j] * g[t];
            }
            if i != j {
                for t in 0..p {
                    a[[j, t]] += al[i] * g[t];
                }
            }
        }
    }
    Ok(Linearization {
        a,
        b,
        anchor_w: w0.clone(),
    })
}

/// Builds the linearization of w ↦ K_w·α at `w0`.
pub fn linearize(
    spec: &KernelSpec,
    w0: &Array1<f64>,
    alpha: &Array1<f64>,
    x: &Array2<f64>,
) -> Result<Linearization> {
    linearize_with_gram(spec, w0, alpha, x, None)
}

/// Median-distance bandwidth heuristic: γ = 1/(2σ̂²) where σ̂ is the median
/// pairwise Euclidean distance between rows of `x`. Degenerate inputs (fewer
/// than two rows, or all rows identical) fall back to γ = 1.
pub fn median_heuristic_gamma(x: &Array2<f64>) -> f64 {
    let n = x.nrows();
    if n < 2 {
        return 1.0;
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut s = 0.0;
            for t in 0..x.ncols() {
                let d = x[[i, t]] - x[[j, t]];
                s += d * d;
            }
            dists.push(s.sqrt());
        }
    }
    dists.sort_by(|a, b| a.total_cmp(b));
    let m = dists.len();
    let median = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    if median > 0.0 && median.is_finite() {
        1.0 / (2.0 * median * median)
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_specs() -> Vec<KernelSpec> {
        vec![
            KernelSpec::linear(),
            KernelSpec::polynomial(1.0, 3),
            KernelSpec::gaussian(0.7),
            KernelSpec::laplacian(0.9),
        ]
    }

    /// Independent central-difference oracle for ∂K/∂w_k.
    fn fd_gradient(spec: &KernelSpec, w: &Array1<f64>, x1: &Array1<f64>, x2: &Array1<f64>, h: f64) -> Array1<f64> {
        let mut out = Array1::zeros(w.len());
        for k in 0..w.len() {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[k] += h;
            wm[k] -= h;
            let fp = eval_weighted_kernel(spec, &wp, x1, x2).unwrap();
            let fm = eval_weighted_kernel(spec, &wm, x1, x2).unwrap();
            out[k] = (fp - fm) / (2.0 * h);
        }
        out
    }

    #[test]
    fn eval_dimension_mismatch_is_an_error() {
        let spec = KernelSpec::gaussian(1.0);
        let err = eval_weighted_kernel(&spec, &arr1(&[1.0]), &arr1(&[1.0, 2.0]), &arr1(&[1.0, 2.0]))
            .unwrap_err();
        match err {
            Error::DimensionMismatch { left, right, .. } => {
                assert_eq!((left, right), (1, 2));
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn gaussian_zero_weights_give_one() {
        let spec = KernelSpec::gaussian(3.3);
        let k = eval_weighted_kernel(
            &spec,
            &arr1(&[0.0, 0.0]),
            &arr1(&[5.0, -1.0]),
            &arr1(&[-2.0, 9.0]),
        )
        .unwrap();
        assert_eq!(k, 1.0);
    }

    #[test]
    fn linear_zero_weights_give_zero() {
        let spec = KernelSpec::linear();
        let k = eval_weighted_kernel(
            &spec,
            &arr1(&[0.0, 0.0]),
            &arr1(&[5.0, -1.0]),
            &arr1(&[-2.0, 9.0]),
        )
        .unwrap();
        assert_eq!(k, 0.0);
    }

    #[test]
    fn gaussian_hand_example() {
        // γ=0.5, w=(1,0): only the first coordinate survives, squared gap 4.
        let spec = KernelSpec::gaussian(0.5);
        let k = eval_weighted_kernel(
            &spec,
            &arr1(&[1.0, 0.0]),
            &arr1(&[1.0, 2.0]),
            &arr1(&[3.0, 5.0]),
        )
        .unwrap();
        assert!((k - (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn gaussian_gradient_identical_points_is_zero() {
        let spec = KernelSpec::gaussian(2.0);
        let x = arr1(&[0.4, -1.2, 3.0]);
        let g = kernel_gradient(&spec, &arr1(&[0.5, 0.6, 0.7]), &x, &x).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gaussian_gradient_hand_example() {
        let spec = KernelSpec::gaussian(0.5);
        let g = kernel_gradient(
            &spec,
            &arr1(&[1.0, 0.0]),
            &arr1(&[1.0, 2.0]),
            &arr1(&[3.0, 5.0]),
        )
        .unwrap();
        let expected = -4.0 * (-2.0f64).exp();
        assert!((g[0] - expected).abs() < 1e-12, "got {}", g[0]);
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn linear_gradient_hand_example() {
        let spec = KernelSpec::linear();
        let g = kernel_gradient(
            &spec,
            &arr1(&[1.0, 1.0]),
            &arr1(&[1.0, 2.0]),
            &arr1(&[3.0, 4.0]),
        )
        .unwrap();
        assert!((g[0] - 6.0).abs() < 1e-12);
        assert!((g[1] - 16.0).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for spec in all_specs() {
            for _ in 0..20 {
                let p = rng.random_range(1..5usize);
                let w = Array1::from_iter((0..p).map(|_| rng.random_range(0.15..0.95)));
                let x1 = Array1::from_iter((0..p).map(|_| rng.random_range(-2.0..2.0)));
                // Keep coordinate gaps away from the Laplacian kink so the
                // finite-difference oracle stays on one smooth branch.
                let x2 = Array1::from_iter((0..p).map(|k| {
                    let gap: f64 = rng.random_range(0.15..1.5);
                    let sign = if rng.random_range(0.0..1.0) < 0.5 { -1.0 } else { 1.0 };
                    x1[k] + sign * gap
                }));
                let analytic = kernel_gradient(&spec, &w, &x1, &x2).unwrap();
                let fd = fd_gradient(&spec, &w, &x1, &x2, 1e-6);
                for k in 0..p {
                    let tol = 1e-8f64.max(1e-5 * fd[k].abs());
                    assert!(
                        (analytic[k] - fd[k]).abs() <= tol,
                        "{:?} coord {k}: analytic {} vs fd {}",
                        spec.family,
                        analytic[k],
                        fd[k]
                    );
                }
            }
        }
    }

    #[test]
    fn zero_weight_screens_out_coordinate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for spec in all_specs() {
            for _ in 0..10 {
                let w = arr1(&[rng.random_range(0.1..1.0), 0.0, rng.random_range(0.1..1.0)]);
                let x1 = arr1(&[
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                ]);
                let x2 = arr1(&[
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                ]);
                let k0 = eval_weighted_kernel(&spec, &w, &x1, &x2).unwrap();
                let mut x1p = x1.clone();
                x1p[1] += rng.random_range(-100.0..100.0);
                let k1 = eval_weighted_kernel(&spec, &w, &x1p, &x2).unwrap();
                assert!((k0 - k1).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn gram_single_gaussian_point_is_one() {
        let spec = KernelSpec::gaussian(0.3);
        let x = arr2(&[[0.2, 0.4, 0.6]]);
        let k = gram_matrix(&spec, &arr1(&[1.0, 1.0, 1.0]), &x).unwrap();
        assert_eq!(k.shape(), &[1, 1]);
        assert_eq!(k[[0, 0]], 1.0);
    }

    #[test]
    fn gram_linear_identity_rows() {
        let spec = KernelSpec::linear();
        let x = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let k = gram_matrix(&spec, &arr1(&[1.0, 1.0]), &x).unwrap();
        assert_eq!(k, arr2(&[[1.0, 0.0], [0.0, 1.0]]));
    }

    #[test]
    fn gram_matches_eval_entrywise_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for spec in all_specs() {
            let n = 8;
            let p = 3;
            let x = Array2::from_shape_fn((n, p), |_| rng.random_range(-1.5..1.5));
            let w = Array1::from_iter((0..p).map(|_| rng.random_range(0.0..1.0)));
            let k = gram_matrix(&spec, &w, &x).unwrap();
            for i in 0..n {
                for j in 0..n {
                    assert_eq!(k[[i, j]], k[[j, i]]);
                    let direct = eval_weighted_kernel(
                        &spec,
                        &w,
                        &x.row(i).to_owned(),
                        &x.row(j).to_owned(),
                    )
                    .unwrap();
                    assert_eq!(k[[i, j]], direct);
                }
            }
        }
    }

    #[test]
    fn gram_is_positive_semidefinite_within_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for spec in all_specs() {
            let n = 25;
            let p = 4;
            let x = Array2::from_shape_fn((n, p), |_| rng.random_range(-1.0..1.0));
            let w = Array1::from_iter((0..p).map(|_| rng.random_range(0.05..1.0)));
            let k = gram_matrix(&spec, &w, &x).unwrap();
            let m = nalgebra::DMatrix::from_fn(n, n, |i, j| k[[i, j]]);
            let eig = m.symmetric_eigen();
            let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(
                min >= -1e-8 * n as f64,
                "{:?}: min eigenvalue {min}",
                spec.family
            );
        }
    }

    #[test]
    fn linearize_zero_alpha_gives_zero_a_and_zero_reconstruction() {
        let spec = KernelSpec::gaussian(0.5);
        let x = arr2(&[[0.1, 0.9], [0.4, 0.2], [0.8, 0.5]]);
        let w0 = arr1(&[0.6, 0.3]);
        let alpha = Array1::zeros(3);
        let lin = linearize(&spec, &w0, &alpha, &x).unwrap();
        assert!(lin.a.iter().all(|v| *v == 0.0));
        let rec = lin.reconstruct(&arr1(&[0.2, 0.9]), &alpha).unwrap();
        assert!(rec.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linearize_anchor_identity_all_families() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for spec in all_specs() {
            let n = 12;
            let p = 3;
            let x = Array2::from_shape_fn((n, p), |_| rng.random_range(-1.0..1.0));
            let w0 = Array1::from_iter((0..p).map(|_| rng.random_range(0.05..1.0)));
            let alpha = Array1::from_iter((0..n).map(|_| rng.random_range(-1.0..1.0)));
            let lin = linearize(&spec, &w0, &alpha, &x).unwrap();
            let k = gram_matrix(&spec, &w0, &x).unwrap();
            let target = k.dot(&alpha);
            let rec = lin.reconstruct(&w0, &alpha).unwrap();
            let scale = 1.0 + target.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for i in 0..n {
                assert!(
                    (rec[i] - target[i]).abs() <= 1e-12 * scale,
                    "{:?} row {i}: {} vs {}",
                    spec.family,
                    rec[i],
                    target[i]
                );
            }
        }
    }

    #[test]
    fn linearize_residual_is_little_o_of_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let spec = KernelSpec::gaussian(0.8);
        let n = 10;
        let p = 3;
        let x = Array2::from_shape_fn((n, p), |_| rng.random_range(-1.0..1.0));
        let w0 = Array1::from_iter((0..p).map(|_| rng.random_range(0.3..0.7)));
        let alpha = Array1::from_iter((0..n).map(|_| rng.random_range(-1.0..1.0)));
        let delta = Array1::from_iter((0..p).map(|_| rng.random_range(-1.0..1.0)));
        let lin = linearize(&spec, &w0, &alpha, &x).unwrap();
        let mut prev_ratio = f64::INFINITY;
        for h in [1e-1, 1e-2, 1e-3] {
            let w1 = &w0 + &(&delta * h);
            let truth = gram_matrix(&spec, &w1, &x).unwrap().dot(&alpha);
            let rec = lin.reconstruct(&w1, &alpha).unwrap();
            let resid = (&truth - &rec).mapv(|v| v * v).sum().sqrt();
            let ratio = resid / h;
            assert!(
                ratio < prev_ratio,
                "ratio did not shrink: {ratio} vs {prev_ratio} at h={h}"
            );
            prev_ratio = ratio;
        }
    }

    #[test]
    fn validate_rejects_bad_hyperparameters() {
        assert!(KernelSpec::gaussian(0.0).validate().is_err());
        assert!(KernelSpec::laplacian(-1.0).validate().is_err());
        assert!(KernelSpec::polynomial(1.0, 0).validate().is_err());
        assert!(KernelSpec::polynomial(f64::NAN, 2).validate().is_err());
        assert!(KernelSpec::gaussian(0.5).validate().is_ok());
        // Linear ignores gamma entirely, even a nonsensical one.
        assert!(KernelSpec::linear().with_gamma(-3.0).validate().is_ok());
    }

    #[test]
    fn median_heuristic_hand_examples() {
        // Two points at distance 2: median = 2, γ = 1/(2·4) = 0.125.
        let x = arr2(&[[0.0], [2.0]]);
        assert_eq!(median_heuristic_gamma(&x), 0.125);

        // Three collinear points: distances {1, 1, 2}, median 1 → γ = 0.5.
        let x = arr2(&[[0.0], [1.0], [2.0]]);
        assert_eq!(median_heuristic_gamma(&x), 0.5);

        // Even count of pairs averages the middle two:
        // points {0, 1, 3, 6} → distances {1,2,3,3,5,6}, median 3 → 1/18.
        let x = arr2(&[[0.0], [1.0], [3.0], [6.0]]);
        assert!((median_heuristic_gamma(&x) - 1.0 / 18.0).abs() < 1e-15);

        // Degenerate cases fall back to 1.
        let x = arr2(&[[5.0]]);
        assert_eq!(median_heuristic_gamma(&x), 1.0);
        let x = arr2(&[[5.0, 1.0], [5.0, 1.0], [5.0, 1.0]]);
        assert_eq!(median_heuristic_gamma(&x), 1.0);
    }
}
