//! The NormLin weight map: an entrywise transform followed by row-wise
//! normalization, turning a raw square weight into an attention-like mixing
//! matrix, plus the closed-form row Jacobians used by the backward pass.
//!
//! For the reference softplus + L1 pair the Jacobian of one row is
//! `(1/||b||_1) (Diag(sigmoid(a)) - b_bar * sigmoid(a)^T)` with
//! `b = softplus(a)` and `b_bar = b / ||b||_1`; the softmax row map has
//! Jacobian `Diag(c) - c c^T`.

use crate::data::CorrEstimate;
use crate::linalg::Matrix;
use crate::scalar::{sigmoid, softplus, Scalar};

use super::{NormLinNorm, NormLinTransform};

/// Row norms below this fall back to a uniform row.
const ZERO_ROW_TOL: f64 = 1e-300;

fn transform_row<T: Scalar>(row: &[T], transform: NormLinTransform) -> Vec<T> {
    match transform {
        NormLinTransform::Softplus => row.iter().map(|&a| softplus(a)).collect(),
        NormLinTransform::Sigmoid => row.iter().map(|&a| sigmoid(a)).collect(),
        NormLinTransform::Relu => row.iter().map(|&a| a.max(T::zero())).collect(),
        NormLinTransform::Identity => row.to_vec(),
        NormLinTransform::Softmax => {
            let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let exps: Vec<T> = row.iter().map(|&a| (a - max).exp()).collect();
            let sum: T = exps.iter().cloned().sum();
            exps.into_iter().map(|e| e / sum).collect()
        }
    }
}

fn row_norm<T: Scalar>(b: &[T], norm: NormLinNorm) -> T {
    match norm {
        NormLinNorm::L1 => b.iter().map(|v| v.abs()).sum(),
        NormLinNorm::L2 => b.iter().map(|v| *v * *v).sum::<T>().sqrt(),
    }
}

/// Effective NormLin weight: transform entrywise, then normalize each row.
/// Rows whose post-transform norm vanishes (possible under relu/identity)
/// are replaced by a uniform `1/N` row; the returned count flags how many.
pub fn normlin_weight<T: Scalar>(
    w: &Matrix<T>,
    transform: NormLinTransform,
    norm: NormLinNorm,
) -> (Matrix<T>, usize) {
    let n = w.rows();
    debug_assert_eq!(n, w.cols(), "NormLin weight must be square");
    let mut out = Matrix::zeros(n, n);
    let uniform = T::one() / T::c(n as f64);
    let mut fallback_rows = 0;
    for r in 0..n {
        let b = transform_row(w.row(r), transform);
        let s = row_norm(&b, norm);
        let orow = out.row_mut(r);
        if s.to_f64_c() < ZERO_ROW_TOL {
            for v in orow.iter_mut() {
                *v = uniform;
            }
            fallback_rows += 1;
        } else {
            for (o, bv) in orow.iter_mut().zip(&b) {
                *o = *bv / s;
            }
        }
    }
    (out, fallback_rows)
}

/// Pull a gradient on one effective row back to the raw weight row.
///
/// `a` is the raw row, `d_c` the gradient w.r.t. the normalized row.
/// Fallback (uniform) rows are constants and propagate nothing.
pub fn normlin_row_backward<T: Scalar>(
    a: &[T],
    d_c: &[T],
    transform: NormLinTransform,
    norm: NormLinNorm,
) -> Vec<T> {
    let n = a.len();
    let b = transform_row(a, transform);
    let s = row_norm(&b, norm);
    if s.to_f64_c() < ZERO_ROW_TOL {
        return vec![T::zero(); n];
    }

    // Through the normalization: d_b_j = d_c_j / s - correction.
    let dot: T = d_c.iter().zip(&b).map(|(&g, &bv)| g * bv).sum();
    let d_b: Vec<T> = match norm {
        NormLinNorm::L1 => {
            let s2 = s * s;
            d_c.iter()
                .zip(&b)
                .map(|(&g, &bv)| g / s - bv.signum() * dot / s2)
                .collect()
        }
        NormLinNorm::L2 => {
            let s3 = s * s * s;
            d_c.iter()
                .zip(&b)
                .map(|(&g, &bv)| g / s - bv * dot / s3)
                .collect()
        }
    };

    // Through the transform.
    match transform {
        NormLinTransform::Softplus => a
            .iter()
            .zip(&d_b)
            .map(|(&av, &g)| g * sigmoid(av))
            .collect(),
        NormLinTransform::Sigmoid => a
            .iter()
            .zip(&d_b)
            .map(|(&av, &g)| {
                let sv = sigmoid(av);
                g * sv * (T::one() - sv)
            })
            .collect(),
        NormLinTransform::Relu => a
            .iter()
            .zip(&d_b)
            .map(|(&av, &g)| if av > T::zero() { g } else { T::zero() })
            .collect(),
        NormLinTransform::Identity => d_b,
        NormLinTransform::Softmax => {
            // Jacobian Diag(b) - b b^T, symmetric.
            let inner: T = b.iter().zip(&d_b).map(|(&bv, &g)| bv * g).sum();
            b.iter()
                .zip(&d_b)
                .map(|(&bv, &g)| bv * (g - inner))
                .collect()
        }
    }
}

/// Jacobian of the row softmax: `Diag(c) - c c^T`.
pub fn softmax_jacobian<T: Scalar>(a: &[T]) -> Matrix<T> {
    let c = transform_row(a, NormLinTransform::Softmax);
    let n = c.len();
    let mut j = Matrix::zeros(n, n);
    for r in 0..n {
        for col in 0..n {
            let delta = if r == col { c[r] } else { T::zero() };
            j.set(r, col, delta - c[r] * c[col]);
        }
    }
    j
}

/// Frozen OLinear-C mixing matrix from the cross-variate correlation.
/// Softmax is applied row-wise (the default); the other transforms are
/// followed by row-wise L1 normalization.
pub fn build_olinear_c_weight<T: Scalar>(
    corr_v: &CorrEstimate<T>,
    transform: NormLinTransform,
) -> Matrix<T> {
    match transform {
        NormLinTransform::Softmax => {
            let n = corr_v.matrix.rows();
            let mut out = Matrix::zeros(n, n);
            for r in 0..n {
                let c = transform_row(corr_v.matrix.row(r), NormLinTransform::Softmax);
                out.row_mut(r).copy_from_slice(&c);
            }
            out
        }
        other => normlin_weight(&corr_v.matrix, other, NormLinNorm::L1).0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random_square(rng: &mut SplitMix64, n: usize, lo: f64, hi: f64) -> Matrix<f64> {
        let mut w = Matrix::zeros(n, n);
        for v in w.data_mut() {
            *v = rng.uniform(lo, hi);
        }
        w
    }

    #[test]
    fn zero_weight_gives_uniform_rows() {
        let (eff, flags) = normlin_weight(
            &Matrix::<f64>::zeros(3, 3),
            NormLinTransform::Softplus,
            NormLinNorm::L1,
        );
        assert_eq!(flags, 0);
        for v in eff.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn large_diagonal_approaches_one_hot() {
        // In the one-hot limit the off-diagonal raw weights go to -inf
        // (softplus(0) is still ln 2, so zeros alone cannot get past 0.99).
        let n = 4;
        let mut w = Matrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                w.set(i, j, if i == j { 20.0 } else { -20.0 });
            }
        }
        let (eff, _) = normlin_weight(&w, NormLinTransform::Softplus, NormLinNorm::L1);
        for i in 0..n {
            assert!(eff.get(i, i) > 0.99, "diag {}", eff.get(i, i));
        }
    }

    #[test]
    fn rows_sum_to_one_for_positive_transforms() {
        let mut rng = SplitMix64::new(12);
        for transform in [
            NormLinTransform::Softplus,
            NormLinTransform::Sigmoid,
            NormLinTransform::Softmax,
        ] {
            let w = random_square(&mut rng, 4, -3.0, 3.0);
            let (eff, flags) = normlin_weight(&w, transform, NormLinNorm::L1);
            assert_eq!(flags, 0);
            for r in 0..4 {
                let sum: f64 = eff.row(r).iter().sum();
                assert!((sum - 1.0).abs() < 1e-12, "{transform:?} row sum {sum}");
                assert!(eff.row(r).iter().all(|&v| v > 0.0));
            }
        }
    }

    #[test]
    fn relu_zero_row_falls_back_to_uniform() {
        let mut w = Matrix::<f64>::zeros(2, 2);
        w.set(0, 0, -1.0);
        w.set(0, 1, -2.0);
        w.set(1, 0, 1.0);
        let (eff, flags) = normlin_weight(&w, NormLinTransform::Relu, NormLinNorm::L1);
        assert_eq!(flags, 1);
        assert_eq!(eff.row(0), &[0.5, 0.5]);
        assert_eq!(eff.row(1), &[1.0, 0.0]);
    }

    #[test]
    fn single_variate_weight_is_one() {
        let (eff, _) = normlin_weight(
            &Matrix::<f64>::zeros(1, 1),
            NormLinTransform::Softplus,
            NormLinNorm::L1,
        );
        assert_eq!(eff.get(0, 0), 1.0);
    }

    #[test]
    fn softmax_jacobian_uniform_case() {
        let j = softmax_jacobian(&[0.0_f64, 0.0]);
        assert!((j.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((j.get(0, 1) + 0.25).abs() < 1e-15);
        assert!((j.get(1, 0) + 0.25).abs() < 1e-15);
        assert!((j.get(1, 1) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn softmax_jacobian_rows_sum_to_zero() {
        let mut rng = SplitMix64::new(3);
        let a: Vec<f64> = (0..5).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let j = softmax_jacobian(&a);
        for r in 0..5 {
            let sum: f64 = j.row(r).iter().sum();
            assert!(sum.abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_jacobian_matches_finite_differences() {
        let mut rng = SplitMix64::new(8);
        let a: Vec<f64> = (0..5).map(|_| rng.uniform(-1.5, 1.5)).collect();
        let j = softmax_jacobian(&a);
        let h = 1e-6;
        for col in 0..5 {
            let mut ap = a.clone();
            let mut am = a.clone();
            ap[col] += h;
            am[col] -= h;
            let cp = transform_row(&ap, NormLinTransform::Softmax);
            let cm = transform_row(&am, NormLinTransform::Softmax);
            for row in 0..5 {
                let fd = (cp[row] - cm[row]) / (2.0 * h);
                assert!((j.get(row, col) - fd).abs() < 1e-8, "({row},{col})");
            }
        }
    }

    /// Hand evaluation of the softplus+L1 row Jacobian at a = [0, 0]:
    /// (1 / (2 ln 2)) * [[0.25, -0.25], [-0.25, 0.25]].
    #[test]
    fn normlin_jacobian_at_origin_matches_closed_form() {
        let a = [0.0_f64, 0.0];
        let scale = 0.25 / (2.0 * std::f64::consts::LN_2);
        // Column j of the Jacobian is the backward of the j-th unit gradient.
        for i in 0..2 {
            let mut d_c = [0.0; 2];
            d_c[i] = 1.0;
            let grad = normlin_row_backward(&a, &d_c, NormLinTransform::Softplus, NormLinNorm::L1);
            for j in 0..2 {
                let expected = if i == j { scale } else { -scale };
                assert!(
                    (grad[j] - expected).abs() < 1e-12,
                    "J({i},{j}) = {} vs {expected}",
                    grad[j]
                );
                assert!((expected.abs() - 0.18034).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn row_backward_matches_finite_differences_all_combos() {
        let mut rng = SplitMix64::new(19);
        let h = 1e-6;
        for transform in NormLinTransform::ALL {
            for norm in NormLinNorm::ALL {
                // Stay away from the relu/|.| kinks at zero.
                let a: Vec<f64> = (0..6)
                    .map(|_| {
                        let v = rng.uniform(0.2, 1.5);
                        if rng.next_f64() < 0.5 {
                            -v
                        } else {
                            v
                        }
                    })
                    .collect();
                let d_c: Vec<f64> = (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect();
                let analytic = normlin_row_backward(&a, &d_c, transform, norm);
                for j in 0..6 {
                    let mut ap = a.clone();
                    let mut am = a.clone();
                    ap[j] += h;
                    am[j] -= h;
                    let eval = |row: &[f64]| -> f64 {
                        let b = transform_row(row, transform);
                        let s = row_norm(&b, norm);
                        b.iter().zip(&d_c).map(|(&bv, &g)| g * bv / s).sum()
                    };
                    let fd = (eval(&ap) - eval(&am)) / (2.0 * h);
                    assert!(
                        (analytic[j] - fd).abs() < 1e-7,
                        "{transform:?}/{norm:?} coord {j}: {} vs {fd}",
                        analytic[j]
                    );
                }
            }
        }
    }

    #[test]
    fn olinear_c_weight_cases() {
        // Single variate collapses to [[1]].
        let corr = CorrEstimate {
            matrix: Matrix::<f64>::identity(1),
            window: 1,
            source_fraction: 1.0,
            skipped_variates: 0,
        };
        let w = build_olinear_c_weight(&corr, NormLinTransform::Softmax);
        assert_eq!(w.get(0, 0), 1.0);

        // Two perfectly correlated variates share weight equally.
        let m = Matrix::<f64>::from_rows(&[
            vec![1.0, 1.0, 0.0],
            vec![1.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        let corr = CorrEstimate {
            matrix: m,
            window: 3,
            source_fraction: 1.0,
            skipped_variates: 0,
        };
        let w = build_olinear_c_weight(&corr, NormLinTransform::Softmax);
        assert!((w.get(0, 0) - w.get(0, 1)).abs() < 1e-15);
        assert!((w.get(1, 0) - w.get(1, 1)).abs() < 1e-15);

        // Random correlation: rows sum to one.
        let mut rng = SplitMix64::new(40);
        let mut m = Matrix::<f64>::identity(4);
        for i in 0..4 {
            for j in (i + 1)..4 {
                let c = rng.uniform(-0.9, 0.9);
                m.set(i, j, c);
                m.set(j, i, c);
            }
        }
        let corr = CorrEstimate {
            matrix: m,
            window: 4,
            source_fraction: 1.0,
            skipped_variates: 0,
        };
        for transform in NormLinTransform::ALL {
            let w = build_olinear_c_weight(&corr, transform);
            if transform == NormLinTransform::Softmax {
                for r in 0..4 {
                    let sum: f64 = w.row(r).iter().sum();
                    assert!((sum - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
