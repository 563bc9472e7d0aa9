//! Dense real linear algebra used by every other module.
//!
//! Storage is plain row-major `Vec<T>`; the eigensolver is a cyclic Jacobi
//! sweep, which is robust for the symmetric positive semi-definite
//! correlation matrices this crate produces and keeps the crate free of
//! LAPACK-style dependencies.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, T::one());
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n_cols), "ragged rows");
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for row in rows {
            data.extend_from_slice(row);
        }
        Self {
            rows: n_rows,
            cols: n_cols,
            data,
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
    }

    /// Largest absolute deviation from another matrix of the same shape.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (a, b)| acc.max((*a - *b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute asymmetry `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> T {
        let mut worst = T::zero();
        for r in 0..self.rows {
            for c in (r + 1)..self.cols.min(self.rows) {
                worst = worst.max((self.get(r, c) - self.get(c, r)).abs());
            }
        }
        worst
    }
}

/// Standard matrix product.
pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.rows {
        return Err(Error::shape(
            "matmul",
            format!("{}x{} times {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a.get(i, k);
            if aik == T::zero() {
                continue;
            }
            let brow = b.row(k);
            let orow = out.row_mut(i);
            for j in 0..b.cols {
                orow[j] += aik * brow[j];
            }
        }
    }
    Ok(out)
}

/// Dense row-major rank-3 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T = f64> {
    d0: usize,
    d1: usize,
    d2: usize,
    data: Vec<T>,
}

impl<T: Scalar> Tensor3<T> {
    pub fn zeros(d0: usize, d1: usize, d2: usize) -> Self {
        Self {
            d0,
            d1,
            d2,
            data: vec![T::zero(); d0 * d1 * d2],
        }
    }

    pub fn from_vec(d0: usize, d1: usize, d2: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != d0 * d1 * d2 {
            return Err(Error::shape(
                "Tensor3::from_vec",
                format!("{} values for shape {d0}x{d1}x{d2}", data.len()),
            ));
        }
        Ok(Self { d0, d1, d2, data })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.d0, self.d1, self.d2)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        debug_assert!(i < self.d0 && j < self.d1 && k < self.d2);
        self.data[(i * self.d1 + j) * self.d2 + k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: T) {
        debug_assert!(i < self.d0 && j < self.d1 && k < self.d2);
        self.data[(i * self.d1 + j) * self.d2 + k] = v;
    }

    /// Contiguous slice over the last axis at `(i, j)`.
    pub fn lane(&self, i: usize, j: usize) -> &[T] {
        let base = (i * self.d1 + j) * self.d2;
        &self.data[base..base + self.d2]
    }

    pub fn lane_mut(&mut self, i: usize, j: usize) -> &mut [T] {
        let base = (i * self.d1 + j) * self.d2;
        &mut self.data[base..base + self.d2]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn squared_norm(&self) -> T {
        self.data.iter().map(|v| *v * *v).sum()
    }
}

/// Right-multiply every lane by `m`: `out[.., t] = sum_s x[.., s] * m[s, t]`.
pub fn tensor_mul_last<T: Scalar>(x: &Tensor3<T>, m: &Matrix<T>) -> Result<Tensor3<T>> {
    if x.d2 != m.rows {
        return Err(Error::shape(
            "tensor_mul_last",
            format!("last axis {} vs matrix rows {}", x.d2, m.rows),
        ));
    }
    let mut out = Tensor3::zeros(x.d0, x.d1, m.cols);
    for i in 0..x.d0 {
        for j in 0..x.d1 {
            let lane = x.lane(i, j);
            let olane = out.lane_mut(i, j);
            for (s, &v) in lane.iter().enumerate() {
                if v == T::zero() {
                    continue;
                }
                let mrow = m.row(s);
                for t in 0..mrow.len() {
                    olane[t] += v * mrow[t];
                }
            }
        }
    }
    Ok(out)
}

/// Right-multiply every lane by `m` transposed: `out[.., t] = sum_s x[.., s] * m[t, s]`.
pub fn tensor_mul_last_transpose<T: Scalar>(x: &Tensor3<T>, m: &Matrix<T>) -> Result<Tensor3<T>> {
    if x.d2 != m.cols {
        return Err(Error::shape(
            "tensor_mul_last_transpose",
            format!("last axis {} vs matrix cols {}", x.d2, m.cols),
        ));
    }
    let mut out = Tensor3::zeros(x.d0, x.d1, m.rows);
    for i in 0..x.d0 {
        for j in 0..x.d1 {
            let lane = x.lane(i, j);
            let olane = out.lane_mut(i, j);
            for (t, o) in olane.iter_mut().enumerate() {
                let mrow = m.row(t);
                let mut acc = T::zero();
                for (s, &v) in lane.iter().enumerate() {
                    acc += v * mrow[s];
                }
                *o = acc;
            }
        }
    }
    Ok(out)
}

/// Result of a symmetric eigendecomposition, `s = q * Diag(lambda) * q^T`.
///
/// Eigenvectors are the columns of `q`; eigenvalues are sorted descending
/// (ties keep their pre-sort order) and each eigenvector's first entry of
/// magnitude above 1e-12 is made positive, so the output is byte-stable.
#[derive(Debug, Clone)]
pub struct EigenDecomposition<T = f64> {
    pub q: Matrix<T>,
    pub lambda: Vec<T>,
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn symmetric_eigendecomp<T: Scalar>(s: &Matrix<T>) -> Result<EigenDecomposition<T>> {
    let n = s.rows();
    if n != s.cols() {
        return Err(Error::shape(
            "symmetric_eigendecomp",
            format!("{}x{} is not square", s.rows(), s.cols()),
        ));
    }
    let sym_tol = T::c(1e-9);
    let asym = s.asymmetry();
    if asym > sym_tol {
        return Err(Error::input(
            "symmetric_eigendecomp",
            format!("asymmetry {asym} exceeds tolerance {sym_tol}"),
        ));
    }
    if n == 0 {
        return Ok(EigenDecomposition {
            q: Matrix::zeros(0, 0),
            lambda: vec![],
        });
    }

    let mut a = s.clone();
    // Work on the exactly symmetrized matrix.
    for p in 0..n {
        for q in (p + 1)..n {
            let avg = (a.get(p, q) + a.get(q, p)) * T::c(0.5);
            a.set(p, q, avg);
            a.set(q, p, avg);
        }
    }
    let mut v = Matrix::identity(n);

    let mut converged = false;
    for sweep in 0..JACOBI_MAX_SWEEPS {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += a.get(p, q).abs();
            }
        }
        if off == T::zero() {
            converged = true;
            break;
        }
        // Threshold sweep in the style of Numerical Recipes: early sweeps
        // skip elements below a shrinking threshold.
        let thresh = if sweep < 3 {
            T::c(0.2) * off / T::c((n * n) as f64)
        } else {
            T::zero()
        };
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                let g = T::c(100.0) * apq.abs();
                // Skip rotations that cannot change the diagonal anymore.
                if sweep > 3
                    && a.get(p, p).abs() + g == a.get(p, p).abs()
                    && a.get(q, q).abs() + g == a.get(q, q).abs()
                {
                    a.set(p, q, T::zero());
                    a.set(q, p, T::zero());
                    continue;
                }
                if apq.abs() <= thresh {
                    continue;
                }
                let h = a.get(q, q) - a.get(p, p);
                let t = if h.abs() + g == h.abs() {
                    apq / h
                } else {
                    let theta = T::c(0.5) * h / apq;
                    let mut t = T::one() / (theta.abs() + (T::one() + theta * theta).sqrt());
                    if theta < T::zero() {
                        t = -t;
                    }
                    t
                };
                let c = T::one() / (T::one() + t * t).sqrt();
                let sn = t * c;
                let tau = sn / (T::one() + c);
                let hh = t * apq;

                a.set(p, p, a.get(p, p) - hh);
                a.set(q, q, a.get(q, q) + hh);
                a.set(p, q, T::zero());
                a.set(q, p, T::zero());
                for r in 0..n {
                    if r != p && r != q {
                        let arp = a.get(r, p);
                        let arq = a.get(r, q);
                        let new_rp = arp - sn * (arq + tau * arp);
                        let new_rq = arq + sn * (arp - tau * arq);
                        a.set(r, p, new_rp);
                        a.set(p, r, new_rp);
                        a.set(r, q, new_rq);
                        a.set(q, r, new_rq);
                    }
                }
                for r in 0..n {
                    let vrp = v.get(r, p);
                    let vrq = v.get(r, q);
                    v.set(r, p, vrp - sn * (vrq + tau * vrp));
                    v.set(r, q, vrq + sn * (vrp - tau * vrq));
                }
            }
        }
    }
    if !converged {
        // Last chance: the final sweep may have zeroed everything.
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += a.get(p, q).abs();
            }
        }
        if off != T::zero() {
            return Err(Error::Convergence {
                op: "symmetric_eigendecomp",
                iterations: JACOBI_MAX_SWEEPS,
            });
        }
    }

    let mut lambda: Vec<T> = (0..n).map(|i| a.get(i, i)).collect();

    // Stable descending sort: ties keep their original column order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        lambda[j]
            .partial_cmp(&lambda[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });

    let mut q = Matrix::zeros(n, n);
    let sign_tol = T::c(1e-12);
    for (new_col, &old_col) in order.iter().enumerate() {
        let mut flip = false;
        for r in 0..n {
            let val = v.get(r, old_col);
            if val.abs() > sign_tol {
                flip = val < T::zero();
                break;
            }
        }
        for r in 0..n {
            let val = v.get(r, old_col);
            q.set(r, new_col, if flip { -val } else { val });
        }
    }
    lambda = order.iter().map(|&i| lambda[i]).collect();

    Ok(EigenDecomposition { q, lambda })
}

impl<T: Scalar> EigenDecomposition<T> {
    /// `max |q^T q - I|`.
    pub fn orthogonality_defect(&self) -> T {
        let qtq = matmul(&self.q.transpose(), &self.q).expect("square");
        qtq.max_abs_diff(&Matrix::identity(self.q.rows()))
    }

    /// Rebuild `q * Diag(lambda) * q^T`.
    pub fn reconstruct(&self) -> Matrix<T> {
        let n = self.q.rows();
        let mut scaled = self.q.clone();
        for r in 0..n {
            for c in 0..n {
                scaled.set(r, c, self.q.get(r, c) * self.lambda[c]);
            }
        }
        matmul(&scaled, &self.q.transpose()).expect("square")
    }
}

/// Numerical and effective rank of a matrix.
///
/// Singular values come from the eigendecomposition of `m^T m`; the
/// numerical rank counts singular values above `tol * sigma_max` and the
/// effective rank is the exponential of the entropy of the normalized
/// singular-value distribution.
pub fn rank_report<T: Scalar>(m: &Matrix<T>, tol: f64) -> Result<(usize, f64)> {
    if tol <= 0.0 {
        return Err(Error::input(
            "rank_report",
            format!("tol {tol} must be positive"),
        ));
    }
    let gram = matmul(&m.transpose(), m)?;
    let eig = symmetric_eigendecomp(&gram)?;
    let singular: Vec<f64> = eig
        .lambda
        .iter()
        .map(|l| l.to_f64_c().max(0.0).sqrt())
        .collect();
    let sigma_max = singular.iter().cloned().fold(0.0_f64, f64::max);
    if sigma_max == 0.0 {
        return Ok((0, 0.0));
    }
    let rank = singular.iter().filter(|&&s| s > tol * sigma_max).count();
    let total: f64 = singular.iter().sum();
    let mut entropy = 0.0;
    for &s in &singular {
        let p = s / total;
        if p > 0.0 {
            entropy -= p * p.ln();
        }
    }
    Ok((rank, entropy.exp()))
}
