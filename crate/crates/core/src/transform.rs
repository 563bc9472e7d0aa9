//! Orthogonal transformation bases and their application along the temporal
//! axis.
//!
//! The eigen basis diagonalizes the estimated temporal correlation matrix;
//! the Fourier basis is the real orthonormal trigonometric basis; identity
//! is the no-transformation baseline. Bases are frozen buffers: they are
//! built once from the training split and never updated by the optimizer.

use crate::data::{CorrEstimate, WindowBatch};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Tensor3};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisMethod {
    Eigen,
    Fourier,
    Identity,
}

impl BasisMethod {
    pub fn name(self) -> &'static str {
        match self {
            BasisMethod::Eigen => "eigen",
            BasisMethod::Fourier => "fourier",
            BasisMethod::Identity => "identity",
        }
    }
}

impl std::str::FromStr for BasisMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eigen" => Ok(BasisMethod::Eigen),
            "fourier" => Ok(BasisMethod::Fourier),
            "identity" => Ok(BasisMethod::Identity),
            other => Err(Error::Config(format!("unknown basis method '{other}'"))),
        }
    }
}

/// An orthogonal matrix tagged by construction method and window length.
#[derive(Debug, Clone)]
pub struct OrthoBasis<T = f64> {
    pub q: Matrix<T>,
    /// Present for `method == Eigen`, descending.
    pub eigenvalues: Option<Vec<T>>,
    pub method: BasisMethod,
    pub n: usize,
}

/// Real orthonormal DFT basis: a constant column, cos/sin pairs, and a
/// Nyquist column for even `n`. Columns are orthonormal by construction.
fn fourier_basis<T: Scalar>(n: usize) -> Matrix<T> {
    let mut q = Matrix::zeros(n, n);
    let inv_sqrt_n = (1.0 / n as f64).sqrt();
    for t in 0..n {
        q.set(t, 0, T::c(inv_sqrt_n));
    }
    let amp = (2.0 / n as f64).sqrt();
    let mut col = 1;
    for k in 1..=((n - 1) / 2) {
        for t in 0..n {
            let angle = 2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
            q.set(t, col, T::c(amp * angle.cos()));
            q.set(t, col + 1, T::c(amp * angle.sin()));
        }
        col += 2;
    }
    if n.is_multiple_of(2) && n > 1 {
        for t in 0..n {
            let sign = if t % 2 == 0 { 1.0 } else { -1.0 };
            q.set(t, col, T::c(inv_sqrt_n * sign));
        }
    }
    q
}

/// Build a basis of size `n`; the eigen method consumes a correlation
/// estimate whose window matches `n`.
pub fn build_basis<T: Scalar>(
    corr: Option<&CorrEstimate<T>>,
    method: BasisMethod,
    n: usize,
) -> Result<OrthoBasis<T>> {
    if n == 0 {
        return Err(Error::input("build_basis", "window length must be >= 1"));
    }
    match method {
        BasisMethod::Identity => Ok(OrthoBasis {
            q: Matrix::identity(n),
            eigenvalues: None,
            method,
            n,
        }),
        BasisMethod::Fourier => Ok(OrthoBasis {
            q: fourier_basis(n),
            eigenvalues: None,
            method,
            n,
        }),
        BasisMethod::Eigen => {
            let corr = corr.ok_or_else(|| {
                Error::Config("eigen basis requires a correlation estimate".into())
            })?;
            if corr.window != n {
                return Err(Error::Config(format!(
                    "correlation window {} does not match basis size {n}",
                    corr.window
                )));
            }
            let eig = linalg::symmetric_eigendecomp(&corr.matrix)?;
            let floor = T::c(-1e-9);
            if let Some(min) = eig.lambda.last() {
                if *min < floor {
                    return Err(Error::Numerical(format!(
                        "correlation matrix has eigenvalue {min} below {floor}"
                    )));
                }
            }
            Ok(OrthoBasis {
                q: eig.q,
                eigenvalues: Some(eig.lambda),
                method,
                n,
            })
        }
    }
}

impl<T: Scalar> OrthoBasis<T> {
    /// `max |q^T q - I|`.
    pub fn orthogonality_defect(&self) -> T {
        let qtq = linalg::matmul(&self.q.transpose(), &self.q).expect("square");
        qtq.max_abs_diff(&Matrix::identity(self.n))
    }
}

/// Project the last axis onto the basis: `out = q^T x` per lane (column
/// convention), i.e. coordinates in the decorrelated feature domain.
pub fn apply_temporal<T: Scalar>(x: &Tensor3<T>, basis: &OrthoBasis<T>) -> Result<Tensor3<T>> {
    if x.dims().2 != basis.n {
        return Err(Error::shape(
            "apply_temporal",
            format!("last axis {} vs basis size {}", x.dims().2, basis.n),
        ));
    }
    if basis.method == BasisMethod::Identity {
        return Ok(x.clone());
    }
    linalg::tensor_mul_last(x, &basis.q)
}

/// Map feature-domain coordinates back to the time domain; exact inverse of
/// [`apply_temporal`].
pub fn invert_temporal<T: Scalar>(x: &Tensor3<T>, basis: &OrthoBasis<T>) -> Result<Tensor3<T>> {
    if x.dims().2 != basis.n {
        return Err(Error::shape(
            "invert_temporal",
            format!("last axis {} vs basis size {}", x.dims().2, basis.n),
        ));
    }
    if basis.method == BasisMethod::Identity {
        return Ok(x.clone());
    }
    linalg::tensor_mul_last_transpose(x, &basis.q)
}

/// Mean absolute off-diagonal entry of the empirical correlation matrix of
/// transformed input windows. A diagnostic: near zero means the basis
/// decorrelated the data.
pub fn decorrelation_score<T: Scalar>(
    windows: &WindowBatch<T>,
    basis: &OrthoBasis<T>,
) -> Result<f64> {
    let (b, n, t) = windows.inputs.dims();
    let samples = b * n;
    if samples < 2 {
        return Err(Error::Estimation(
            "need at least 2 windows for a correlation".into(),
        ));
    }
    let transformed = apply_temporal(&windows.inputs, basis)?;

    // Correlation across samples, coordinates of the transformed window as
    // variables.
    let mut mean = vec![0.0f64; t];
    for i in 0..b {
        for j in 0..n {
            for (k, v) in transformed.lane(i, j).iter().enumerate() {
                mean[k] += v.to_f64_c();
            }
        }
    }
    for m in &mut mean {
        *m /= samples as f64;
    }
    let mut cov = vec![0.0f64; t * t];
    for i in 0..b {
        for j in 0..n {
            let lane = transformed.lane(i, j);
            for p in 0..t {
                let dp = lane[p].to_f64_c() - mean[p];
                for q in p..t {
                    cov[p * t + q] += dp * (lane[q].to_f64_c() - mean[q]);
                }
            }
        }
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for p in 0..t {
        for q in (p + 1)..t {
            let vp = cov[p * t + p];
            let vq = cov[q * t + q];
            if vp <= 0.0 || vq <= 0.0 {
                continue;
            }
            total += (cov[p * t + q] / (vp.sqrt() * vq.sqrt())).abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Estimation(
            "all transformed coordinates are constant".into(),
        ));
    }
    Ok(total / count as f64)
}
