//! Forecast metrics, diagnostic analytics, and mathematical oracles.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Tensor3};
use crate::model::{normlin_weight, GradientSet, OLinearConfig, OLinearParams, ParamSet, Variant};
use crate::scalar::Scalar;

/// One evaluation pass over a set of forecast windows.
///
/// `r2`, `pearson_r` and `mase` are `None` when every variate was excluded
/// (e.g. constant targets); the `*_excluded` counters flag how many variates
/// were dropped from each average.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub mse: f64,
    pub mae: f64,
    pub r2: Option<f64>,
    pub pearson_r: Option<f64>,
    pub mase: Option<f64>,
    pub n_windows: usize,
    pub r2_excluded: usize,
    pub r_excluded: usize,
    pub mase_excluded: usize,
}

impl MetricsReport {
    pub fn csv_header() -> &'static str {
        "mse,mae,r2,pearson_r,mase,n_windows,r2_excluded,r_excluded,mase_excluded"
    }

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.mse,
            self.mae,
            opt(self.r2),
            opt(self.pearson_r),
            opt(self.mase),
            self.n_windows,
            self.r2_excluded,
            self.r_excluded,
            self.mase_excluded
        )
    }

    /// Aligned plain-text table.
    pub fn table(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "n/a".into());
        format!(
            "metric      value\n\
             mse         {:.6}\n\
             mae         {:.6}\n\
             r2          {}\n\
             pearson_r   {}\n\
             mase        {}\n\
             n_windows   {}",
            self.mse,
            self.mae,
            opt(self.r2),
            opt(self.pearson_r),
            opt(self.mase),
            self.n_windows
        )
    }
}

/// MSE, MAE, per-variate R^2 / Pearson r / MASE averaged over variates.
///
/// Per variate, R^2 and r are computed over all flattened horizon steps of
/// all windows; the MASE denominator is the mean absolute one-step
/// difference of the ground truth within each window's horizon.
pub fn metrics<T: Scalar>(preds: &Tensor3<T>, targets: &Tensor3<T>) -> Result<MetricsReport> {
    let (w, n, tau) = preds.dims();
    if preds.dims() != targets.dims() {
        return Err(Error::shape(
            "metrics",
            format!(
                "predictions {:?} vs targets {:?}",
                preds.dims(),
                targets.dims()
            ),
        ));
    }
    if w == 0 {
        return Err(Error::input("metrics", "no windows"));
    }
    if tau < 2 {
        return Err(Error::input(
            "metrics",
            "MASE requires a horizon of at least 2 steps",
        ));
    }

    let count = (w * n * tau) as f64;
    let mut se = 0.0;
    let mut ae = 0.0;
    for (p, t) in preds.data().iter().zip(targets.data()) {
        let e = p.to_f64_c() - t.to_f64_c();
        se += e * e;
        ae += e.abs();
    }

    let mut r2_sum = 0.0;
    let mut r2_used = 0usize;
    let mut r_sum = 0.0;
    let mut r_used = 0usize;
    let mut mase_sum = 0.0;
    let mut mase_used = 0usize;
    let flat = (w * tau) as f64;

    for v in 0..n {
        let mut t_mean = 0.0;
        let mut p_mean = 0.0;
        for b in 0..w {
            for t in 0..tau {
                t_mean += targets.get(b, v, t).to_f64_c();
                p_mean += preds.get(b, v, t).to_f64_c();
            }
        }
        t_mean /= flat;
        p_mean /= flat;

        let mut resid = 0.0;
        let mut total = 0.0;
        let mut cov = 0.0;
        let mut var_p = 0.0;
        let mut abs_err = 0.0;
        let mut naive = 0.0;
        for b in 0..w {
            for t in 0..tau {
                let y = targets.get(b, v, t).to_f64_c();
                let yh = preds.get(b, v, t).to_f64_c();
                resid += (yh - y) * (yh - y);
                total += (y - t_mean) * (y - t_mean);
                cov += (yh - p_mean) * (y - t_mean);
                var_p += (yh - p_mean) * (yh - p_mean);
                abs_err += (yh - y).abs();
                if t > 0 {
                    let prev = targets.get(b, v, t - 1).to_f64_c();
                    naive += (y - prev).abs();
                }
            }
        }
        // Variance thresholds scale with magnitude so that an exactly
        // constant series is excluded even when accumulated round-off
        // leaves a nonzero residue.
        let t_floor = 1e-24 * flat * (1.0 + t_mean * t_mean);
        let p_floor = 1e-24 * flat * (1.0 + p_mean * p_mean);
        if total > t_floor {
            r2_sum += 1.0 - resid / total;
            r2_used += 1;
        }
        if total > t_floor && var_p > p_floor {
            r_sum += cov / (var_p.sqrt() * total.sqrt());
            r_used += 1;
        }
        let naive_mean = naive / (w * (tau - 1)) as f64;
        if naive_mean > 0.0 {
            mase_sum += (abs_err / flat) / naive_mean;
            mase_used += 1;
        }
    }

    Ok(MetricsReport {
        mse: se / count,
        mae: ae / count,
        r2: (r2_used > 0).then(|| r2_sum / r2_used as f64),
        pearson_r: (r_used > 0).then(|| r_sum / r_used as f64),
        mase: (mase_used > 0).then(|| mase_sum / mase_used as f64),
        n_windows: w,
        r2_excluded: n - r2_used,
        r_excluded: n - r_used,
        mase_excluded: n - mase_used,
    })
}

/// Repeat the last observed lookback value across the horizon.
pub fn persistence_forecast<T: Scalar>(inputs: &Tensor3<T>, horizon: usize) -> Tensor3<T> {
    let (w, n, t) = inputs.dims();
    let mut out = Tensor3::zeros(w, n, horizon);
    for b in 0..w {
        for v in 0..n {
            let last = inputs.get(b, v, t - 1);
            for s in 0..horizon {
                out.set(b, v, s, last);
            }
        }
    }
    out
}

/// Predict the per-window lookback mean across the horizon.
pub fn mean_forecast<T: Scalar>(inputs: &Tensor3<T>, horizon: usize) -> Tensor3<T> {
    let (w, n, t) = inputs.dims();
    let len = T::c(t as f64);
    let mut out = Tensor3::zeros(w, n, horizon);
    for b in 0..w {
        for v in 0..n {
            let mean: T = inputs.lane(b, v).iter().cloned().sum::<T>() / len;
            for s in 0..horizon {
                out.set(b, v, s, mean);
            }
        }
    }
    out
}

/// Conditional mean of a jointly Gaussian `(x, y)`:
/// `mu_y + sigma_xy^T sigma_x^{-1} (x - mu_x)`, inverting through the
/// eigendecomposition.
pub fn conditional_gaussian_mean(
    mu_x: &[f64],
    mu_y: f64,
    sigma_x: &Matrix<f64>,
    sigma_xy: &[f64],
    x: &[f64],
) -> Result<f64> {
    let t = mu_x.len();
    if sigma_x.rows() != t || sigma_x.cols() != t || sigma_xy.len() != t || x.len() != t {
        return Err(Error::shape(
            "conditional_gaussian_mean",
            format!("dimension {t} not shared by all operands"),
        ));
    }
    if t == 0 {
        return Ok(mu_y);
    }
    let eig = linalg::symmetric_eigendecomp(sigma_x)?;
    let min = eig.lambda.last().copied().unwrap_or(0.0);
    if min <= 1e-12 {
        return Err(Error::input(
            "conditional_gaussian_mean",
            format!("sigma_x is not positive definite (min eigenvalue {min})"),
        ));
    }
    // sigma_x^{-1} v = q diag(1/lambda) q^T v
    let diff: Vec<f64> = x.iter().zip(mu_x).map(|(a, b)| a - b).collect();
    let mut proj = vec![0.0; t];
    for k in 0..t {
        let mut acc = 0.0;
        for r in 0..t {
            acc += eig.q.get(r, k) * diff[r];
        }
        proj[k] = acc / eig.lambda[k];
    }
    let mut inv_diff = vec![0.0; t];
    for r in 0..t {
        let mut acc = 0.0;
        for k in 0..t {
            acc += eig.q.get(r, k) * proj[k];
        }
        inv_diff[r] = acc;
    }
    let correction: f64 = sigma_xy.iter().zip(&inv_diff).map(|(a, b)| a * b).sum();
    Ok(mu_y + correction)
}

/// Table-1 closed forms for the per-token-batch cost of the NormLin module
/// (`N^2 D + 2 N D^2`) and multi-head self-attention (`2 N^2 D + 4 N D^2`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopsEstimate {
    pub normlin_module: u64,
    pub mhsa: u64,
    pub n_variates: u64,
    pub model_dim: u64,
    pub heads: u64,
}

pub fn flops_estimate(n_variates: u64, model_dim: u64, heads: u64) -> FlopsEstimate {
    let n = n_variates;
    let d = model_dim;
    FlopsEstimate {
        normlin_module: n * n * d + 2 * n * d * d,
        mhsa: 2 * n * n * d + 4 * n * d * d,
        n_variates,
        model_dim,
        heads,
    }
}

/// Relative-deviation report of a central finite-difference check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_tensor: Vec<TensorDeviation>,
    pub max_rel_deviation: f64,
}

#[derive(Debug, Clone)]
pub struct TensorDeviation {
    pub name: String,
    pub max_rel_deviation: f64,
    pub checked_coords: usize,
}

/// Coordinates per tensor checked exhaustively; larger tensors are
/// subsampled deterministically (uniform stride) down to this many.
pub const GRADCHECK_COORDS: usize = 64;

/// Deviations are measured relative to `max(|fd|, |analytic|)` with this
/// floor, so near-zero gradients are compared at a fixed absolute scale
/// instead of amplifying finite-difference round-off.
pub const GRADCHECK_DENOM_FLOOR: f64 = 1e-2;

/// Central finite differences of `objective` against `analytic`, coordinate
/// by coordinate over every tensor in `params`.
pub fn finite_difference_check<T: Scalar>(
    objective: &mut dyn FnMut(&ParamSet<T>) -> Result<f64>,
    params: &ParamSet<T>,
    analytic: &GradientSet<T>,
    step: f64,
) -> Result<GradCheckReport> {
    let mut work = params.clone();
    let n_tensors = params.tensors().len();
    let mut per_tensor = Vec::with_capacity(n_tensors);
    let mut global_max = 0.0f64;
    let h = T::c(step);

    for ti in 0..n_tensors {
        let (name, len) = {
            let views = work.tensors();
            (views[ti].name.clone(), views[ti].data.len())
        };
        let coords: Vec<usize> = if len <= GRADCHECK_COORDS {
            (0..len).collect()
        } else {
            // Deterministic stride subsampling covering the whole range.
            (0..GRADCHECK_COORDS)
                .map(|i| i * len / GRADCHECK_COORDS)
                .collect()
        };
        let mut tensor_max = 0.0f64;
        for &ci in &coords {
            let original = work.tensors()[ti].data[ci];
            {
                let mut views = work.tensors_mut();
                views[ti].data[ci] = original + h;
            }
            let f_plus = objective(&work)?;
            {
                let mut views = work.tensors_mut();
                views[ti].data[ci] = original - h;
            }
            let f_minus = objective(&work)?;
            {
                let mut views = work.tensors_mut();
                views[ti].data[ci] = original;
            }
            let fd = (f_plus - f_minus) / (2.0 * step);
            let an = analytic.tensors()[ti].data[ci].to_f64_c();
            let denom = fd.abs().max(an.abs()).max(GRADCHECK_DENOM_FLOOR);
            let rel = (fd - an).abs() / denom;
            tensor_max = tensor_max.max(rel);
        }
        global_max = global_max.max(tensor_max);
        per_tensor.push(TensorDeviation {
            name,
            max_rel_deviation: tensor_max,
            checked_coords: coords.len(),
        });
    }
    Ok(GradCheckReport {
        per_tensor,
        max_rel_deviation: global_max,
    })
}

/// Numerical and effective rank of each block's effective NormLin weight.
#[derive(Debug, Clone)]
pub struct BlockRank {
    pub block: usize,
    pub numerical_rank: usize,
    pub effective_rank: f64,
}

pub fn weight_rank_diagnostic<T: Scalar>(
    params: &OLinearParams<T>,
    config: &OLinearConfig,
) -> Result<Vec<BlockRank>> {
    let mut out = Vec::with_capacity(params.set.blocks.len());
    for (l, block) in params.set.blocks.iter().enumerate() {
        let weight = match config.variant {
            Variant::OLinearC => params
                .corr_mix
                .clone()
                .ok_or_else(|| Error::Config("olinear_c without mixing matrix".into()))?,
            Variant::OLinear => {
                normlin_weight(
                    &block.normlin_w,
                    config.normlin_transform,
                    config.normlin_norm,
                )
                .0
            }
        };
        let (numerical_rank, effective_rank) = linalg::rank_report(&weight, 1e-8)?;
        out.push(BlockRank {
            block: l,
            numerical_rank,
            effective_rank,
        });
    }
    Ok(out)
}
