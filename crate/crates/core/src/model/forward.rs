//! Forward pass of the OLinear network, caching every intermediate the
//! backward pass needs.

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Tensor3};
use crate::scalar::{gelu, Scalar};
use crate::transform::{apply_temporal, invert_temporal};

use super::normlin::normlin_weight;
use super::{BlockParams, LayerNormParams, LinearLayer, OLinearConfig, OLinearParams, Variant};

pub(crate) const REVIN_EPS: f64 = 1e-5;
pub(crate) const LAYERNORM_EPS: f64 = 1e-5;

/// Per-(batch, variate) instance statistics retained for denormalization.
#[derive(Debug, Clone)]
pub struct RevInState<T = f64> {
    pub mean: Matrix<T>,
    pub std: Matrix<T>,
    pub eps: T,
}

/// Instance-normalize each lookback window: subtract its mean and divide by
/// the square root of its sample variance plus `eps`.
pub fn revin_normalize<T: Scalar>(x: &Tensor3<T>) -> Result<(Tensor3<T>, RevInState<T>)> {
    let (b, n, t) = x.dims();
    if t < 2 {
        return Err(Error::input(
            "revin_normalize",
            "window length must be >= 2",
        ));
    }
    let eps = T::c(REVIN_EPS);
    let mut mean = Matrix::zeros(b, n);
    let mut std = Matrix::zeros(b, n);
    let mut out = Tensor3::zeros(b, n, t);
    let len = T::c(t as f64);
    let len_m1 = T::c((t - 1) as f64);
    for i in 0..b {
        for j in 0..n {
            let lane = x.lane(i, j);
            let mu: T = lane.iter().cloned().sum::<T>() / len;
            let var: T = lane.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / len_m1;
            let sd = (var + eps).sqrt();
            mean.set(i, j, mu);
            std.set(i, j, sd);
            let olane = out.lane_mut(i, j);
            for (o, &v) in olane.iter_mut().zip(lane) {
                *o = (v - mu) / sd;
            }
        }
    }
    Ok((out, RevInState { mean, std, eps }))
}

/// Undo the instance normalization with the stored statistics.
pub fn revin_denormalize<T: Scalar>(y: &Tensor3<T>, state: &RevInState<T>) -> Result<Tensor3<T>> {
    let (b, n, _) = y.dims();
    if b != state.mean.rows() || n != state.mean.cols() {
        return Err(Error::shape(
            "revin_denormalize",
            format!(
                "{b}x{n} windows vs {}x{} statistics",
                state.mean.rows(),
                state.mean.cols()
            ),
        ));
    }
    let mut out = y.clone();
    for i in 0..b {
        for j in 0..n {
            let mu = state.mean.get(i, j);
            let sd = state.std.get(i, j);
            for v in out.lane_mut(i, j) {
                *v = *v * sd + mu;
            }
        }
    }
    Ok(out)
}

/// Outer product with `phi_d`, fusing batch and variate axes:
/// `out[(b*N + n), k, t] = x[b, n, t] * phi_d[k]`.
pub fn dimension_extend<T: Scalar>(x: &Tensor3<T>, phi_d: &[T]) -> Result<Tensor3<T>> {
    let (b, n, t) = x.dims();
    let d = phi_d.len();
    if d == 0 {
        return Err(Error::input("dimension_extend", "phi_d must be non-empty"));
    }
    let mut out = Tensor3::zeros(b * n, d, t);
    for i in 0..b {
        for j in 0..n {
            let lane = x.lane(i, j);
            let m = i * n + j;
            for (k, &phi) in phi_d.iter().enumerate() {
                let olane = out.lane_mut(m, k);
                for (o, &v) in olane.iter_mut().zip(lane) {
                    *o = v * phi;
                }
            }
        }
    }
    Ok(out)
}

/// `out[m, k, o] = sum_i weight[o, i] * x[m, k, i] + bias[o]`.
pub(crate) fn linear_last<T: Scalar>(
    x: &Tensor3<T>,
    layer: &LinearLayer<T>,
    stage: &'static str,
) -> Result<Tensor3<T>> {
    let (d0, d1, d_in) = x.dims();
    let (out_dim, in_dim) = (layer.weight.rows(), layer.weight.cols());
    if d_in != in_dim {
        return Err(Error::shape(
            stage,
            format!("input width {d_in} vs weight fan-in {in_dim}"),
        ));
    }
    let mut out = Tensor3::zeros(d0, d1, out_dim);
    for m in 0..d0 {
        for k in 0..d1 {
            let lane = x.lane(m, k);
            let olane = out.lane_mut(m, k);
            for o in 0..out_dim {
                let wrow = layer.weight.row(o);
                let mut acc = layer.bias[o];
                for (i, &v) in lane.iter().enumerate() {
                    acc += wrow[i] * v;
                }
                olane[o] = acc;
            }
        }
    }
    Ok(out)
}

/// Layer normalization over the last axis.
#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    /// `(x - mean) / sqrt(var + eps)` for every lane.
    pub normalized: Tensor3<T>,
    /// `1 / sqrt(var + eps)`, one per lane, lanes enumerated row-major.
    pub inv_std: Vec<T>,
}

pub(crate) fn layer_norm_forward<T: Scalar>(
    x: &Tensor3<T>,
    params: &LayerNormParams<T>,
) -> (Tensor3<T>, LayerNormCache<T>) {
    let (d0, d1, dim) = x.dims();
    debug_assert_eq!(dim, params.gamma.len());
    let eps = T::c(LAYERNORM_EPS);
    let len = T::c(dim as f64);
    let mut normalized = Tensor3::zeros(d0, d1, dim);
    let mut out = Tensor3::zeros(d0, d1, dim);
    let mut inv_std = Vec::with_capacity(d0 * d1);
    for m in 0..d0 {
        for k in 0..d1 {
            let lane = x.lane(m, k);
            let mu: T = lane.iter().cloned().sum::<T>() / len;
            let var: T = lane.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / len;
            let istd = T::one() / (var + eps).sqrt();
            inv_std.push(istd);
            let nlane = normalized.lane_mut(m, k);
            let olane = out.lane_mut(m, k);
            for i in 0..dim {
                let xhat = (lane[i] - mu) * istd;
                nlane[i] = xhat;
                olane[i] = params.gamma[i] * xhat + params.beta[i];
            }
        }
    }
    (
        out,
        LayerNormCache {
            normalized,
            inv_std,
        },
    )
}

/// Mix hidden states across the variate axis with a fixed `N x N` weight,
/// the same weight at every embedding/hidden position.
pub(crate) fn mix_variates<T: Scalar>(
    x: &Tensor3<T>,
    weight: &Matrix<T>,
    batch: usize,
) -> Result<Tensor3<T>> {
    let (m, d, dim) = x.dims();
    let n = weight.rows();
    if weight.cols() != n || m != batch * n {
        return Err(Error::shape(
            "csl_mix",
            format!("fused axis {m} vs batch {batch} x variates {n}"),
        ));
    }
    let block = d * dim;
    let mut out = Tensor3::zeros(m, d, dim);
    for b in 0..batch {
        for row in 0..n {
            let dst_base = (b * n + row) * block;
            for col in 0..n {
                let w = weight.get(row, col);
                if w == T::zero() {
                    continue;
                }
                let src_base = (b * n + col) * block;
                let src = &x.data()[src_base..src_base + block];
                let dst = &mut out.data_mut()[dst_base..dst_base + block];
                for (o, &v) in dst.iter_mut().zip(src) {
                    *o += w * v;
                }
            }
        }
    }
    Ok(out)
}

fn add<T: Scalar>(a: &Tensor3<T>, b: &Tensor3<T>) -> Tensor3<T> {
    debug_assert_eq!(a.dims(), b.dims());
    let mut out = a.clone();
    for (o, &v) in out.data_mut().iter_mut().zip(b.data()) {
        *o += v;
    }
    out
}

/// Cross-series learner intermediates.
#[derive(Debug, Clone)]
pub struct CslCache<T> {
    pub input: Tensor3<T>,
    pub pre_out: Tensor3<T>,
    pub mixed: Tensor3<T>,
    pub post_out: Tensor3<T>,
    pub ln: LayerNormCache<T>,
    /// Effective row-stochastic mixing weight used in this pass.
    pub mix_weight: Matrix<T>,
    /// Raw learnable weight behind `mix_weight`; `None` under OLinear-C.
    pub raw_w: Option<Matrix<T>>,
    /// Rows that fell back to uniform mixing (zero post-transform norm).
    pub fallback_rows: usize,
}

/// Intra-series learner intermediates.
#[derive(Debug, Clone)]
pub struct IslCache<T> {
    pub input: Tensor3<T>,
    pub pre_act: Tensor3<T>,
    pub act: Tensor3<T>,
    pub ln: LayerNormCache<T>,
}

#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    pub csl: CslCache<T>,
    pub isl: IslCache<T>,
}

/// One cross-series learner step:
/// `LayerNorm(h + Post(NormLin_variates(Pre(h))))`, with the pre/post
/// linears controlled by the ablation flags.
pub fn csl_forward<T: Scalar>(
    h: &Tensor3<T>,
    block: &BlockParams<T>,
    config: &OLinearConfig,
    frozen_mix: Option<&Matrix<T>>,
    batch: usize,
) -> Result<(Tensor3<T>, CslCache<T>)> {
    let (mix_weight, raw_w, fallback_rows) = match (config.variant, frozen_mix) {
        (Variant::OLinearC, Some(m)) => (m.clone(), None, 0),
        (Variant::OLinearC, None) => {
            return Err(Error::Config(
                "olinear_c forward needs the frozen mixing matrix".into(),
            ))
        }
        (Variant::OLinear, _) => {
            let (w, flags) = normlin_weight(
                &block.normlin_w,
                config.normlin_transform,
                config.normlin_norm,
            );
            (w, Some(block.normlin_w.clone()), flags)
        }
    };

    let pre_out = if config.csl_pre_linear {
        linear_last(h, &block.csl_pre, "csl_pre")?
    } else {
        h.clone()
    };
    let mixed = mix_variates(&pre_out, &mix_weight, batch)?;
    let post_out = if config.csl_post_linear {
        linear_last(&mixed, &block.csl_post, "csl_post")?
    } else {
        mixed.clone()
    };
    let residual = add(h, &post_out);
    let (out, ln) = layer_norm_forward(&residual, &block.csl_norm);
    let cache = CslCache {
        input: h.clone(),
        pre_out,
        mixed,
        post_out,
        ln,
        mix_weight,
        raw_w,
        fallback_rows,
    };
    Ok((out, cache))
}

/// One intra-series learner step: `LayerNorm(h + Lin2(GELU(Lin1(h))))`.
pub fn isl_forward<T: Scalar>(
    h: &Tensor3<T>,
    block: &BlockParams<T>,
) -> Result<(Tensor3<T>, IslCache<T>)> {
    let pre_act = linear_last(h, &block.isl_lin1, "isl_lin1")?;
    let mut act = pre_act.clone();
    for v in act.data_mut() {
        *v = gelu(*v);
    }
    let expanded = linear_last(&act, &block.isl_lin2, "isl_lin2")?;
    let residual = add(h, &expanded);
    let (out, ln) = layer_norm_forward(&residual, &block.isl_norm);
    Ok((
        out,
        IslCache {
            input: h.clone(),
            pre_act,
            act,
            ln,
        },
    ))
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub batch: usize,
    pub xn: Tensor3<T>,
    pub revin: RevInState<T>,
    pub z: Tensor3<T>,
    pub blocks: Vec<BlockCache<T>>,
    pub h_final: Tensor3<T>,
    pub decoded: Tensor3<T>,
    pub inverted: Tensor3<T>,
    pub params_version: u64,
}

/// Full forward pass over a batch of lookback windows (`B x N x T`),
/// producing predictions (`B x N x tau`).
pub fn forward<T: Scalar>(
    inputs: &Tensor3<T>,
    params: &OLinearParams<T>,
    config: &OLinearConfig,
) -> Result<(Tensor3<T>, ForwardCache<T>)> {
    let (batch, n, t) = inputs.dims();
    if n != config.n_variates || t != config.lookback {
        return Err(Error::shape(
            "forward",
            format!(
                "inputs {batch}x{n}x{t} vs config N={} T={}",
                config.n_variates, config.lookback
            ),
        ));
    }
    let tau = config.horizon;
    let d = config.embed_size;

    let (xn, revin) = revin_normalize(inputs)?;
    let extended = dimension_extend(&xn, &params.set.phi_d)?;
    let z = apply_temporal(&extended, &params.q_in)?;
    let mut h = linear_last(&z, &params.set.encoder, "encoder")?;

    let mut blocks = Vec::with_capacity(config.n_blocks);
    for block in &params.set.blocks {
        let (h_csl, csl) = csl_forward(&h, block, config, params.corr_mix.as_ref(), batch)?;
        let (h_isl, isl) = isl_forward(&h_csl, block)?;
        blocks.push(BlockCache { csl, isl });
        h = h_isl;
    }

    let decoded = linear_last(&h, &params.set.decoder, "decoder")?;
    let inverted = invert_temporal(&decoded, &params.q_out)?;

    // Flatten projection, shared across variates: the contiguous d x tau
    // block of each (batch, variate) is one flattened input vector.
    let flat = &params.set.flatten;
    if flat.weight.cols() != d * tau {
        return Err(Error::shape(
            "flatten",
            format!("weight fan-in {} vs d*tau {}", flat.weight.cols(), d * tau),
        ));
    }
    let mut pred_norm = Tensor3::zeros(batch, n, tau);
    let block_len = d * tau;
    for b in 0..batch {
        for v in 0..n {
            let m = b * n + v;
            let base = m * block_len;
            let src = &inverted.data()[base..base + block_len];
            let olane = pred_norm.lane_mut(b, v);
            for o in 0..tau {
                let wrow = flat.weight.row(o);
                let mut acc = flat.bias[o];
                for (i, &x) in src.iter().enumerate() {
                    acc += wrow[i] * x;
                }
                olane[o] = acc;
            }
        }
    }

    let predictions = revin_denormalize(&pred_norm, &revin)?;
    let cache = ForwardCache {
        batch,
        xn,
        revin,
        z,
        blocks,
        h_final: h,
        decoded,
        inverted,
        params_version: params.version,
    };
    Ok((predictions, cache))
}
