//! Exact reverse-mode gradients for every learnable parameter, mirroring
//! the forward stages in reverse. Frozen buffers (bases, the OLinear-C
//! mixing matrix) receive no gradient by construction.

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Tensor3};
use crate::scalar::{gelu_derivative, Scalar};
use crate::transform::BasisMethod;

use super::forward::{ForwardCache, LayerNormCache};
use super::normlin::normlin_row_backward;
use super::{
    GradientSet, LayerNormParams, LinearLayer, OLinearConfig, OLinearParams, ParamSet, Variant,
};

/// Backward of `linear_last`: accumulates weight/bias gradients and returns
/// the gradient w.r.t. the layer input.
fn linear_last_backward<T: Scalar>(
    input: &Tensor3<T>,
    layer: &LinearLayer<T>,
    d_out: &Tensor3<T>,
    d_layer: &mut LinearLayer<T>,
) -> Tensor3<T> {
    let (d0, d1, in_dim) = input.dims();
    let out_dim = layer.weight.rows();
    debug_assert_eq!(d_out.dims(), (d0, d1, out_dim));
    let mut d_input = Tensor3::zeros(d0, d1, in_dim);
    for m in 0..d0 {
        for k in 0..d1 {
            let x = input.lane(m, k);
            let g = d_out.lane(m, k);
            let dx = d_input.lane_mut(m, k);
            for o in 0..out_dim {
                let go = g[o];
                if go == T::zero() {
                    continue;
                }
                d_layer.bias[o] += go;
                let wrow = layer.weight.row(o);
                let dwrow = d_layer.weight.row_mut(o);
                for i in 0..in_dim {
                    dwrow[i] += go * x[i];
                    dx[i] += go * wrow[i];
                }
            }
        }
    }
    d_input
}

/// Backward of layer normalization over the last axis.
fn layer_norm_backward<T: Scalar>(
    cache: &LayerNormCache<T>,
    params: &LayerNormParams<T>,
    d_out: &Tensor3<T>,
    d_params: &mut LayerNormParams<T>,
) -> Tensor3<T> {
    let (d0, d1, dim) = cache.normalized.dims();
    debug_assert_eq!(d_out.dims(), (d0, d1, dim));
    let len = T::c(dim as f64);
    let mut d_input = Tensor3::zeros(d0, d1, dim);
    let mut lane_idx = 0;
    for m in 0..d0 {
        for k in 0..d1 {
            let xhat = cache.normalized.lane(m, k);
            let g = d_out.lane(m, k);
            let istd = cache.inv_std[lane_idx];
            lane_idx += 1;

            let mut sum_dxhat = T::zero();
            let mut sum_dxhat_xhat = T::zero();
            for i in 0..dim {
                let dxhat = g[i] * params.gamma[i];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat[i];
                d_params.gamma[i] += g[i] * xhat[i];
                d_params.beta[i] += g[i];
            }
            let mean_dxhat = sum_dxhat / len;
            let mean_dxhat_xhat = sum_dxhat_xhat / len;
            let dlane = d_input.lane_mut(m, k);
            for i in 0..dim {
                let dxhat = g[i] * params.gamma[i];
                dlane[i] = istd * (dxhat - mean_dxhat - xhat[i] * mean_dxhat_xhat);
            }
        }
    }
    d_input
}

/// Backward of the variate mixing `v[b,n] = sum_m W[n,m] p[b,m]` (the whole
/// embedding/hidden block moves at once). Returns the gradient w.r.t. the
/// mixed input; the gradient w.r.t. the effective weight goes to `d_weight`.
fn mix_backward<T: Scalar>(
    pre: &Tensor3<T>,
    weight: &Matrix<T>,
    d_out: &Tensor3<T>,
    batch: usize,
    d_weight: &mut Matrix<T>,
) -> Tensor3<T> {
    let (m, d, dim) = pre.dims();
    let n = weight.rows();
    debug_assert_eq!(m, batch * n);
    let block = d * dim;
    let mut d_pre = Tensor3::zeros(m, d, dim);
    for b in 0..batch {
        for row in 0..n {
            let g_base = (b * n + row) * block;
            let g = &d_out.data()[g_base..g_base + block];
            for col in 0..n {
                let p_base = (b * n + col) * block;
                let p = &pre.data()[p_base..p_base + block];
                let mut dot = T::zero();
                for (gv, pv) in g.iter().zip(p) {
                    dot += *gv * *pv;
                }
                d_weight.set(row, col, d_weight.get(row, col) + dot);

                let w = weight.get(row, col);
                if w != T::zero() {
                    let dp = &mut d_pre.data_mut()[p_base..p_base + block];
                    for (o, gv) in dp.iter_mut().zip(g) {
                        *o += w * *gv;
                    }
                }
            }
        }
    }
    d_pre
}

/// Reverse-mode gradients for all learnable parameters given the gradient
/// of a scalar objective w.r.t. the predictions.
pub fn backward<T: Scalar>(
    params: &OLinearParams<T>,
    config: &OLinearConfig,
    cache: &ForwardCache<T>,
    d_predictions: &Tensor3<T>,
) -> Result<GradientSet<T>> {
    if cache.params_version != params.version {
        return Err(Error::input(
            "backward",
            format!(
                "stale cache: built for parameter version {}, parameters are at {}",
                cache.params_version, params.version
            ),
        ));
    }
    let (batch, n, tau) = d_predictions.dims();
    if n != config.n_variates || tau != config.horizon || batch != cache.batch {
        return Err(Error::shape(
            "backward",
            format!("upstream gradient {batch}x{n}x{tau} does not match the cached forward"),
        ));
    }
    if cache.blocks.len() != params.set.blocks.len() {
        return Err(Error::input(
            "backward",
            "cache block count does not match parameters",
        ));
    }
    let d = config.embed_size;
    let mut grads = ParamSet::zeros(config);

    // RevIN denormalization: predictions = pred_norm * std + mean.
    let mut d_pred_norm = d_predictions.clone();
    for b in 0..batch {
        for v in 0..n {
            let sd = cache.revin.std.get(b, v);
            for g in d_pred_norm.lane_mut(b, v) {
                *g *= sd;
            }
        }
    }

    // Flatten projection.
    let flat = &params.set.flatten;
    let block_len = d * tau;
    let (m_total, _, _) = cache.inverted.dims();
    let mut d_inverted = Tensor3::zeros(m_total, d, tau);
    for b in 0..batch {
        for v in 0..n {
            let m = b * n + v;
            let base = m * block_len;
            let src = &cache.inverted.data()[base..base + block_len];
            let g = d_pred_norm.lane(b, v);
            for o in 0..tau {
                let go = g[o];
                if go == T::zero() {
                    continue;
                }
                grads.flatten.bias[o] += go;
                let wrow = flat.weight.row(o);
                let dwrow = grads.flatten.weight.row_mut(o);
                let dst = &mut d_inverted.data_mut()[base..base + block_len];
                for i in 0..block_len {
                    dwrow[i] += go * src[i];
                    dst[i] += go * wrow[i];
                }
            }
        }
    }

    // Inverse temporal transform (multiplication by q_out^T per lane in the
    // forward direction).
    let d_decoded = if params.q_out.method == BasisMethod::Identity {
        d_inverted
    } else {
        crate::linalg::tensor_mul_last(&d_inverted, &params.q_out.q)?
    };

    // Decoder.
    let mut d_h = linear_last_backward(
        &cache.h_final,
        &params.set.decoder,
        &d_decoded,
        &mut grads.decoder,
    );

    // Blocks, in reverse.
    for (l, (block, bcache)) in params
        .set
        .blocks
        .iter()
        .zip(&cache.blocks)
        .enumerate()
        .rev()
    {
        let gblock = &mut grads.blocks[l];

        // ISL: LayerNorm(h + Lin2(GELU(Lin1 h))).
        let d_resid =
            layer_norm_backward(&bcache.isl.ln, &block.isl_norm, &d_h, &mut gblock.isl_norm);
        let mut d_y = d_resid.clone();
        let d_act = linear_last_backward(
            &bcache.isl.act,
            &block.isl_lin2,
            &d_resid,
            &mut gblock.isl_lin2,
        );
        let mut d_pre_act = d_act;
        for (g, &a) in d_pre_act
            .data_mut()
            .iter_mut()
            .zip(bcache.isl.pre_act.data())
        {
            *g *= gelu_derivative(a);
        }
        let d_isl_in = linear_last_backward(
            &bcache.isl.input,
            &block.isl_lin1,
            &d_pre_act,
            &mut gblock.isl_lin1,
        );
        for (a, &b_) in d_y.data_mut().iter_mut().zip(d_isl_in.data()) {
            *a += b_;
        }

        // CSL: LayerNorm(h + Post(Mix(Pre h))).
        let d_resid =
            layer_norm_backward(&bcache.csl.ln, &block.csl_norm, &d_y, &mut gblock.csl_norm);
        let mut d_u = d_resid.clone();
        let d_mixed = if config.csl_post_linear {
            linear_last_backward(
                &bcache.csl.mixed,
                &block.csl_post,
                &d_resid,
                &mut gblock.csl_post,
            )
        } else {
            d_resid
        };
        let mut d_eff_weight = Matrix::zeros(n, n);
        let d_pre = mix_backward(
            &bcache.csl.pre_out,
            &bcache.csl.mix_weight,
            &d_mixed,
            batch,
            &mut d_eff_weight,
        );
        if config.variant == Variant::OLinear {
            let raw = bcache.csl.raw_w.as_ref().ok_or_else(|| {
                Error::input("backward", "cache is missing the raw NormLin weight")
            })?;
            for row in 0..n {
                let d_row = normlin_row_backward(
                    raw.row(row),
                    d_eff_weight.row(row),
                    config.normlin_transform,
                    config.normlin_norm,
                );
                let dst = gblock.normlin_w.row_mut(row);
                for (o, g) in dst.iter_mut().zip(d_row) {
                    *o += g;
                }
            }
        }
        let d_from_branch = if config.csl_pre_linear {
            linear_last_backward(
                &bcache.csl.input,
                &block.csl_pre,
                &d_pre,
                &mut gblock.csl_pre,
            )
        } else {
            d_pre
        };
        for (a, &b_) in d_u.data_mut().iter_mut().zip(d_from_branch.data()) {
            *a += b_;
        }
        d_h = d_u;
    }

    // Encoder.
    let d_z = linear_last_backward(&cache.z, &params.set.encoder, &d_h, &mut grads.encoder);

    // Temporal projection (multiplication by q_in per lane in the forward
    // direction).
    let d_extended = if params.q_in.method == BasisMethod::Identity {
        d_z
    } else {
        crate::linalg::tensor_mul_last_transpose(&d_z, &params.q_in.q)?
    };

    // Dimension extension: e[(b,n), k, t] = xn[b, n, t] * phi[k].
    for b in 0..batch {
        for v in 0..n {
            let m = b * n + v;
            let xlane = cache.xn.lane(b, v);
            for k in 0..d {
                let g = d_extended.lane(m, k);
                let mut acc = T::zero();
                for (gv, xv) in g.iter().zip(xlane) {
                    acc += *gv * *xv;
                }
                grads.phi_d[k] += acc;
            }
        }
    }

    Ok(grads)
}
