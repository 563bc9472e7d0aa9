//! The OLinear network: RevIN, dimension extension, temporal decorrelation,
//! linear encoder, stacked cross-series / intra-series blocks, decoder,
//! flatten projection, and exact manual reverse-mode gradients.

mod backward;
mod forward;
mod normlin;

pub use backward::backward;
pub use forward::{
    csl_forward, dimension_extend, forward, isl_forward, revin_denormalize, revin_normalize,
    BlockCache, ForwardCache, LayerNormCache, RevInState,
};
pub use normlin::{build_olinear_c_weight, normlin_row_backward, normlin_weight, softmax_jacobian};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::transform::{BasisMethod, OrthoBasis};

/// Entrywise transform applied to the NormLin weight before row
/// normalization. Softplus is the reference choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormLinTransform {
    Softplus,
    Softmax,
    Sigmoid,
    Relu,
    Identity,
}

impl NormLinTransform {
    pub const ALL: [NormLinTransform; 5] = [
        NormLinTransform::Softplus,
        NormLinTransform::Softmax,
        NormLinTransform::Sigmoid,
        NormLinTransform::Relu,
        NormLinTransform::Identity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NormLinTransform::Softplus => "softplus",
            NormLinTransform::Softmax => "softmax",
            NormLinTransform::Sigmoid => "sigmoid",
            NormLinTransform::Relu => "relu",
            NormLinTransform::Identity => "identity",
        }
    }
}

impl std::str::FromStr for NormLinTransform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softplus" => Ok(NormLinTransform::Softplus),
            "softmax" => Ok(NormLinTransform::Softmax),
            "sigmoid" => Ok(NormLinTransform::Sigmoid),
            "relu" => Ok(NormLinTransform::Relu),
            "identity" => Ok(NormLinTransform::Identity),
            other => Err(Error::Config(format!(
                "unknown normlin transform '{other}'"
            ))),
        }
    }
}

/// Row normalization applied after the transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormLinNorm {
    L1,
    L2,
}

impl NormLinNorm {
    pub const ALL: [NormLinNorm; 2] = [NormLinNorm::L1, NormLinNorm::L2];

    pub fn name(self) -> &'static str {
        match self {
            NormLinNorm::L1 => "l1",
            NormLinNorm::L2 => "l2",
        }
    }
}

impl std::str::FromStr for NormLinNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(NormLinNorm::L1),
            "l2" => Ok(NormLinNorm::L2),
            other => Err(Error::Config(format!("unknown normlin norm '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Learnable NormLin weight.
    OLinear,
    /// NormLin weight frozen to the row-softmax of the cross-variate
    /// correlation matrix.
    OLinearC,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::OLinear => "olinear",
            Variant::OLinearC => "olinear_c",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "olinear" => Ok(Variant::OLinear),
            "olinear_c" => Ok(Variant::OLinearC),
            other => Err(Error::Config(format!("unknown variant '{other}'"))),
        }
    }
}

/// Shape and ablation switches of the network.
#[derive(Debug, Clone)]
pub struct OLinearConfig {
    pub n_variates: usize,
    pub lookback: usize,
    pub horizon: usize,
    /// Embedding size `d` of the dimension-extension outer product.
    pub embed_size: usize,
    /// Hidden width `D` of the encoder and block linears.
    pub model_dim: usize,
    pub n_blocks: usize,
    pub normlin_transform: NormLinTransform,
    pub normlin_norm: NormLinNorm,
    pub csl_pre_linear: bool,
    pub csl_post_linear: bool,
    pub variant: Variant,
    pub basis_method: BasisMethod,
}

impl OLinearConfig {
    pub fn new(n_variates: usize, lookback: usize, horizon: usize) -> Self {
        Self {
            n_variates,
            lookback,
            horizon,
            embed_size: 16,
            model_dim: 128,
            n_blocks: 1,
            normlin_transform: NormLinTransform::Softplus,
            normlin_norm: NormLinNorm::L1,
            csl_pre_linear: true,
            csl_post_linear: true,
            variant: Variant::OLinear,
            basis_method: BasisMethod::Eigen,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_variates", self.n_variates),
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("embed_size", self.embed_size),
            ("model_dim", self.model_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.lookback < 2 {
            return Err(Error::Config(
                "lookback must be >= 2 for instance statistics".into(),
            ));
        }
        Ok(())
    }
}

/// A dense layer computing `out = weight * v + bias` along the last axis;
/// `weight` is `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> LinearLayer<T> {
    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![T::zero(); out_dim],
        }
    }

    fn init(out_dim: usize, in_dim: usize, rng: &mut SplitMix64) -> Self {
        let mut layer = Self::zeros(out_dim, in_dim);
        let bound = 1.0 / (in_dim as f64).sqrt();
        for v in layer.weight.data_mut() {
            *v = T::c(rng.uniform(-bound, bound));
        }
        layer
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Scalar> LayerNormParams<T> {
    fn identity(dim: usize) -> Self {
        Self {
            gamma: vec![T::one(); dim],
            beta: vec![T::zero(); dim],
        }
    }

    fn zeros(dim: usize) -> Self {
        Self {
            gamma: vec![T::zero(); dim],
            beta: vec![T::zero(); dim],
        }
    }
}

/// Per-block learnable state: the cross-series learner (pre linear, NormLin
/// weight, post linear, layer norm) and the intra-series learner (two
/// linears and a layer norm).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T> {
    pub csl_pre: LinearLayer<T>,
    pub normlin_w: Matrix<T>,
    pub csl_post: LinearLayer<T>,
    pub csl_norm: LayerNormParams<T>,
    pub isl_lin1: LinearLayer<T>,
    pub isl_lin2: LinearLayer<T>,
    pub isl_norm: LayerNormParams<T>,
}

/// All learnable tensors, in a fixed enumeration order. The same structure
/// doubles as the gradient buffer: [`GradientSet`] mirrors every shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub phi_d: Vec<T>,
    pub encoder: LinearLayer<T>,
    pub blocks: Vec<BlockParams<T>>,
    pub decoder: LinearLayer<T>,
    pub flatten: LinearLayer<T>,
}

/// Gradient buffers, one per learnable tensor, same shapes. Frozen buffers
/// (`q_in`, `q_out`, the OLinear-C mixing matrix) have no slot here and
/// therefore can never receive an update.
pub type GradientSet<T> = ParamSet<T>;

/// Borrowed view of one named tensor.
pub struct TensorView<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

/// Mutable variant of [`TensorView`].
pub struct TensorViewMut<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [T],
}

impl<T: Scalar> ParamSet<T> {
    pub fn zeros(config: &OLinearConfig) -> Self {
        let (n, t, tau) = (config.n_variates, config.lookback, config.horizon);
        let (d, dim) = (config.embed_size, config.model_dim);
        Self {
            phi_d: vec![T::zero(); d],
            encoder: LinearLayer::zeros(dim, t),
            blocks: (0..config.n_blocks)
                .map(|_| BlockParams {
                    csl_pre: LinearLayer::zeros(dim, dim),
                    normlin_w: Matrix::zeros(n, n),
                    csl_post: LinearLayer::zeros(dim, dim),
                    csl_norm: LayerNormParams::zeros(dim),
                    isl_lin1: LinearLayer::zeros(dim, dim),
                    isl_lin2: LinearLayer::zeros(dim, dim),
                    isl_norm: LayerNormParams::zeros(dim),
                })
                .collect(),
            decoder: LinearLayer::zeros(tau, dim),
            flatten: LinearLayer::zeros(tau, d * tau),
        }
    }

    /// Seeded initialization: phi_d all ones (the initial embedding
    /// replicates the series), linear weights uniform in
    /// `(-1/sqrt(fan_in), 1/sqrt(fan_in))` with zero bias, layer norms at
    /// identity, NormLin weight zero (uniform mixing after softplus + L1).
    pub fn init(config: &OLinearConfig, rng: &mut SplitMix64) -> Self {
        let (n, t, tau) = (config.n_variates, config.lookback, config.horizon);
        let (d, dim) = (config.embed_size, config.model_dim);
        Self {
            phi_d: vec![T::one(); d],
            encoder: LinearLayer::init(dim, t, rng),
            blocks: (0..config.n_blocks)
                .map(|_| BlockParams {
                    csl_pre: LinearLayer::init(dim, dim, rng),
                    normlin_w: Matrix::zeros(n, n),
                    csl_post: LinearLayer::init(dim, dim, rng),
                    csl_norm: LayerNormParams::identity(dim),
                    isl_lin1: LinearLayer::init(dim, dim, rng),
                    isl_lin2: LinearLayer::init(dim, dim, rng),
                    isl_norm: LayerNormParams::identity(dim),
                })
                .collect(),
            decoder: LinearLayer::init(tau, dim, rng),
            flatten: LinearLayer::init(tau, d * tau, rng),
        }
    }

    pub fn tensors(&self) -> Vec<TensorView<'_, T>> {
        let mut out = Vec::new();
        out.push(TensorView {
            name: "phi_d".into(),
            shape: vec![self.phi_d.len()],
            data: &self.phi_d,
        });
        push_linear(&mut out, "enc", &self.encoder);
        for (l, b) in self.blocks.iter().enumerate() {
            push_linear(&mut out, &format!("block{l}.csl_pre"), &b.csl_pre);
            out.push(TensorView {
                name: format!("block{l}.normlin_w"),
                shape: vec![b.normlin_w.rows(), b.normlin_w.cols()],
                data: b.normlin_w.data(),
            });
            push_linear(&mut out, &format!("block{l}.csl_post"), &b.csl_post);
            push_norm(&mut out, &format!("block{l}.csl_ln"), &b.csl_norm);
            push_linear(&mut out, &format!("block{l}.isl_lin1"), &b.isl_lin1);
            push_linear(&mut out, &format!("block{l}.isl_lin2"), &b.isl_lin2);
            push_norm(&mut out, &format!("block{l}.isl_ln"), &b.isl_norm);
        }
        push_linear(&mut out, "dec", &self.decoder);
        push_linear(&mut out, "flat", &self.flatten);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_, T>> {
        let mut out = Vec::new();
        out.push(TensorViewMut {
            name: "phi_d".into(),
            shape: vec![self.phi_d.len()],
            data: &mut self.phi_d,
        });
        push_linear_mut(&mut out, "enc", &mut self.encoder);
        for (l, b) in self.blocks.iter_mut().enumerate() {
            push_linear_mut(&mut out, &format!("block{l}.csl_pre"), &mut b.csl_pre);
            let shape = vec![b.normlin_w.rows(), b.normlin_w.cols()];
            out.push(TensorViewMut {
                name: format!("block{l}.normlin_w"),
                shape,
                data: b.normlin_w.data_mut(),
            });
            push_linear_mut(&mut out, &format!("block{l}.csl_post"), &mut b.csl_post);
            push_norm_mut(&mut out, &format!("block{l}.csl_ln"), &mut b.csl_norm);
            push_linear_mut(&mut out, &format!("block{l}.isl_lin1"), &mut b.isl_lin1);
            push_linear_mut(&mut out, &format!("block{l}.isl_lin2"), &mut b.isl_lin2);
            push_norm_mut(&mut out, &format!("block{l}.isl_ln"), &mut b.isl_norm);
        }
        push_linear_mut(&mut out, "dec", &mut self.decoder);
        push_linear_mut(&mut out, "flat", &mut self.flatten);
        out
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }
}

fn push_linear<'a, T: Scalar>(
    out: &mut Vec<TensorView<'a, T>>,
    prefix: &str,
    layer: &'a LinearLayer<T>,
) {
    out.push(TensorView {
        name: format!("{prefix}_w"),
        shape: vec![layer.weight.rows(), layer.weight.cols()],
        data: layer.weight.data(),
    });
    out.push(TensorView {
        name: format!("{prefix}_b"),
        shape: vec![layer.bias.len()],
        data: &layer.bias,
    });
}

fn push_linear_mut<'a, T: Scalar>(
    out: &mut Vec<TensorViewMut<'a, T>>,
    prefix: &str,
    layer: &'a mut LinearLayer<T>,
) {
    let shape = vec![layer.weight.rows(), layer.weight.cols()];
    out.push(TensorViewMut {
        name: format!("{prefix}_w"),
        shape,
        data: layer.weight.data_mut(),
    });
    out.push(TensorViewMut {
        name: format!("{prefix}_b"),
        shape: vec![layer.bias.len()],
        data: &mut layer.bias,
    });
}

fn push_norm<'a, T: Scalar>(
    out: &mut Vec<TensorView<'a, T>>,
    prefix: &str,
    norm: &'a LayerNormParams<T>,
) {
    out.push(TensorView {
        name: format!("{prefix}_gamma"),
        shape: vec![norm.gamma.len()],
        data: &norm.gamma,
    });
    out.push(TensorView {
        name: format!("{prefix}_beta"),
        shape: vec![norm.beta.len()],
        data: &norm.beta,
    });
}

fn push_norm_mut<'a, T: Scalar>(
    out: &mut Vec<TensorViewMut<'a, T>>,
    prefix: &str,
    norm: &'a mut LayerNormParams<T>,
) {
    out.push(TensorViewMut {
        name: format!("{prefix}_gamma"),
        shape: vec![norm.gamma.len()],
        data: &mut norm.gamma,
    });
    out.push(TensorViewMut {
        name: format!("{prefix}_beta"),
        shape: vec![norm.beta.len()],
        data: &mut norm.beta,
    });
}

/// Complete model state: learnable parameters plus frozen buffers.
///
/// `version` is bumped on every optimizer step so a stale forward cache can
/// be detected by [`backward`].
#[derive(Debug, Clone)]
pub struct OLinearParams<T = f64> {
    pub set: ParamSet<T>,
    pub q_in: OrthoBasis<T>,
    pub q_out: OrthoBasis<T>,
    /// Frozen row-stochastic mixing matrix; present iff variant is OLinear-C.
    pub corr_mix: Option<Matrix<T>>,
    pub version: u64,
}

impl<T: Scalar> OLinearParams<T> {
    pub fn new(
        config: &OLinearConfig,
        q_in: OrthoBasis<T>,
        q_out: OrthoBasis<T>,
        corr_mix: Option<Matrix<T>>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if q_in.n != config.lookback {
            return Err(Error::Config(format!(
                "q_in size {} does not match lookback {}",
                q_in.n, config.lookback
            )));
        }
        if q_out.n != config.horizon {
            return Err(Error::Config(format!(
                "q_out size {} does not match horizon {}",
                q_out.n, config.horizon
            )));
        }
        match (config.variant, &corr_mix) {
            (Variant::OLinearC, None) => {
                return Err(Error::Config(
                    "variant olinear_c requires a frozen mixing matrix".into(),
                ))
            }
            (Variant::OLinearC, Some(m)) => {
                if m.rows() != config.n_variates || m.cols() != config.n_variates {
                    return Err(Error::Config("mixing matrix shape mismatch".into()));
                }
            }
            (Variant::OLinear, Some(_)) => {
                return Err(Error::Config(
                    "variant olinear does not take a frozen mixing matrix".into(),
                ))
            }
            (Variant::OLinear, None) => {}
        }
        let mut rng = SplitMix64::derived(seed, 0x494e4954); // "INIT"
        Ok(Self {
            set: ParamSet::init(config, &mut rng),
            q_in,
            q_out,
            corr_mix,
            version: 0,
        })
    }
}
