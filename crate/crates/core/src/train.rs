//! Loss functions, the Adam optimizer, and the training loop with early
//! stopping. Everything is driven by a single seed: parameter
//! initialization and epoch shuffling use derived SplitMix64 streams, so a
//! (seed, config, data) triple fully determines every parameter byte.

use crate::data::{make_windows, variate_corr, Split, TimeSeriesDataset, WindowBatch};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Tensor3};
use crate::model::{
    backward, build_olinear_c_weight, forward, GradientSet, NormLinTransform, OLinearConfig,
    OLinearParams, Variant,
};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::transform::{build_basis, BasisMethod, OrthoBasis};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mae,
    /// Absolute error with per-horizon-step weights `(t+1)^(-exponent)`,
    /// normalized to mean one. A stand-in for the horizon-weighted L1 of
    /// the reference training recipe; exponent 0 recovers plain MAE.
    WeightedL1,
    Mse,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mae => "mae",
            LossKind::WeightedL1 => "weighted_l1",
            LossKind::Mse => "mse",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mae" => Ok(LossKind::Mae),
            "weighted_l1" => Ok(LossKind::WeightedL1),
            "mse" => Ok(LossKind::Mse),
            other => Err(Error::Config(format!("unknown loss '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub loss: LossKind,
    pub horizon_weight_exponent: f64,
    /// Global-norm gradient clip; `None` disables.
    pub grad_clip: Option<f64>,
    /// Window stride for train/val window enumeration.
    pub stride: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            batch_size: 32,
            max_epochs: 50,
            patience: 10,
            loss: LossKind::WeightedL1,
            horizon_weight_exponent: 0.5,
            grad_clip: Some(5.0),
            stride: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.stride == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "batch_size, stride and max_epochs must be >= 1".into(),
            ));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        Ok(())
    }
}

/// Scalar loss and its gradient w.r.t. the predictions.
pub fn loss_and_grad<T: Scalar>(
    pred: &Tensor3<T>,
    target: &Tensor3<T>,
    kind: LossKind,
    exponent: f64,
) -> Result<(f64, Tensor3<T>)> {
    if pred.dims() != target.dims() {
        return Err(Error::shape(
            "loss_and_grad",
            format!("{:?} vs {:?}", pred.dims(), target.dims()),
        ));
    }
    let (b, n, tau) = pred.dims();
    let count = (b * n * tau) as f64;
    let inv_count = T::c(1.0 / count);
    let mut grad = Tensor3::zeros(b, n, tau);
    let mut loss = 0.0;

    // Horizon-step weights, mean-one normalized.
    let weights: Vec<f64> = match kind {
        LossKind::WeightedL1 => {
            let raw: Vec<f64> = (0..tau).map(|t| ((t + 1) as f64).powf(-exponent)).collect();
            let mean = raw.iter().sum::<f64>() / tau as f64;
            raw.into_iter().map(|w| w / mean).collect()
        }
        _ => vec![1.0; tau],
    };

    for i in 0..b {
        for j in 0..n {
            let p = pred.lane(i, j);
            let t = target.lane(i, j);
            let g = grad.lane_mut(i, j);
            for s in 0..tau {
                let e = p[s] - t[s];
                match kind {
                    LossKind::Mse => {
                        loss += e.to_f64_c() * e.to_f64_c();
                        g[s] = T::c(2.0) * e * inv_count;
                    }
                    LossKind::Mae | LossKind::WeightedL1 => {
                        let w = T::c(weights[s]);
                        loss += weights[s] * e.to_f64_c().abs();
                        g[s] = w * e.signum_or_zero() * inv_count;
                    }
                }
            }
        }
    }
    Ok((loss / count, grad))
}

trait SignumOrZero {
    fn signum_or_zero(self) -> Self;
}

impl<T: Scalar> SignumOrZero for T {
    fn signum_or_zero(self) -> Self {
        if self == T::zero() {
            T::zero()
        } else {
            self.signum()
        }
    }
}

/// Per-tensor first/second moment buffers plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &OLinearParams<T>) -> Self {
        let shapes: Vec<usize> = params.set.tensors().iter().map(|t| t.data.len()).collect();
        Self {
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One bias-corrected Adam update over every learnable tensor. Frozen
/// buffers are not part of the parameter set and stay untouched.
pub fn adam_step<T: Scalar>(
    params: &mut OLinearParams<T>,
    grads: &GradientSet<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    state.t += 1;
    let beta1 = T::c(ADAM_BETA1);
    let beta2 = T::c(ADAM_BETA2);
    let eps = T::c(ADAM_EPS);
    let one = T::one();
    let bias1 = T::c(1.0 - ADAM_BETA1.powi(state.t as i32));
    let bias2 = T::c(1.0 - ADAM_BETA2.powi(state.t as i32));
    let lr_t = T::c(lr);

    let gviews = grads.tensors();
    let mut pviews = params.set.tensors_mut();
    if gviews.len() != pviews.len() || gviews.len() != state.m.len() {
        return Err(Error::input(
            "adam_step",
            "gradient/state tensor count mismatch",
        ));
    }
    for (ti, pview) in pviews.iter_mut().enumerate() {
        let g = gviews[ti].data;
        if g.len() != pview.data.len() {
            return Err(Error::input(
                "adam_step",
                format!("tensor '{}' shape changed between steps", pview.name),
            ));
        }
        let m = &mut state.m[ti];
        let v = &mut state.v[ti];
        for i in 0..g.len() {
            m[i] = beta1 * m[i] + (one - beta1) * g[i];
            v[i] = beta2 * v[i] + (one - beta2) * g[i] * g[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            pview.data[i] -= lr_t * m_hat / (v_hat.sqrt() + eps);
        }
    }
    drop(pviews);
    params.version += 1;
    Ok(())
}

/// Scale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm<T: Scalar>(grads: &mut GradientSet<T>, max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for view in grads.tensors() {
        for &g in view.data {
            let gf = g.to_f64_c();
            sq += gf * gf;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = T::c(max_norm / norm);
        for view in grads.tensors_mut() {
            for g in view.data {
                *g *= scale;
            }
        }
    }
    norm
}

/// Frozen buffers of one model: the two orthogonal bases and, for
/// OLinear-C, the fixed mixing matrix.
#[derive(Debug, Clone)]
pub struct ModelBases<T = f64> {
    pub q_in: OrthoBasis<T>,
    pub q_out: OrthoBasis<T>,
    pub corr_mix: Option<Matrix<T>>,
}

/// Estimate the correlation matrices on the training split (optionally on
/// its first `q_source_fraction`) and build the frozen buffers.
pub fn prepare_bases<T: Scalar>(
    ds: &TimeSeriesDataset<T>,
    config: &OLinearConfig,
    q_source_fraction: f64,
) -> Result<ModelBases<T>> {
    let q_in = match config.basis_method {
        BasisMethod::Eigen => {
            let corr = crate::data::lagged_temporal_corr(ds, config.lookback, q_source_fraction)?;
            build_basis(Some(&corr), BasisMethod::Eigen, config.lookback)?
        }
        method => build_basis(None, method, config.lookback)?,
    };
    let q_out = match config.basis_method {
        BasisMethod::Eigen => {
            let corr = crate::data::lagged_temporal_corr(ds, config.horizon, q_source_fraction)?;
            build_basis(Some(&corr), BasisMethod::Eigen, config.horizon)?
        }
        method => build_basis(None, method, config.horizon)?,
    };
    let corr_mix = match config.variant {
        Variant::OLinearC => {
            let corr_v = variate_corr(ds, q_source_fraction)?;
            Some(build_olinear_c_weight(&corr_v, NormLinTransform::Softmax))
        }
        Variant::OLinear => None,
    };
    Ok(ModelBases {
        q_in,
        q_out,
        corr_mix,
    })
}

/// Copy the selected windows out of a batch.
fn gather<T: Scalar>(batch: &WindowBatch<T>, indices: &[usize]) -> WindowBatch<T> {
    let (_, n, t) = batch.inputs.dims();
    let (_, _, tau) = batch.targets.dims();
    let mut inputs = Tensor3::zeros(indices.len(), n, t);
    let mut targets = Tensor3::zeros(indices.len(), n, tau);
    for (row, &src) in indices.iter().enumerate() {
        for v in 0..n {
            inputs
                .lane_mut(row, v)
                .copy_from_slice(batch.inputs.lane(src, v));
            targets
                .lane_mut(row, v)
                .copy_from_slice(batch.targets.lane(src, v));
        }
    }
    WindowBatch { inputs, targets }
}

/// Run the model over all windows in fixed-size batches and stack the
/// predictions.
pub fn batch_predictions<T: Scalar>(
    params: &OLinearParams<T>,
    config: &OLinearConfig,
    inputs: &Tensor3<T>,
    batch_size: usize,
) -> Result<Tensor3<T>> {
    let (w, n, t) = inputs.dims();
    let tau = config.horizon;
    let mut out = Tensor3::zeros(w, n, tau);
    let mut start = 0;
    while start < w {
        let end = (start + batch_size).min(w);
        let mut chunk = Tensor3::zeros(end - start, n, t);
        for row in start..end {
            for v in 0..n {
                chunk
                    .lane_mut(row - start, v)
                    .copy_from_slice(inputs.lane(row, v));
            }
        }
        let (pred, _) = forward(&chunk, params, config)?;
        for row in start..end {
            for v in 0..n {
                out.lane_mut(row, v)
                    .copy_from_slice(pred.lane(row - start, v));
            }
        }
        start = end;
    }
    Ok(out)
}

fn mse_mae<T: Scalar>(pred: &Tensor3<T>, target: &Tensor3<T>) -> (f64, f64) {
    let mut se = 0.0;
    let mut ae = 0.0;
    for (p, t) in pred.data().iter().zip(target.data()) {
        let e = p.to_f64_c() - t.to_f64_c();
        se += e * e;
        ae += e.abs();
    }
    let count = pred.data().len() as f64;
    (se / count, ae / count)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: f64,
    pub val_mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_mse,val_mae\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch, e.train_loss, e.val_mse, e.val_mae
            ));
        }
        out
    }
}

/// Train on the train split, evaluate on the validation split each epoch,
/// keep the best-validation parameters, and stop after `patience` epochs
/// without improvement.
pub fn train<T: Scalar>(
    ds: &TimeSeriesDataset<T>,
    model_config: &OLinearConfig,
    train_config: &TrainConfig,
    bases: &ModelBases<T>,
) -> Result<(OLinearParams<T>, TrainHistory)> {
    model_config.validate()?;
    train_config.validate()?;
    let train_windows = make_windows(
        ds,
        Split::Train,
        model_config.lookback,
        model_config.horizon,
        train_config.stride,
    )?;
    let val_windows = make_windows(
        ds,
        Split::Val,
        model_config.lookback,
        model_config.horizon,
        train_config.stride,
    )?;

    let mut params = OLinearParams::new(
        model_config,
        bases.q_in.clone(),
        bases.q_out.clone(),
        bases.corr_mix.clone(),
        train_config.seed,
    )?;
    let mut adam = AdamState::new(&params);
    let mut shuffle_rng = SplitMix64::derived(train_config.seed, 0x53485546); // "SHUF"

    let n_train = train_windows.n_windows();
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best: Option<OLinearParams<T>> = None;
    let mut best_mae = f64::INFINITY;
    let mut bad_epochs = 0usize;

    for epoch in 1..=train_config.max_epochs {
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for chunk in order.chunks(train_config.batch_size) {
            let batch = gather(&train_windows, chunk);
            let (pred, cache) = forward(&batch.inputs, &params, model_config)?;
            let (loss, d_pred) = loss_and_grad(
                &pred,
                &batch.targets,
                train_config.loss,
                train_config.horizon_weight_exponent,
            )?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "training diverged at epoch {epoch}: loss = {loss}"
                )));
            }
            let mut grads = backward(&params, model_config, &cache, &d_pred)?;
            if let Some(max_norm) = train_config.grad_clip {
                clip_global_norm(&mut grads, max_norm);
            }
            adam_step(&mut params, &grads, &mut adam, train_config.learning_rate)?;
            loss_sum += loss * chunk.len() as f64;
            loss_count += chunk.len();
        }
        let train_loss = loss_sum / loss_count.max(1) as f64;

        let val_pred = batch_predictions(
            &params,
            model_config,
            &val_windows.inputs,
            train_config.batch_size,
        )?;
        let (val_mse, val_mae) = mse_mae(&val_pred, &val_windows.targets);
        if !val_mse.is_finite() {
            return Err(Error::Numerical(format!(
                "validation diverged at epoch {epoch}: mse = {val_mse}"
            )));
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_mse,
            val_mae,
        });

        if val_mae < best_mae {
            best_mae = val_mae;
            best = Some(params.clone());
            history.best_epoch = epoch;
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= train_config.patience {
                history.stopped_early = true;
                break;
            }
        }
    }

    let best = best.ok_or_else(|| Error::Numerical("no epoch completed".into()))?;
    Ok((best, history))
}
