//! Synthetic series generators for smoke tests and diagnostics.

use crate::data::TimeSeriesDataset;
use crate::error::Result;
use crate::linalg::Matrix;
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

/// Stationary AR(1) with unit marginal variance per variate.
pub fn ar1_dataset<T: Scalar>(
    seed: u64,
    rho: f64,
    n_variates: usize,
    steps: usize,
    train_ratio: f64,
    val_ratio: f64,
) -> Result<TimeSeriesDataset<T>> {
    let mut rng = SplitMix64::derived(seed, 0x415231); // "AR1"
    let noise = (1.0 - rho * rho).sqrt();
    let mut values = Matrix::zeros(n_variates, steps);
    for v in 0..n_variates {
        let mut x = rng.standard_normal();
        for t in 0..steps {
            values.set(v, t, T::c(x));
            x = rho * x + noise * rng.standard_normal();
        }
    }
    let names = (0..n_variates).map(|i| format!("ar{i}")).collect();
    TimeSeriesDataset::new(names, values, train_ratio, val_ratio)
}

/// Phase-shifted sinusoids plus white noise at the requested
/// signal-to-noise ratio (signal power over noise power).
pub fn sinusoid_dataset<T: Scalar>(
    seed: u64,
    n_variates: usize,
    steps: usize,
    period: f64,
    snr: f64,
    train_ratio: f64,
    val_ratio: f64,
) -> Result<TimeSeriesDataset<T>> {
    let mut rng = SplitMix64::derived(seed, 0x53494e45); // "SINE"
    let noise_std = (0.5 / snr).sqrt(); // unit-amplitude sine has power 1/2
    let mut values = Matrix::zeros(n_variates, steps);
    for v in 0..n_variates {
        let phase = v as f64 * std::f64::consts::FRAC_PI_3;
        for t in 0..steps {
            let x = (2.0 * std::f64::consts::PI * t as f64 / period + phase).sin()
                + noise_std * rng.standard_normal();
            values.set(v, t, T::c(x));
        }
    }
    let names = (0..n_variates).map(|i| format!("s{i}")).collect();
    TimeSeriesDataset::new(names, values, train_ratio, val_ratio)
}

/// Render a dataset back to the ingestion CSV format (integer timestamps).
pub fn to_csv_string<T: Scalar>(ds: &TimeSeriesDataset<T>) -> String {
    let mut out = String::from("date");
    for name in &ds.names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for t in 0..ds.n_steps() {
        out.push_str(&t.to_string());
        for v in 0..ds.n_variates() {
            out.push(',');
            out.push_str(&format!("{:?}", ds.values.get(v, t).to_f64_c()));
        }
        out.push('\n');
    }
    out
}
