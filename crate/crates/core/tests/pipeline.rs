//! Cross-module integration: train, checkpoint, restore, re-evaluate, and
//! run the diagnostics on a trained model.

#![allow(clippy::needless_range_loop)]

use olinear::checkpoint::{restore_params, save_checkpoint, Checkpoint};
use olinear::data::{make_windows, Split};
use olinear::eval::{metrics, weight_rank_diagnostic};
use olinear::model::OLinearConfig;
use olinear::synth;
use olinear::train::{batch_predictions, prepare_bases, train, TrainConfig};
use olinear::transform::{decorrelation_score, BasisMethod};
use std::collections::BTreeMap;

fn toy_setup() -> (olinear::Dataset64, OLinearConfig, TrainConfig) {
    let ds = synth::sinusoid_dataset::<f64>(77, 3, 1200, 24.0, 8.0, 0.7, 0.1).unwrap();
    let model_config = OLinearConfig {
        embed_size: 2,
        model_dim: 16,
        n_blocks: 2,
        basis_method: BasisMethod::Eigen,
        ..OLinearConfig::new(3, 24, 12)
    };
    let train_config = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 32,
        max_epochs: 4,
        patience: 4,
        stride: 2,
        seed: 3,
        ..TrainConfig::default()
    };
    (ds, model_config, train_config)
}

/// The concurrency contract: datasets, bases, parameters, and caches are
/// plain data without interior mutability, so they are safe to share or
/// move across threads.
#[test]
fn core_types_are_send_and_sync() {
    fn assert_send_sync<T: Send + Sync>() {}
    assert_send_sync::<olinear::Dataset64>();
    assert_send_sync::<olinear::Windows64>();
    assert_send_sync::<olinear::Basis64>();
    assert_send_sync::<olinear::Params64>();
    assert_send_sync::<olinear::Grads64>();
    assert_send_sync::<olinear::model::ForwardCache<f64>>();
    assert_send_sync::<olinear::data::CorrEstimate<f64>>();
}

#[test]
fn checkpoint_restores_exact_predictions() {
    let (ds, model_config, train_config) = toy_setup();
    let bases = prepare_bases(&ds, &model_config, 1.0).unwrap();
    let (params, _) = train(&ds, &model_config, &train_config, &bases).unwrap();

    let test = make_windows(&ds, Split::Test, 24, 12, 2).unwrap();
    let before = batch_predictions(&params, &model_config, &test.inputs, 64).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.olck");
    save_checkpoint(&params, &BTreeMap::new(), &path).unwrap();
    let restored = restore_params::<f64>(&Checkpoint::load(&path).unwrap(), &model_config).unwrap();
    let after = batch_predictions(&restored, &model_config, &test.inputs, 64).unwrap();
    assert_eq!(before.data(), after.data());

    let report = metrics(&after, &test.targets).unwrap();
    assert!(report.mse.is_finite() && report.mse >= 0.0);
}

#[test]
fn diagnostics_run_on_a_trained_model() {
    let (ds, model_config, train_config) = toy_setup();
    let bases = prepare_bases(&ds, &model_config, 1.0).unwrap();
    let (params, _) = train(&ds, &model_config, &train_config, &bases).unwrap();

    // Rank is recorded per block; no threshold asserted for a trained toy.
    let ranks = weight_rank_diagnostic(&params, &model_config).unwrap();
    assert_eq!(ranks.len(), 2);
    for r in &ranks {
        assert!(r.numerical_rank >= 1 && r.numerical_rank <= 3);
        assert!(r.effective_rank >= 1.0 - 1e-9 && r.effective_rank <= 3.0 + 1e-9);
    }

    // The eigen basis decorrelates the very windows whose statistics
    // produced it.
    let test = make_windows(&ds, Split::Train, 24, 12, 2).unwrap();
    let eigen_score = decorrelation_score(&test, &params.q_in).unwrap();
    let identity = olinear::transform::build_basis::<f64>(None, BasisMethod::Identity, 24).unwrap();
    let identity_score = decorrelation_score(&test, &identity).unwrap();
    assert!(eigen_score < identity_score);
}
