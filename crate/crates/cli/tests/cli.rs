//! End-to-end tests of the `olinear` binary: full command flows on
//! synthetic CSVs, exit codes, and byte-level reproducibility.

use olinear::checkpoint::Checkpoint;
use olinear::synth;
use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_olinear")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

struct Workspace {
    #[allow(dead_code)]
    dir: tempfile::TempDir,
    config: PathBuf,
    out_dir: PathBuf,
}

/// Write a sinusoid CSV plus a small config pointing at it.
fn workspace(seed: u64, extra: &str) -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("data.csv");
    let ds = synth::sinusoid_dataset::<f64>(seed, 2, 900, 24.0, 10.0, 0.7, 0.1).unwrap();
    std::fs::write(&csv_path, synth::to_csv_string(&ds)).unwrap();
    let out_dir = dir.path().join("out");
    let config = dir.path().join("run.conf");
    let body = format!(
        "# test configuration\n\
         dataset = {}\n\
         output_dir = {}\n\
         lookback = 24\n\
         horizon = 12\n\
         embed_size = 2\n\
         model_dim = 16\n\
         n_blocks = 1\n\
         max_epochs = 3\n\
         patience = 3\n\
         batch_size = 32\n\
         learning_rate = 1e-3\n\
         stride = 2\n\
         seed = 11\n\
         {extra}\n",
        csv_path.display(),
        out_dir.display()
    );
    std::fs::write(&config, body).unwrap();
    Workspace {
        dir,
        config,
        out_dir,
    }
}

fn config_arg(ws: &Workspace) -> String {
    ws.config.display().to_string()
}

#[test]
fn prepare_identity_writes_identity_bases_and_is_idempotent() {
    let ws = workspace(1, "basis_method = identity");
    let out = run(&["prepare", "--config", &config_arg(&ws)]);
    assert_ok(&out);

    let q_in = Checkpoint::load(&ws.out_dir.join("q_in.olck")).unwrap();
    let q = q_in.find("q").unwrap();
    assert_eq!(q.shape, vec![24, 24]);
    for r in 0..24 {
        for c in 0..24 {
            let expected = if r == c { 1.0 } else { 0.0 };
            assert_eq!(q.data[r * 24 + c], expected);
        }
    }
    assert!(ws.out_dir.join("split_manifest.txt").exists());

    // Rerun: bit-identical outputs.
    let before = std::fs::read(ws.out_dir.join("q_in.olck")).unwrap();
    let out = run(&["prepare", "--config", &config_arg(&ws)]);
    assert_ok(&out);
    let after = std::fs::read(ws.out_dir.join("q_in.olck")).unwrap();
    assert_eq!(before, after);
}

#[test]
fn prepare_small_source_fraction_builds_valid_bases() {
    // ETT-shaped data: 7 variates, date column.
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("ett.csv");
    let ds = synth::ar1_dataset::<f64>(9, 0.7, 7, 3000, 0.7, 0.1).unwrap();
    std::fs::write(&csv_path, synth::to_csv_string(&ds)).unwrap();
    let out_dir = dir.path().join("out");
    let config = dir.path().join("run.conf");
    std::fs::write(
        &config,
        format!(
            "dataset = {}\noutput_dir = {}\nlookback = 24\nhorizon = 12\nq_source_fraction = 0.1\n",
            csv_path.display(),
            out_dir.display()
        ),
    )
    .unwrap();
    let out = run(&["prepare", "--config", &config.display().to_string()]);
    assert_ok(&out);
    let ck = Checkpoint::load(&out_dir.join("q_in.olck")).unwrap();
    assert_eq!(ck.echo.get("method").unwrap(), "eigen");
    assert_eq!(ck.echo.get("q_source_fraction").unwrap(), "0.1");
    // Orthogonality of the stored basis.
    let q = ck.find("q").unwrap();
    let n = 24;
    for i in 0..n {
        for j in 0..n {
            let mut dot = 0.0;
            for k in 0..n {
                dot += q.data[k * n + i] * q.data[k * n + j];
            }
            let expected = if i == j { 1.0 } else { 0.0 };
            assert!((dot - expected).abs() < 1e-10);
        }
    }
}

#[test]
fn train_eval_round_trip_reproduces_val_metrics() {
    let ws = workspace(2, "");
    assert_ok(&run(&["train", "--config", &config_arg(&ws)]));
    let ckpt = ws.out_dir.join("checkpoint.olck");
    assert!(ckpt.exists());
    let history = std::fs::read_to_string(ws.out_dir.join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,train_loss,val_mse,val_mae"));

    let out = run(&[
        "eval",
        "--config",
        &config_arg(&ws),
        "--checkpoint",
        &ckpt.display().to_string(),
        "--split",
        "val",
    ]);
    assert_ok(&out);
    let metrics = std::fs::read_to_string(ws.out_dir.join("metrics_val.csv")).unwrap();
    let row: Vec<&str> = metrics.lines().nth(1).unwrap().split(',').collect();
    let (eval_mse, eval_mae): (f64, f64) = (row[0].parse().unwrap(), row[1].parse().unwrap());

    // The checkpoint stores the best epoch; its history row must match the
    // eval numbers exactly (same code path, same windows).
    let mut matched = false;
    for line in history.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (mse, mae): (f64, f64) = (f[2].parse().unwrap(), f[3].parse().unwrap());
        if mse == eval_mse && mae == eval_mae {
            matched = true;
        }
    }
    assert!(
        matched,
        "eval val metrics {eval_mse},{eval_mae} not found in history:\n{history}"
    );
}

#[test]
fn eval_prediction_dump_has_full_shape() {
    let ws = workspace(3, "");
    assert_ok(&run(&["train", "--config", &config_arg(&ws)]));
    let ckpt = ws.out_dir.join("checkpoint.olck").display().to_string();
    assert_ok(&run(&[
        "eval",
        "--config",
        &config_arg(&ws),
        "--checkpoint",
        &ckpt,
    ]));
    let dump = std::fs::read_to_string(ws.out_dir.join("predictions_test.csv")).unwrap();
    let rows = dump.lines().count() - 1;
    // test split: 900 - 720 = 180 steps, T+tau = 36, stride 2 -> 73 windows.
    let windows = (180 - 36) / 2 + 1;
    assert_eq!(rows, windows * 2 * 12, "dump rows {rows}");
}

#[test]
fn determinism_two_runs_bit_identical() {
    let ws = workspace(4, "");
    assert_ok(&run(&["train", "--config", &config_arg(&ws)]));
    let first_ckpt = std::fs::read(ws.out_dir.join("checkpoint.olck")).unwrap();
    let first_hist = std::fs::read(ws.out_dir.join("history.csv")).unwrap();
    assert_ok(&run(&["train", "--config", &config_arg(&ws)]));
    assert_eq!(
        first_ckpt,
        std::fs::read(ws.out_dir.join("checkpoint.olck")).unwrap()
    );
    assert_eq!(
        first_hist,
        std::fs::read(ws.out_dir.join("history.csv")).unwrap()
    );
}

#[test]
fn train_consumes_prepared_bases() {
    let ws = workspace(5, "");
    assert_ok(&run(&["prepare", "--config", &config_arg(&ws)]));
    let q_in_bytes = std::fs::read(ws.out_dir.join("q_in.olck")).unwrap();
    assert_ok(&run(&["train", "--config", &config_arg(&ws)]));
    // Prepared bases are untouched by training.
    assert_eq!(
        q_in_bytes,
        std::fs::read(ws.out_dir.join("q_in.olck")).unwrap()
    );

    // The frozen q_in inside the checkpoint matches the prepared file.
    let ck = Checkpoint::load(&ws.out_dir.join("checkpoint.olck")).unwrap();
    let prepared = Checkpoint::load(&ws.out_dir.join("q_in.olck")).unwrap();
    assert_eq!(
        ck.find("q_in").unwrap().data,
        prepared.find("q").unwrap().data
    );
}

#[test]
fn ablate_basis_prefers_eigen_on_ar1() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("ar1.csv");
    let ds = synth::ar1_dataset::<f64>(41, 0.7, 3, 4000, 0.7, 0.1).unwrap();
    std::fs::write(&csv_path, synth::to_csv_string(&ds)).unwrap();
    let out_dir = dir.path().join("out");
    let config = dir.path().join("run.conf");
    std::fs::write(
        &config,
        format!(
            "dataset = {}\noutput_dir = {}\nlookback = 24\nhorizon = 12\nembed_size = 2\n\
             model_dim = 16\nn_blocks = 1\nmax_epochs = 4\npatience = 4\nbatch_size = 64\n\
             learning_rate = 5e-4\nstride = 4\nseed = 99\n",
            csv_path.display(),
            out_dir.display()
        ),
    )
    .unwrap();
    let out = run(&[
        "ablate",
        "--config",
        &config.display().to_string(),
        "--axis",
        "basis",
    ]);
    assert_ok(&out);
    let table = std::fs::read_to_string(out_dir.join("ablation_basis.csv")).unwrap();
    let mut eigen_mse = None;
    let mut identity_mse = None;
    for line in table.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        match f[0] {
            "eigen" => eigen_mse = Some(f[3].parse::<f64>().unwrap()),
            "identity" => identity_mse = Some(f[3].parse::<f64>().unwrap()),
            _ => {}
        }
    }
    let (eigen, identity) = (eigen_mse.unwrap(), identity_mse.unwrap());
    assert!(
        eigen <= identity,
        "eigen test MSE {eigen} should not exceed identity {identity}"
    );
}

#[test]
fn inspect_reports_ranks_score_and_flops() {
    let ws = workspace(6, "");
    assert_ok(&run(&["train", "--config", &config_arg(&ws)]));
    let ckpt = ws.out_dir.join("checkpoint.olck").display().to_string();
    let out = run(&[
        "inspect",
        "--config",
        &config_arg(&ws),
        "--checkpoint",
        &ckpt,
    ]);
    assert_ok(&out);

    let ranks = std::fs::read_to_string(ws.out_dir.join("inspect_ranks.csv")).unwrap();
    let row: Vec<&str> = ranks.lines().nth(1).unwrap().split(',').collect();
    let rank: usize = row[1].parse().unwrap();
    assert!((1..=2).contains(&rank));

    let summary = std::fs::read_to_string(ws.out_dir.join("inspect_summary.csv")).unwrap();
    // N = 2, D = 16: N^2 D + 2 N D^2 = 64 + 1024 = 1088.
    assert!(summary.contains("flops_normlin_module,1088"), "{summary}");
    assert!(summary.contains("flops_mhsa,2176"), "{summary}");
    let score_line = summary
        .lines()
        .find(|l| l.starts_with("decorrelation_score_test"))
        .unwrap();
    let score: f64 = score_line.split(',').nth(1).unwrap().parse().unwrap();
    assert!(score.is_finite() && score >= 0.0);
}

#[test]
fn exit_codes_distinguish_failure_classes() {
    // Unknown key -> config error (2).
    let ws = workspace(7, "bogus_key = 1");
    let out = run(&["train", "--config", &config_arg(&ws)]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));

    // Missing dataset file -> data error (3).
    let ws = workspace(8, "");
    std::fs::remove_file(ws.dir.path().join("data.csv")).unwrap();
    let out = run(&["train", "--config", &config_arg(&ws)]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    // Non-numeric cell -> data error (3) naming the row.
    let ws = workspace(9, "");
    let csv = ws.dir.path().join("data.csv");
    let mut body = std::fs::read_to_string(&csv).unwrap();
    body = body.replacen("5,", "5,oops_", 1);
    std::fs::write(&csv, body).unwrap();
    let out = run(&["train", "--config", &config_arg(&ws)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-numeric"));

    // Diverging training -> numerical error (4). The step size must be
    // large enough to overflow f64 in the encoder products, since
    // LayerNorm rescales merely-huge activations back to finite range.
    let ws = workspace(10, "learning_rate = 1e200\ngrad_clip = 0");
    let out = run(&["train", "--config", &config_arg(&ws)]);
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    // Bad checkpoint magic -> data error (3).
    let ws = workspace(11, "");
    let fake = ws.dir.path().join("fake.olck");
    std::fs::write(&fake, b"NOPE").unwrap();
    let out = run(&[
        "eval",
        "--config",
        &config_arg(&ws),
        "--checkpoint",
        &fake.display().to_string(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn config_rejects_malformed_lines_and_bad_overrides() {
    let ws = workspace(12, "");
    std::fs::write(&ws.config, "this is not a key value line\n").unwrap();
    let out = run(&["train", "--config", &config_arg(&ws)]);
    assert_eq!(out.status.code(), Some(2));

    let ws = workspace(13, "");
    let out = run(&["train", "--config", &config_arg(&ws), "--set", "seed"]);
    assert_eq!(out.status.code(), Some(2));

    let ws = workspace(14, "");
    let out = run(&["train", "--config", &config_arg(&ws), "--set", "horizon=-3"]);
    assert_eq!(out.status.code(), Some(2));
}

/// `--set` overrides change behavior deterministically: different seeds
/// give different checkpoints, same seed gives the same bytes.
#[test]
fn set_override_controls_seed() {
    let ws = workspace(15, "");
    assert_ok(&run(&[
        "train",
        "--config",
        &config_arg(&ws),
        "--set",
        "seed=1",
    ]));
    let a = std::fs::read(ws.out_dir.join("checkpoint.olck")).unwrap();
    assert_ok(&run(&[
        "train",
        "--config",
        &config_arg(&ws),
        "--set",
        "seed=2",
    ]));
    let b = std::fs::read(ws.out_dir.join("checkpoint.olck")).unwrap();
    assert_ne!(a, b);
    assert_ok(&run(&[
        "train",
        "--config",
        &config_arg(&ws),
        "--set",
        "seed=1",
    ]));
    let c = std::fs::read(ws.out_dir.join("checkpoint.olck")).unwrap();
    assert_eq!(a, c);
}
