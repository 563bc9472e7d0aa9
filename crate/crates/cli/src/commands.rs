//! The five subcommands: prepare, train, eval, ablate, inspect.

use crate::config::RunConfig;
use olinear::checkpoint::{restore_params, save_checkpoint, Checkpoint};
use olinear::data::{lagged_temporal_corr, load_csv, make_windows, variate_corr, Split};
use olinear::error::{Error, Result};
use olinear::eval::{flops_estimate, metrics, weight_rank_diagnostic, MetricsReport};
use olinear::model::{
    build_olinear_c_weight, NormLinNorm, NormLinTransform, OLinearConfig, Variant,
};
use olinear::train::{batch_predictions, prepare_bases, train, ModelBases, TrainConfig};
use olinear::transform::{build_basis, decorrelation_score, BasisMethod, OrthoBasis};
use olinear::{Dataset64, Matrix64, Params64};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

fn load_dataset(config: &RunConfig) -> Result<Dataset64> {
    load_csv(&config.dataset, &config.csv_schema())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn basis_file(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.olck"))
}

fn save_basis_file(
    path: &Path,
    basis: &OrthoBasis<f64>,
    corr: Option<&Matrix64>,
    q_source_fraction: f64,
) -> Result<()> {
    let mut echo = BTreeMap::new();
    echo.insert("method".to_string(), basis.method.name().to_string());
    echo.insert("n".to_string(), basis.n.to_string());
    echo.insert(
        "q_source_fraction".to_string(),
        q_source_fraction.to_string(),
    );
    let mut ck = Checkpoint::new(echo);
    ck.push("q", vec![basis.n, basis.n], basis.q.data().to_vec());
    if let Some(ev) = &basis.eigenvalues {
        ck.push("eigenvalues", vec![ev.len()], ev.clone());
    }
    if let Some(corr) = corr {
        ck.push("corr", vec![corr.rows(), corr.cols()], corr.data().to_vec());
    }
    ck.save(path)
}

fn load_basis_file(path: &Path, expected_n: usize, method: BasisMethod) -> Result<OrthoBasis<f64>> {
    let ck = Checkpoint::load(path)?;
    let stored_method: BasisMethod = ck
        .echo
        .get("method")
        .ok_or_else(|| Error::Checkpoint(format!("{}: missing 'method'", path.display())))?
        .parse()?;
    if stored_method != method {
        return Err(Error::Config(format!(
            "{}: stores a {} basis but the config asks for {}",
            path.display(),
            stored_method.name(),
            method.name()
        )));
    }
    let q = ck
        .find("q")
        .ok_or_else(|| Error::Checkpoint(format!("{}: missing tensor 'q'", path.display())))?;
    if q.shape != [expected_n, expected_n] {
        return Err(Error::Config(format!(
            "{}: basis is {:?}, config needs [{expected_n}, {expected_n}]",
            path.display(),
            q.shape
        )));
    }
    let eigenvalues = ck.find("eigenvalues").map(|t| t.data.clone());
    Ok(OrthoBasis {
        q: Matrix64::from_vec(expected_n, expected_n, q.data.clone())?,
        eigenvalues,
        method,
        n: expected_n,
    })
}

/// Compute the correlation estimates and orthogonal bases, then write them
/// together with a split manifest into the output directory.
pub fn cmd_prepare(config: &RunConfig) -> Result<()> {
    let ds = load_dataset(config)?;
    let model_config = config.model_config(ds.n_variates())?;
    std::fs::create_dir_all(&config.output_dir)?;
    let frac = config.q_source_fraction;

    for (name, n) in [
        ("q_in", model_config.lookback),
        ("q_out", model_config.horizon),
    ] {
        let (basis, corr) = match model_config.basis_method {
            BasisMethod::Eigen => {
                let corr = lagged_temporal_corr(&ds, n, frac)?;
                (
                    build_basis(Some(&corr), BasisMethod::Eigen, n)?,
                    Some(corr.matrix),
                )
            }
            method => (build_basis(None, method, n)?, None),
        };
        save_basis_file(
            &basis_file(&config.output_dir, name),
            &basis,
            corr.as_ref(),
            frac,
        )?;
        println!(
            "wrote {} ({} basis, n = {n})",
            basis_file(&config.output_dir, name).display(),
            model_config.basis_method.name()
        );
    }

    if model_config.variant == Variant::OLinearC {
        let corr_v = variate_corr(&ds, frac)?;
        let mix = build_olinear_c_weight(&corr_v, NormLinTransform::Softmax);
        let mut echo = BTreeMap::new();
        echo.insert("transform".to_string(), "softmax".to_string());
        echo.insert("q_source_fraction".to_string(), frac.to_string());
        let mut ck = Checkpoint::new(echo);
        ck.push(
            "corr_mix",
            vec![mix.rows(), mix.cols()],
            mix.data().to_vec(),
        );
        ck.push(
            "corr",
            vec![corr_v.matrix.rows(), corr_v.matrix.cols()],
            corr_v.matrix.data().to_vec(),
        );
        let path = basis_file(&config.output_dir, "corr_mix");
        ck.save(&path)?;
        println!("wrote {} (frozen cross-variate mixing)", path.display());
    }

    let mut manifest = String::new();
    manifest.push_str(&format!("dataset = {}\n", config.dataset.display()));
    manifest.push_str(&format!("n_variates = {}\n", ds.n_variates()));
    manifest.push_str(&format!("n_steps = {}\n", ds.n_steps()));
    manifest.push_str(&format!("train_end = {}\n", ds.train_end));
    manifest.push_str(&format!("val_end = {}\n", ds.val_end));
    manifest.push_str(&format!("lookback = {}\n", model_config.lookback));
    manifest.push_str(&format!("horizon = {}\n", model_config.horizon));
    manifest.push_str(&format!("q_source_fraction = {frac}\n"));
    manifest.push_str(&format!("variates = {}\n", ds.names.join(",")));
    let manifest_path = config.output_dir.join("split_manifest.txt");
    write_text(&manifest_path, &manifest)?;
    println!("wrote {}", manifest_path.display());
    Ok(())
}

/// Load previously prepared bases when present, otherwise compute them.
fn obtain_bases(
    config: &RunConfig,
    model_config: &OLinearConfig,
    ds: &Dataset64,
) -> Result<ModelBases<f64>> {
    let q_in_path = basis_file(&config.output_dir, "q_in");
    let q_out_path = basis_file(&config.output_dir, "q_out");
    let mix_path = basis_file(&config.output_dir, "corr_mix");
    let need_mix = model_config.variant == Variant::OLinearC;
    if q_in_path.exists() && q_out_path.exists() && (!need_mix || mix_path.exists()) {
        let q_in = load_basis_file(&q_in_path, model_config.lookback, model_config.basis_method)?;
        let q_out = load_basis_file(&q_out_path, model_config.horizon, model_config.basis_method)?;
        let corr_mix = if need_mix {
            let ck = Checkpoint::load(&mix_path)?;
            let t = ck.find("corr_mix").ok_or_else(|| {
                Error::Checkpoint(format!("{}: missing tensor 'corr_mix'", mix_path.display()))
            })?;
            let n = model_config.n_variates;
            if t.shape != [n, n] {
                return Err(Error::Config(format!(
                    "{}: mixing matrix is {:?}, config needs [{n}, {n}]",
                    mix_path.display(),
                    t.shape
                )));
            }
            Some(Matrix64::from_vec(n, n, t.data.clone())?)
        } else {
            None
        };
        return Ok(ModelBases {
            q_in,
            q_out,
            corr_mix,
        });
    }
    prepare_bases(ds, model_config, config.q_source_fraction)
}

/// Train a model and write the checkpoint plus the per-epoch history CSV.
pub fn cmd_train(config: &RunConfig) -> Result<()> {
    let ds = load_dataset(config)?;
    let model_config = config.model_config(ds.n_variates())?;
    let train_config: TrainConfig = config.train_config();
    std::fs::create_dir_all(&config.output_dir)?;
    let bases = obtain_bases(config, &model_config, &ds)?;
    let (params, history) = train(&ds, &model_config, &train_config, &bases)?;

    let ckpt_path = config.output_dir.join("checkpoint.olck");
    save_checkpoint(&params, &config.echo(ds.n_variates()), &ckpt_path)?;
    let history_path = config.output_dir.join("history.csv");
    write_text(&history_path, &history.to_csv())?;

    let best = history
        .epochs
        .iter()
        .find(|e| e.epoch == history.best_epoch)
        .ok_or_else(|| Error::Numerical("empty training history".into()))?;
    println!("wrote {}", ckpt_path.display());
    println!("wrote {}", history_path.display());
    println!(
        "best epoch {} of {} (early stop: {}): val_mse {} val_mae {}",
        history.best_epoch,
        history.epochs.len(),
        history.stopped_early,
        best.val_mse,
        best.val_mae
    );
    Ok(())
}

fn load_model(
    config: &RunConfig,
    checkpoint: &Path,
    ds: &Dataset64,
) -> Result<(OLinearConfig, Params64)> {
    let model_config = config.model_config(ds.n_variates())?;
    let ck = Checkpoint::load(checkpoint)?;
    let params = restore_params::<f64>(&ck, &model_config)?;
    Ok((model_config, params))
}

/// Evaluate a checkpoint on one split; writes the metrics CSV and a
/// per-window prediction dump.
pub fn cmd_eval(config: &RunConfig, checkpoint: &Path, split: Split) -> Result<MetricsReport> {
    let ds = load_dataset(config)?;
    let (model_config, params) = load_model(config, checkpoint, &ds)?;
    std::fs::create_dir_all(&config.output_dir)?;

    let windows = make_windows(
        &ds,
        split,
        model_config.lookback,
        model_config.horizon,
        config.stride,
    )?;
    let preds = batch_predictions(&params, &model_config, &windows.inputs, config.batch_size)?;
    let report = metrics(&preds, &windows.targets)?;

    let metrics_path = config
        .output_dir
        .join(format!("metrics_{}.csv", split.name()));
    write_text(
        &metrics_path,
        &format!("{}\n{}\n", MetricsReport::csv_header(), report.csv_row()),
    )?;

    let mut dump = String::from("window,variate,step,prediction,target\n");
    let (w, n, tau) = preds.dims();
    for b in 0..w {
        for v in 0..n {
            for t in 0..tau {
                dump.push_str(&format!(
                    "{b},{v},{t},{},{}\n",
                    preds.get(b, v, t),
                    windows.targets.get(b, v, t)
                ));
            }
        }
    }
    let dump_path = config
        .output_dir
        .join(format!("predictions_{}.csv", split.name()));
    write_text(&dump_path, &dump)?;

    println!("split: {} ({} windows)", split.name(), w);
    println!("{}", report.table());
    println!("wrote {}", metrics_path.display());
    println!("wrote {}", dump_path.display());
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    Basis,
    Normlin,
    CslLinear,
    Variant,
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basis" => Ok(AblationAxis::Basis),
            "normlin" => Ok(AblationAxis::Normlin),
            "csl_linear" => Ok(AblationAxis::CslLinear),
            "variant" => Ok(AblationAxis::Variant),
            other => Err(Error::Config(format!(
                "unknown ablation axis '{other}' (expected basis|normlin|csl_linear|variant)"
            ))),
        }
    }
}

/// Sweep one configuration axis under a shared seed and report val/test
/// MSE+MAE per setting.
pub fn cmd_ablate(config: &RunConfig, axis: AblationAxis) -> Result<()> {
    let ds = load_dataset(config)?;
    std::fs::create_dir_all(&config.output_dir)?;

    let settings: Vec<(String, RunConfig)> = match axis {
        AblationAxis::Basis => [
            BasisMethod::Eigen,
            BasisMethod::Fourier,
            BasisMethod::Identity,
        ]
        .into_iter()
        .map(|m| {
            let mut c = config.clone();
            c.basis_method = m;
            (m.name().to_string(), c)
        })
        .collect(),
        AblationAxis::Normlin => {
            let mut out = Vec::new();
            for transform in NormLinTransform::ALL {
                for norm in NormLinNorm::ALL {
                    let mut c = config.clone();
                    c.normlin_transform = transform;
                    c.normlin_norm = norm;
                    out.push((format!("{}+{}", transform.name(), norm.name()), c));
                }
            }
            out
        }
        AblationAxis::CslLinear => {
            let mut out = Vec::new();
            for (pre, post) in [(true, true), (true, false), (false, true), (false, false)] {
                let mut c = config.clone();
                c.csl_pre_linear = pre;
                c.csl_post_linear = post;
                out.push((format!("pre={pre},post={post}"), c));
            }
            out
        }
        AblationAxis::Variant => [Variant::OLinear, Variant::OLinearC]
            .into_iter()
            .map(|v| {
                let mut c = config.clone();
                c.variant = v;
                (v.name().to_string(), c)
            })
            .collect(),
    };

    let mut csv = String::from("setting,val_mse,val_mae,test_mse,test_mae\n");
    println!(
        "{:<22} {:>12} {:>12} {:>12} {:>12}",
        "setting", "val_mse", "val_mae", "test_mse", "test_mae"
    );
    for (name, run) in settings {
        let model_config = run.model_config(ds.n_variates())?;
        let bases = prepare_bases(&ds, &model_config, run.q_source_fraction)?;
        // The shared seed gives every setting identical init draws and
        // identical epoch shuffles.
        let (params, _) = train(&ds, &model_config, &run.train_config(), &bases)?;
        let mut row = vec![name.clone()];
        let mut printed = format!("{name:<22}");
        for split in [Split::Val, Split::Test] {
            let windows = make_windows(
                &ds,
                split,
                model_config.lookback,
                model_config.horizon,
                run.stride,
            )?;
            let preds = batch_predictions(&params, &model_config, &windows.inputs, run.batch_size)?;
            let report = metrics(&preds, &windows.targets)?;
            row.push(report.mse.to_string());
            row.push(report.mae.to_string());
            printed.push_str(&format!(" {:>12.6} {:>12.6}", report.mse, report.mae));
        }
        println!("{printed}");
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    let axis_name = match axis {
        AblationAxis::Basis => "basis",
        AblationAxis::Normlin => "normlin",
        AblationAxis::CslLinear => "csl_linear",
        AblationAxis::Variant => "variant",
    };
    let path = config.output_dir.join(format!("ablation_{axis_name}.csv"));
    write_text(&path, &csv)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Rank diagnostics of the effective mixing weights, the decorrelation
/// score of the input basis on test windows, and the FLOPs estimate for
/// the configured shape.
pub fn cmd_inspect(config: &RunConfig, checkpoint: &Path) -> Result<()> {
    let ds = load_dataset(config)?;
    let (model_config, params) = load_model(config, checkpoint, &ds)?;
    std::fs::create_dir_all(&config.output_dir)?;

    let ranks = weight_rank_diagnostic(&params, &model_config)?;
    let mut rank_csv = String::from("block,numerical_rank,effective_rank\n");
    println!(
        "{:<6} {:>15} {:>15}",
        "block", "numerical_rank", "effective_rank"
    );
    for r in &ranks {
        rank_csv.push_str(&format!(
            "{},{},{}\n",
            r.block, r.numerical_rank, r.effective_rank
        ));
        println!(
            "{:<6} {:>15} {:>15.4}",
            r.block, r.numerical_rank, r.effective_rank
        );
    }
    let ranks_path = config.output_dir.join("inspect_ranks.csv");
    write_text(&ranks_path, &rank_csv)?;

    let windows = make_windows(
        &ds,
        Split::Test,
        model_config.lookback,
        model_config.horizon,
        config.stride,
    )?;
    let score = decorrelation_score(&windows, &params.q_in)?;
    let flops = flops_estimate(
        model_config.n_variates as u64,
        model_config.model_dim as u64,
        8,
    );

    let mut summary = String::from("key,value\n");
    summary.push_str(&format!("decorrelation_score_test,{score}\n"));
    summary.push_str(&format!("flops_normlin_module,{}\n", flops.normlin_module));
    summary.push_str(&format!("flops_mhsa,{}\n", flops.mhsa));
    summary.push_str(&format!("flops_heads,{}\n", flops.heads));
    let summary_path = config.output_dir.join("inspect_summary.csv");
    write_text(&summary_path, &summary)?;

    println!(
        "decorrelation score (test windows, {} basis): {score:.6}",
        params.q_in.method.name()
    );
    println!(
        "flops per token batch: normlin {} vs mhsa {} (h = {})",
        flops.normlin_module, flops.mhsa, flops.heads
    );
    println!("wrote {}", ranks_path.display());
    println!("wrote {}", summary_path.display());
    Ok(())
}
