use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use daf::autodiff::OpKind;
use daf::data::{
    assemble_predictions, load_csv, make_windows, metrics, synth_series, Forecast, NormalizationState, SynthKind,
    TimeSeriesTable, Units,
};
use daf::model::{check_model_gradients, Forecaster, ModelConfig};
use daf::train::{predict_windows, write_loss_history, Checkpoint, DataMeta, Trainer};
use daf::{Error, Result, Tensor};
use log::info;
use serde_json::json;

use crate::config::RunConfig;
use crate::{GradcheckArgs, PredictArgs, Split, SynthArgs, TrainArgs};

/// Selected raw columns split chronologically and normalized with the
/// training rows' range.
struct Prepared {
    train: TimeSeriesTable,
    test: TimeSeriesTable,
    state: NormalizationState,
}

/// Loads the data named by `config` and writes every data-derived choice
/// (columns, targets, split sizes, input width) back into it.
fn prepare(config: &mut RunConfig) -> Result<Prepared> {
    let mut raw = load_csv(config.data_path()?)?;
    if let Some(cols) = &config.columns {
        raw = raw.select(cols)?;
    }
    config.columns = Some(raw.names().to_vec());
    if config.targets.is_empty() {
        config.targets = vec![raw.names()[0].clone()];
    }
    let target_cols = raw.column_indices(&config.targets)?;
    let train_rows = config.train_rows.unwrap_or(raw.len() * 3 / 4);
    let test_rows = config.test_rows.unwrap_or(raw.len().saturating_sub(train_rows));
    config.train_rows = Some(train_rows);
    config.test_rows = Some(test_rows);
    config.model.d_input = raw.width();
    config.model.target_columns = target_cols;
    config.model.validate()?;

    let (train, test) = raw.split(train_rows, test_rows)?;
    let state = NormalizationState::fit(train.values())?;
    Ok(Prepared { train: train.normalize(&state)?, test: test.normalize(&state)?, state })
}

/// Model forecast over one split with aligned truth and persistence
/// estimates, all in normalized units. Rows estimating padding are dropped.
struct Scored {
    prediction: Forecast,
    truth: Forecast,
    persistence: Tensor,
}

fn score(model: &Forecaster, table: &TimeSeriesTable, pad: bool) -> Result<Scored> {
    let cfg = model.config();
    let data = make_windows(table, cfg.window, &cfg.target_columns, pad)?;
    let outputs = predict_windows(model, &data)?;
    let prediction = assemble_predictions(&outputs, &data)?.within(table.len())?;
    let truth = data.assembled_targets()?.within(table.len())?;
    // Row k estimates index first_index + k + 1; persistence repeats index first_index + k.
    let persistence = Tensor::from_fn(prediction.len(), cfg.target_columns.len(), |k, j| {
        table.values().get(prediction.first_index + k, cfg.target_columns[j])
    });
    Ok(Scored { prediction, truth, persistence })
}

fn predictions_csv(scored: &Scored, offset: usize, meta: &DataMeta, target_cols: &[usize]) -> String {
    let mut out = String::from("index,target,truth,prediction\n");
    let state = &meta.normalization;
    for (k, index) in scored.prediction.target_indices().enumerate() {
        for (j, (&c, name)) in target_cols.iter().zip(&meta.targets).enumerate() {
            let truth = state.denormalize_value(c, scored.truth.values.get(k, j));
            let pred = state.denormalize_value(c, scored.prediction.values.get(k, j));
            let _ = writeln!(out, "{},{name},{truth},{pred}", offset + index);
        }
    }
    out
}

fn metrics_json(
    scored: &Scored,
    split: Split,
    offset: usize,
    meta: &DataMeta,
    target_cols: &[usize],
) -> Result<String> {
    let state = &meta.normalization;
    let truth = &scored.truth.values;
    let report = |pred: &Tensor| -> Result<_> {
        Ok((
            metrics(pred, truth, state, target_cols, Units::Normalized)?,
            metrics(pred, truth, state, target_cols, Units::Original)?,
        ))
    };
    let (model_n, model_o) = report(&scored.prediction.values)?;
    let (base_n, base_o) = report(&scored.persistence)?;
    let targets: Vec<_> = meta
        .targets
        .iter()
        .enumerate()
        .map(|(j, name)| {
            json!({
                "name": name,
                "model": {
                    "normalized": { "mae": model_n.mae[j], "rmse": model_n.rmse[j] },
                    "original": { "mae": model_o.mae[j], "rmse": model_o.rmse[j] },
                },
                "persistence": {
                    "normalized": { "mae": base_n.mae[j], "rmse": base_n.rmse[j] },
                    "original": { "mae": base_o.mae[j], "rmse": base_o.rmse[j] },
                },
            })
        })
        .collect();
    let first = offset + scored.prediction.target_indices().start;
    let doc = json!({
        "split": format!("{split:?}").to_lowercase(),
        "count": model_n.count,
        "first_index": first,
        "targets": targets,
    });
    Ok(serde_json::to_string_pretty(&doc)? + "\n")
}

fn log_scores(scored: &Scored, meta: &DataMeta, target_cols: &[usize]) -> Result<()> {
    let state = &meta.normalization;
    let model = metrics(&scored.prediction.values, &scored.truth.values, state, target_cols, Units::Normalized)?;
    let base = metrics(&scored.persistence, &scored.truth.values, state, target_cols, Units::Normalized)?;
    for (j, name) in meta.targets.iter().enumerate() {
        info!(
            "{name}: MAE {:.6} RMSE {:.6} (persistence MAE {:.6} RMSE {:.6}, normalized units, {} points)",
            model.mae[j], model.rmse[j], base.mae[j], base.rmse[j], model.count
        );
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Input(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display())))
}

fn write_scores(
    dir: &Path,
    scored: &Scored,
    split: Split,
    offset: usize,
    meta: &DataMeta,
    with_metrics: bool,
) -> Result<()> {
    let target_cols: Vec<usize> = meta.targets.iter().map(|t| column_of(meta, t)).collect::<Result<_>>()?;
    write_file(&dir.join("predictions.csv"), &predictions_csv(scored, offset, meta, &target_cols))?;
    if with_metrics {
        write_file(&dir.join("metrics.json"), &metrics_json(scored, split, offset, meta, &target_cols)?)?;
        log_scores(scored, meta, &target_cols)?;
    }
    Ok(())
}

fn column_of(meta: &DataMeta, name: &str) -> Result<usize> {
    meta.columns
        .iter()
        .position(|c| c == name)
        .ok_or_else(|| Error::Config(format!("target '{name}' is not among the checkpoint's columns")))
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut config = RunConfig::resolve(&args.shared)?;
    config.set_decay(args.decay.map(Into::into));
    config.train_rows = args.train_rows.or(config.train_rows);
    config.test_rows = args.test_rows.or(config.test_rows);
    let prepared = prepare(&mut config)?;
    let meta = DataMeta {
        columns: config.columns.clone().unwrap_or_default(),
        targets: config.targets.clone(),
        normalization: prepared.state.clone(),
        train_rows: prepared.train.len(),
        test_rows: prepared.test.len(),
        pad: config.pad,
    };
    let cfg = &config.model;
    let train_data = make_windows(&prepared.train, cfg.window, &cfg.target_columns, config.pad)?;
    if !prepared.test.is_empty() {
        make_windows(&prepared.test, cfg.window, &cfg.target_columns, config.pad)?;
    }

    let mut trainer = match &args.resume {
        Some(path) => resume(path, &config, &meta)?,
        None => Trainer::new(Forecaster::new(config.model.clone(), config.seed)?, config.train.clone())?,
    };
    info!(
        "{} parameters, {} training windows, {} epochs",
        trainer.model().params().scalar_count(),
        train_data.len(),
        config.train.epochs
    );

    // Everything that can be rejected has been; only now touch the output directory.
    let out = config.out.clone();
    create_dir(&out)?;
    write_file(&out.join("config.toml"), &config.to_toml()?)?;
    let ck_path = out.join("checkpoint.json");
    let total = config.train.epochs;
    let start = trainer.epoch();
    trainer.run(&train_data, |t| {
        let epoch = t.epoch();
        info!("epoch {epoch}/{total}: loss {:.6e}, lr {:.3e}", t.history()[epoch - 1], t.config().lr_at(epoch - 1));
        let mut ck = t.checkpoint();
        ck.data = Some(meta.clone());
        ck.save(&ck_path)
    })?;
    if trainer.epoch() == start {
        // No epoch ran, so the per-epoch hook never wrote a checkpoint.
        let mut ck = trainer.checkpoint();
        ck.data = Some(meta.clone());
        ck.save(&ck_path)?;
    }
    let mut history = Vec::new();
    write_loss_history(&mut history, trainer.history())?;
    write_file(&out.join("loss_history.csv"), &String::from_utf8_lossy(&history))?;

    if !prepared.test.is_empty() {
        let scored = score(trainer.model(), &prepared.test, config.pad)?;
        write_scores(&out, &scored, Split::Test, meta.train_rows, &meta, true)?;
    }
    info!("wrote {}", out.display());
    Ok(())
}

fn resume(path: &Path, config: &RunConfig, meta: &DataMeta) -> Result<Trainer> {
    let ck = Checkpoint::load(path)?;
    if ck.model != config.model {
        return Err(Error::Config(format!("{} was trained with a different model configuration", path.display())));
    }
    let same_training = daf::train::TrainConfig { epochs: config.train.epochs, ..ck.train.clone() } == config.train;
    if !same_training {
        return Err(Error::Config(format!("{} was trained with different optimizer settings", path.display())));
    }
    if ck.data.as_ref() != Some(meta) {
        return Err(Error::Config(format!(
            "{} was trained on different columns, split or normalization",
            path.display()
        )));
    }
    if ck.epoch > config.train.epochs {
        return Err(Error::Config(format!(
            "{} already has {} epochs, more than the requested {}",
            path.display(),
            ck.epoch,
            config.train.epochs
        )));
    }
    let mut trainer = Trainer::from_checkpoint(&ck)?;
    trainer.set_epochs(config.train.epochs);
    info!("resuming from {} at epoch {}", path.display(), ck.epoch);
    Ok(trainer)
}

pub fn predict(args: PredictArgs, with_metrics: bool) -> Result<()> {
    let config = RunConfig::resolve(&args.shared)?;
    let ck_path: PathBuf = args.checkpoint.clone().unwrap_or_else(|| config.out.join("checkpoint.json"));
    let ck = Checkpoint::load(&ck_path)?;
    let meta = ck
        .data
        .clone()
        .ok_or_else(|| Error::Config(format!("{} does not describe its training data", ck_path.display())))?;
    let model = ck.build_model()?;
    let raw = load_csv(config.data_path()?)?.select(&meta.columns)?;
    let all = raw.normalize(&meta.normalization)?;
    let (table, offset) = match args.split {
        Split::Train => (all.split(meta.train_rows, 0)?.0, 0),
        Split::Test => (all.split(meta.train_rows, meta.test_rows)?.1, meta.train_rows),
        Split::All => (all, 0),
    };
    let scored = score(&model, &table, meta.pad)?;
    create_dir(&config.out)?;
    write_scores(&config.out, &scored, args.split, offset, &meta, with_metrics)?;
    info!("wrote {}", config.out.display());
    Ok(())
}

pub fn gradcheck(args: GradcheckArgs) -> Result<()> {
    let config = RunConfig::resolve(&args.shared)?;
    let corrupt = args.corrupt_backward.as_deref().map(str::parse::<OpKind>).transpose()?;
    let raw = match &config.data {
        Some(path) => {
            let t = load_csv(path)?;
            match &config.columns {
                Some(cols) => t.select(cols)?,
                None => t,
            }
        }
        None => synth_series(SynthKind::TrendSine, 32, 0.0, config.seed)?,
    };
    let table = raw.normalize(&NormalizationState::fit(raw.values())?)?;
    let target_cols = if config.targets.is_empty() { vec![0] } else { table.column_indices(&config.targets)? };
    let model_cfg = ModelConfig {
        window: args.shared.window.unwrap_or(ModelConfig::micro(0, Vec::new()).window),
        ablate_diff_attention: config.model.ablate_diff_attention,
        ablate_residual_layer: config.model.ablate_residual_layer,
        per_timestep_fusion_weights: config.model.per_timestep_fusion_weights,
        ..ModelConfig::micro(table.width(), target_cols)
    };
    let model = Forecaster::new(model_cfg, config.seed)?;
    let data = make_windows(&table, model.config().window, &model.config().target_columns, true)?;
    let window = &data.windows()[0];
    let report = check_model_gradients(&model, &window.input, &window.targets, args.step, args.tolerance, corrupt)?;

    create_dir(&config.out)?;
    let mut csv = String::from("parameter,group,max_rel_error\n");
    for p in &report.params {
        let _ = writeln!(csv, "{},{},{:e}", p.name, p.group, p.max_rel_error);
    }
    write_file(&config.out.join("gradcheck.csv"), &csv)?;

    let mut stdout = std::io::stdout().lock();
    for (group, err) in report.groups() {
        let verdict = if err < report.tolerance { "ok" } else { "FAIL" };
        writeln!(stdout, "{group:<28} {err:.3e} {verdict}")?;
    }
    writeln!(stdout, "max relative error {:.3e} (tolerance {:.0e})", report.max_rel_error(), report.tolerance)?;
    if report.passed() {
        Ok(())
    } else {
        Err(Error::GradientMismatch(format!(
            "relative error above {:.0e} in {}",
            report.tolerance,
            report.failing_groups().join(", ")
        )))
    }
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let config = RunConfig::resolve(&args.shared)?;
    let kind: SynthKind = args.kind.parse()?;
    let table = synth_series(kind, args.rows, args.noise, config.seed)?;
    match &args.shared.out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                create_dir(parent)?;
            }
            let file =
                fs::File::create(path).map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display())))?;
            table.write_csv(file)
        }
        None => table.write_csv(std::io::stdout().lock()),
    }
}
