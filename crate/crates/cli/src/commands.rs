use std::path::Path;

use serde::{Deserialize, Serialize};
use sto_core::connectome;
use sto_core::derivatives::derivative_stack;
use sto_core::models::{ModelSpec, ModelStats};
use sto_core::nifti::{self, Datatype};
use sto_core::nn::checkpoint;
use sto_core::pipeline::dataset::bandpass_volume;
use sto_core::pipeline::{
    auc, predict, run_experiment, train, validation_split, Dataset, EpochRecord, FoldView, InputDims, InputTransform, PrepConfig, TrainConfig,
    ValidationMode, Variant, Widths,
};
use sto_core::{seed, Error, Result};

use crate::cohort::{self, write_json, Cohort};
use crate::config::{parse_variant, CliConfig};
use crate::{Command, ConfigArg, PrepArgs, TrainArgs};

fn parse_widths(s: &str) -> Result<Widths> {
    match s {
        "full" => Ok(Widths::Full),
        "mini" => Ok(Widths::Mini),
        _ => Err(Error::InvalidConfig(format!("widths must be 'full' or 'mini', got '{s}'"))),
    }
}

impl PrepArgs {
    fn apply(&self, p: &mut PrepConfig) {
        if self.no_bandpass {
            p.bandpass = false;
        }
        if let Some(n) = self.reho_neighborhood {
            p.derivatives.reho_neighborhood = n;
        }
        if let Some(t) = self.threshold {
            p.derivatives.correlation_threshold = t;
        }
        if self.weighted_dc {
            p.derivatives.dc_weighted = true;
        }
        if self.fisher_z {
            p.fisher_z = true;
        }
        if let Some(g) = self.grid {
            p.grid = [g; 3];
        }
    }
}

impl TrainArgs {
    fn apply(&self, cfg: &mut CliConfig) -> Result<()> {
        let e = &mut cfg.experiment;
        if let Some(v) = self.lr {
            e.lr = v;
        }
        if let Some(v) = self.batch_size {
            e.batch_size = v;
        }
        if let Some(v) = self.max_epochs {
            e.max_epochs = v;
        }
        if let Some(v) = self.eval_every {
            e.eval_every = v;
        }
        if let Some(v) = self.patience {
            e.patience = v;
        }
        if let Some(w) = &self.widths {
            e.widths = parse_widths(w)?;
        }
        if let Some(f) = self.val_fraction {
            e.validation = ValidationMode::Carve { fraction: f };
        }
        if self.select_on_test {
            e.validation = ValidationMode::TestFold;
        }
        Ok(())
    }
}

fn load_config(c: &ConfigArg, preset: CliConfig) -> Result<CliConfig> {
    CliConfig::load(preset, c.config.as_deref())
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p)?;
    }
    Ok(())
}

/// Everything needed to rebuild a trained model, stored in the checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SavedModel {
    variant: Variant,
    spec: ModelSpec,
    transform: InputTransform,
    prep: PrepConfig,
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    variant: String,
    best_epoch: usize,
    best_val_auc: f64,
    n_fit: usize,
    n_val: usize,
    trace: Vec<EpochRecord>,
}

#[derive(Debug, Serialize)]
struct SubjectScore {
    subject_id: String,
    label: u8,
    score: f64,
}

#[derive(Debug, Serialize)]
struct EvalReport {
    variant: String,
    n_subjects: usize,
    auc: f64,
    scores: Vec<SubjectScore>,
}

#[derive(Debug, Serialize)]
struct StatsReport {
    variant: String,
    feature_dim: Option<usize>,
    grid: [usize; 3],
    #[serde(flatten)]
    stats: ModelStats,
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { config, out, seed, subjects_per_class, extent, timepoints, effect_size, noise_std, gzip } => {
            let mut cfg = load_config(&config, CliConfig::default())?.synth;
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if let Some(v) = subjects_per_class {
                cfg.n_subjects_per_class = v;
            }
            if let Some(v) = extent {
                cfg.extents = [v; 3];
            }
            if let Some(v) = timepoints {
                cfg.n_timepoints = v;
                cfg.t_range = None;
            }
            if let Some(v) = effect_size {
                cfg.effect_size = v;
            }
            if let Some(v) = noise_std {
                cfg.noise_std = v;
            }
            cohort::write_synthetic(&cfg, &out, gzip)
        }
        Command::Derive { config, input, mask, out, prep } => {
            let mut p = load_config(&config, CliConfig::default())?.prep;
            prep.apply(&mut p);
            let v = nifti::read_file(&input)?.into_series()?;
            let v = if p.bandpass { bandpass_volume(&v)? } else { v };
            let stack = derivative_stack(&v, &cohort::read_mask(&mask)?, &p.derivatives)?;
            create_parent(&out)?;
            nifti::write_file(&out, &stack, Datatype::Float64)
        }
        Command::Parcellate { config, input, atlas, out, prep } => {
            let mut p = load_config(&config, CliConfig::default())?.prep;
            prep.apply(&mut p);
            let v = nifti::read_file(&input)?.into_series()?;
            let v = if p.bandpass { bandpass_volume(&v)? } else { v };
            let ts = connectome::roi_mean_timeseries(&v, &cohort::read_atlas(&atlas)?)?;
            create_parent(&out)?;
            cohort::write_timeseries(&out, &ts)
        }
        Command::Features { config, out, mask_out, fisher_z, inputs } => {
            let fisher_z = fisher_z || load_config(&config, CliConfig::default())?.prep.fisher_z;
            let mut rows = Vec::with_capacity(inputs.len());
            let mut m = None;
            for path in &inputs {
                let ts = cohort::read_timeseries(path)?;
                if m.is_some_and(|m| m != ts.n_rois()) {
                    return Err(Error::ShapeMismatch(format!("{} has {} ROIs, expected {}", path.display(), ts.n_rois(), m.unwrap_or(0))));
                }
                m = Some(ts.n_rois());
                let f = connectome::upper_triangle(&connectome::fc_matrix(&ts));
                let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                rows.push((id, if fisher_z { connectome::fisher_z(&f) } else { f }));
            }
            let m = m.expect("at least one input");
            create_parent(&out)?;
            let mut w = csv::Writer::from_path(&out)?;
            let mut header = vec!["subject_id".to_string()];
            for i in 1..=m {
                for j in i + 1..=m {
                    header.push(format!("r{i}_{j}"));
                }
            }
            w.write_record(&header)?;
            for (id, f) in &rows {
                w.write_record(std::iter::once(id.clone()).chain(f.iter().map(|x| x.to_string())))?;
            }
            w.flush()?;
            if let Some(path) = mask_out {
                let feats: Vec<&[f64]> = rows.iter().map(|(_, f)| f.as_slice()).collect();
                let mask = connectome::diagnet_mask(&feats)?;
                create_parent(&path)?;
                write_json(&path, &mask)?;
            }
            Ok(())
        }
        Command::Train { config, cohort, out, variant, seed: seed_flag, prep, train: targs } => {
            let mut cfg = load_config(&config, CliConfig::default())?;
            prep.apply(&mut cfg.prep);
            targs.apply(&mut cfg)?;
            if let Some(s) = seed_flag {
                cfg.experiment.seed = s;
            }
            cfg.experiment.validate()?;
            let variant = match variant {
                Some(v) => parse_variant(&v)?,
                None => cfg.experiment.variants.first().cloned().ok_or_else(|| Error::InvalidConfig("no variant given".into()))?,
            };
            run_train(&cfg, variant, &cohort, &out)
        }
        Command::Evaluate { cohort, checkpoint: ckpt, out } => run_evaluate(&cohort, &ckpt, &out),
        Command::Stats { variant, n_rois, grid, crop_len, widths, out } => {
            let variant = parse_variant(&variant)?;
            let dims = InputDims::for_atlas(n_rois, crop_len);
            let (spec, _) = variant.spec(&dims, parse_widths(&widths)?)?;
            let grid = [grid; 3];
            let report = StatsReport { variant: variant.label(), feature_dim: spec.feature_dim(), grid, stats: spec.build()?.stats(Some(grid))? };
            match out {
                Some(p) => {
                    create_parent(&p)?;
                    write_json(&p, &report)
                }
                None => {
                    println!("{}", serde_json::to_string_pretty(&report)?);
                    Ok(())
                }
            }
        }
        Command::Reproduce { config, out, quick, seed: seed_flag, folds, effect_size, subjects_per_class, variants, prep, train: targs } => {
            let preset = if quick { CliConfig::quick() } else { CliConfig::default() };
            let mut cfg = load_config(&config, preset)?;
            prep.apply(&mut cfg.prep);
            targs.apply(&mut cfg)?;
            if let Some(s) = seed_flag {
                cfg.synth.seed = s;
                cfg.experiment.seed = s;
            }
            if let Some(k) = folds {
                cfg.experiment.folds = k;
            }
            if let Some(e) = effect_size {
                cfg.synth.effect_size = e;
            }
            if let Some(n) = subjects_per_class {
                cfg.synth.n_subjects_per_class = n;
            }
            if let Some(list) = variants {
                cfg.experiment.variants = list.split(',').map(|v| parse_variant(v.trim())).collect::<Result<_>>()?;
            }
            cfg.validate()?;
            let data = Dataset::synthetic(&cfg.synth, &cfg.prep)?;
            let report = run_experiment(&data, &cfg.experiment)?;
            std::fs::create_dir_all(&out)?;
            write_json(&out.join("config.json"), &cfg)?;
            write_json(&out.join("report.json"), &report)?;
            std::fs::write(out.join("table1.csv"), report.table1_csv()?)?;
            std::fs::write(out.join("table2.csv"), report.table2_csv()?)?;
            print!("{}", report.table1_csv()?);
            Ok(())
        }
    }
}

fn run_train(cfg: &CliConfig, variant: Variant, root: &Path, out: &Path) -> Result<()> {
    let c = Cohort::open(root)?;
    let data = c.prepare(&cfg.prep)?;
    let e = &cfg.experiment;
    let all: Vec<usize> = (0..data.len()).collect();
    let fraction = match e.validation {
        ValidationMode::Carve { fraction } => fraction,
        ValidationMode::TestFold => return Err(Error::InvalidConfig("train has no test fold; use a validation fraction".into())),
    };
    let (fit, val) = validation_split(&all, &data.labels, fraction, seed::derive(e.seed, "validation", 0))?;
    let view = FoldView::new(&data, 0, &[]);
    let (spec, channels) = variant.spec(&InputDims::of(&data), e.widths)?;
    let model = spec.build()?;
    let transform = InputTransform::fit(&model, &view, &fit, channels, 0)?;
    let tc = TrainConfig {
        batch_size: e.batch_size,
        lr: e.lr,
        max_epochs: e.max_epochs,
        eval_every: e.eval_every,
        patience: e.patience,
        seed: seed::derive(e.seed, "train", 0),
        augmentation: e.augmentation.clone(),
    };
    let outcome = train(&model, &view, &transform, &fit, &val, &tc)?;
    std::fs::create_dir_all(out)?;
    let saved = SavedModel { variant: variant.clone(), spec, transform, prep: cfg.prep.clone() };
    checkpoint::save(&out.join("model.ckpt"), &outcome.store, serde_json::to_value(&saved)?, e.seed, outcome.steps)?;
    let summary = TrainSummary {
        variant: variant.label(),
        best_epoch: outcome.best_epoch,
        best_val_auc: outcome.best_val_auc,
        n_fit: fit.len(),
        n_val: val.len(),
        trace: outcome.trace,
    };
    write_json(&out.join("trace.json"), &summary)?;
    println!("{} best epoch {} validation AUC {:.4}", summary.variant, summary.best_epoch, summary.best_val_auc);
    Ok(())
}

fn run_evaluate(root: &Path, ckpt: &Path, out: &Path) -> Result<()> {
    let (store, manifest) = checkpoint::load(ckpt)?;
    let saved: SavedModel = serde_json::from_value(manifest.model).map_err(|e| Error::Checkpoint(format!("model description: {e}")))?;
    let model = saved.spec.build()?;
    if model.layout() != store.layout() {
        return Err(Error::Checkpoint("parameter layout does not match the stored model".into()));
    }
    let c = Cohort::open(root)?;
    let data = c.prepare(&saved.prep)?;
    let view = FoldView::new(&data, 0, &[]);
    let all: Vec<usize> = (0..data.len()).collect();
    let scores = predict(&model, &store, &view, &saved.transform, &all, 8)?;
    let report = EvalReport {
        variant: saved.variant.label(),
        n_subjects: data.len(),
        auc: auc(&scores, &data.labels)?,
        scores: all
            .iter()
            .map(|&i| SubjectScore { subject_id: data.subject_ids[i].clone(), label: data.labels[i], score: scores[i] })
            .collect(),
    };
    create_parent(out)?;
    write_json(out, &report)?;
    println!("AUC {:.4} over {} subjects", report.auc, report.n_subjects);
    Ok(())
}
