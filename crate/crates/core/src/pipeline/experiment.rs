//! Cross-validated comparison of model variants across training-set
//! proportions, producing the performance and efficiency tables.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::audit::{AuditRecord, FoldView};
use super::cv::{stratified_kfold, subsample_train, validation_split};
use super::dataset::Dataset;
use super::metrics::{auc, mean_std};
use super::train::{predict, train, EpochRecord, InputTransform, TrainConfig};
use crate::derivatives::DerivativeKind;
use crate::error::{Error, Result};
use crate::models::{ModelSpec, StvConfig, FLOP_CONVENTION};
use crate::preprocess::AugmentSpec;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Variant {
    Sto,
    StoDiagnet,
    /// Voxel branch alone on a subset of derivative channels.
    StvOnly { channels: Vec<DerivativeKind> },
    StrOnly,
    FcMlp,
    Diagnet,
    Conv1d,
}

impl Variant {
    pub fn label(&self) -> String {
        match self {
            Variant::Sto => "STO".into(),
            Variant::StoDiagnet => "STO-DiagNet".into(),
            Variant::StvOnly { channels } => format!("STV[{}]", channel_label(channels)),
            Variant::StrOnly => "STR".into(),
            Variant::FcMlp => "FC-MLP".into(),
            Variant::Diagnet => "DiagNet".into(),
            Variant::Conv1d => "1D-CNN".into(),
        }
    }

    pub fn uses_volumes(&self) -> bool {
        matches!(self, Variant::Sto | Variant::StoDiagnet | Variant::StvOnly { .. })
    }

    /// The model and the stack positions of its voxel-branch channels.
    pub fn spec(&self, dims: &InputDims, widths: Widths) -> Result<(ModelSpec, Option<Vec<usize>>)> {
        let feature_dim = || dims.feature_dim.ok_or_else(|| Error::InvalidConfig(format!("{} needs connectome features", self.label())));
        let stv = |n: usize| match widths {
            Widths::Full => StvConfig { in_channels: n, ..StvConfig::default() },
            Widths::Mini => StvConfig::mini(n),
        };
        let volumes = |kinds: &[DerivativeKind]| -> Result<Vec<usize>> {
            if !dims.volumes {
                return Err(Error::InvalidConfig(format!("{} needs derivative volumes", self.label())));
            }
            dims.channel_indices(kinds)
        };
        Ok(match self {
            Variant::Sto => (ModelSpec::sto(stv(dims.channels.len()), feature_dim()?), Some(volumes(&dims.channels)?)),
            Variant::StoDiagnet => (ModelSpec::sto_diagnet(stv(dims.channels.len()), feature_dim()?), Some(volumes(&dims.channels)?)),
            Variant::StvOnly { channels } => {
                if channels.is_empty() {
                    return Err(Error::InvalidConfig("stv_only needs at least one channel".into()));
                }
                (ModelSpec::stv_only(stv(channels.len())), Some(volumes(channels)?))
            }
            Variant::StrOnly => (ModelSpec::str_only(feature_dim()?, stv(1).embed_dim), None),
            Variant::FcMlp => (ModelSpec::fc_mlp(feature_dim()?), None),
            Variant::Diagnet => (ModelSpec::diagnet(feature_dim()?), None),
            Variant::Conv1d => match dims.crop_len {
                Some(t) if dims.n_rois > 0 => (ModelSpec::conv1d(dims.n_rois, t), None),
                _ => return Err(Error::InvalidConfig("1D-CNN needs ROI series".into())),
            },
        })
    }
}

/// Input sizes a model is built for.
#[derive(Debug, Clone, PartialEq)]
pub struct InputDims {
    pub volumes: bool,
    /// Channel order of the derivative stacks.
    pub channels: Vec<DerivativeKind>,
    pub feature_dim: Option<usize>,
    pub n_rois: usize,
    pub crop_len: Option<usize>,
}

impl InputDims {
    pub fn of(data: &Dataset) -> Self {
        InputDims {
            volumes: data.volumes.is_some(),
            channels: data.channels.clone(),
            feature_dim: data.feature_dim(),
            n_rois: data.n_rois,
            crop_len: data.series.as_ref().map(|_| data.crop_len),
        }
    }

    /// Dimensions of an atlas with `n_rois` regions and all four derivatives.
    pub fn for_atlas(n_rois: usize, crop_len: usize) -> Self {
        InputDims {
            volumes: true,
            channels: DerivativeKind::ALL.to_vec(),
            feature_dim: Some(crate::connectome::feature_len(n_rois)),
            n_rois,
            crop_len: Some(crop_len),
        }
    }

    pub fn channel_indices(&self, kinds: &[DerivativeKind]) -> Result<Vec<usize>> {
        kinds
            .iter()
            .map(|k| {
                self.channels
                    .iter()
                    .position(|c| c == k)
                    .ok_or_else(|| Error::InvalidConfig(format!("derivative {} was not computed", k.label())))
            })
            .collect()
    }
}

pub fn channel_label(channels: &[DerivativeKind]) -> String {
    channels.iter().map(|c| c.label()).collect::<Vec<_>>().join("+")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Widths {
    Full,
    /// Narrow voxel branch for small grids and single-core runs.
    Mini,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ValidationMode {
    /// Hold out a stratified fraction of the training subjects.
    Carve { fraction: f64 },
    /// Select the checkpoint on the test fold itself; recorded in the audit.
    TestFold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub variants: Vec<Variant>,
    pub proportions: Vec<f64>,
    pub folds: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub seed: u64,
    pub augmentation: Option<AugmentSpec>,
    pub validation: ValidationMode,
    pub widths: Widths,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            variants: vec![Variant::Sto, Variant::StoDiagnet, Variant::FcMlp, Variant::Diagnet, Variant::Conv1d],
            proportions: vec![1.0, 0.75, 0.5],
            folds: 5,
            batch_size: 8,
            lr: 1e-5,
            max_epochs: 100,
            eval_every: 5,
            patience: 10,
            seed: 0,
            augmentation: None,
            validation: ValidationMode::Carve { fraction: 0.2 },
            widths: Widths::Full,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() || self.proportions.is_empty() {
            return Err(Error::InvalidConfig("at least one variant and one proportion required".into()));
        }
        if let Some(p) = self.proportions.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::InvalidConfig(format!("proportion {p} must be in (0, 1]")));
        }
        if let ValidationMode::Carve { fraction } = self.validation {
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(Error::InvalidConfig(format!("validation fraction {fraction} must be in (0, 1)")));
            }
        }
        self.train_config(0).validate()
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            lr: self.lr,
            max_epochs: self.max_epochs,
            eval_every: self.eval_every,
            patience: self.patience,
            seed,
            augmentation: self.augmentation.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub variant: String,
    pub proportion: f64,
    pub fold: usize,
    pub auc: f64,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub n_fit: usize,
    pub n_val: usize,
    pub test_subjects: Vec<String>,
    pub test_scores: Vec<f64>,
    pub audit: AuditRecord,
    pub trace: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: String,
    /// Derivative channels of the voxel branch; empty for connectome models.
    pub channels: String,
    pub volume_based: bool,
    pub proportion: f64,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub params: u64,
    pub params_m: f64,
    pub gflops: f64,
    pub memory_mb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub n_subjects: usize,
    pub grid: Option<[usize; 3]>,
    pub flop_convention: String,
    pub summary: Vec<SummaryRow>,
    pub folds: Vec<FoldResult>,
}

struct Job<'a> {
    vi: usize,
    variant: &'a Variant,
    pi: usize,
    proportion: f64,
    fi: usize,
}

fn run_job(data: &Dataset, cfg: &ExperimentConfig, folds: &[super::cv::Fold], job: &Job<'_>) -> Result<FoldResult> {
    let fold = &folds[job.fi];
    let split_index = (job.fi * 1000 + job.pi) as u64;
    let train_sub = subsample_train(&fold.train, &data.labels, job.proportion, seed::derive(cfg.seed, "subsample", split_index))?;
    let (view, fit, val) = match cfg.validation {
        ValidationMode::Carve { fraction } => {
            let (fit, val) = validation_split(&train_sub, &data.labels, fraction, seed::derive(cfg.seed, "validation", split_index))?;
            (FoldView::new(data, job.fi, &fold.test), fit, val)
        }
        ValidationMode::TestFold => (FoldView::new(data, job.fi, &fold.test).allow_selection_on_test(), train_sub, fold.test.clone()),
    };
    let (spec, channels) = job.variant.spec(&InputDims::of(data), cfg.widths)?;
    let model = spec.build()?;
    let transform = InputTransform::fit(&model, &view, &fit, channels, job.fi)?;
    let train_seed = seed::derive(cfg.seed, "train", (job.vi * 1_000_000 + split_index as usize) as u64);
    let outcome = train(&model, &view, &transform, &fit, &val, &cfg.train_config(train_seed))?;
    let audit = view.begin_evaluation()?;
    let scores = predict(&model, &outcome.store, &view, &transform, &fold.test, cfg.batch_size)?;
    let test_labels: Vec<u8> = fold.test.iter().map(|&i| data.labels[i]).collect();
    Ok(FoldResult {
        variant: job.variant.label(),
        proportion: job.proportion,
        fold: job.fi,
        auc: auc(&scores, &test_labels)?,
        best_epoch: outcome.best_epoch,
        best_val_auc: outcome.best_val_auc,
        n_fit: fit.len(),
        n_val: val.len(),
        test_subjects: fold.test.iter().map(|&i| data.subject_ids[i].clone()).collect(),
        test_scores: scores,
        audit,
        trace: outcome.trace,
    })
}

/// Train and evaluate every (variant, proportion, fold) combination. Jobs
/// run in parallel; results are ordered and seeded independently of the
/// thread count.
pub fn run_experiment(data: &Dataset, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    data.validate()?;
    let folds = stratified_kfold(&data.labels, cfg.folds, seed::derive(cfg.seed, "kfold", 0))?;
    let mut jobs = Vec::new();
    for (vi, variant) in cfg.variants.iter().enumerate() {
        for (pi, &proportion) in cfg.proportions.iter().enumerate() {
            for fi in 0..folds.len() {
                jobs.push(Job { vi, variant, pi, proportion, fi });
            }
        }
    }
    let results = jobs.par_iter().map(|j| run_job(data, cfg, &folds, j)).collect::<Result<Vec<_>>>()?;

    let grid = data.grid();
    let mut summary = Vec::new();
    for variant in &cfg.variants {
        let (spec, _) = variant.spec(&InputDims::of(data), cfg.widths)?;
        let stats = spec.build()?.stats(grid)?;
        let label = variant.label();
        let channels = match variant {
            Variant::StvOnly { channels } => channel_label(channels),
            Variant::Sto | Variant::StoDiagnet => channel_label(&data.channels),
            _ => String::new(),
        };
        for &proportion in &cfg.proportions {
            let aucs: Vec<f64> = results.iter().filter(|r| r.variant == label && r.proportion == proportion).map(|r| r.auc).collect();
            let ms = mean_std(&aucs);
            summary.push(SummaryRow {
                variant: label.clone(),
                channels: channels.clone(),
                volume_based: variant.uses_volumes(),
                proportion,
                mean_auc: ms.mean,
                std_auc: ms.std,
                params: stats.params,
                params_m: stats.params as f64 / 1e6,
                gflops: stats.gflops,
                memory_mb: stats.memory_mb,
            });
        }
    }
    Ok(ExperimentReport {
        config: cfg.clone(),
        n_subjects: data.len(),
        grid,
        flop_convention: FLOP_CONVENTION.to_string(),
        summary,
        folds: results,
    })
}

fn csv_string(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

impl ExperimentReport {
    pub fn summary_for(&self, variant: &str, proportion: f64) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.variant == variant && r.proportion == proportion)
    }

    /// Performance and cost of every variant at every training proportion.
    pub fn table1_csv(&self) -> Result<String> {
        csv_string(
            &["variant", "proportion", "auc_mean", "auc_std", "params_m", "gflops", "memory_mb"],
            self.summary.iter().map(|r| {
                vec![
                    r.variant.clone(),
                    format!("{:.2}", r.proportion),
                    format!("{:.4}", r.mean_auc),
                    format!("{:.4}", r.std_auc),
                    format!("{:.4}", r.params_m),
                    format!("{:.4}", r.gflops),
                    format!("{:.1}", r.memory_mb),
                ]
            }),
        )
    }

    /// Derivative-channel ablation over the volume-based variants.
    pub fn table2_csv(&self) -> Result<String> {
        csv_string(
            &["variant", "channels", "proportion", "auc_mean", "auc_std"],
            self.summary.iter().filter(|r| r.volume_based).map(|r| {
                vec![r.variant.clone(), r.channels.clone(), format!("{:.2}", r.proportion), format!("{:.4}", r.mean_auc), format!("{:.4}", r.std_auc)]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(n: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let features = labels
            .iter()
            .map(|&l| (0..8).map(|j| if j == 0 { f64::from(l) * 2.0 } else { 0.0 } + rng.random_range(-0.5..0.5)).collect())
            .collect();
        Dataset {
            subject_ids: (0..n).map(|i| format!("s{i:02}")).collect(),
            labels,
            channels: Vec::new(),
            volumes: None,
            features: Some(features),
            series: None,
            n_rois: 4,
            crop_len: 0,
        }
    }

    fn cfg() -> ExperimentConfig {
        ExperimentConfig {
            variants: vec![Variant::FcMlp, Variant::Diagnet],
            proportions: vec![1.0, 0.5],
            folds: 3,
            lr: 1e-2,
            max_epochs: 30,
            eval_every: 5,
            widths: Widths::Mini,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn report_shape_and_audit() {
        let d = toy(60);
        let r = run_experiment(&d, &cfg()).unwrap();
        assert_eq!(r.folds.len(), 2 * 2 * 3);
        assert_eq!(r.summary.len(), 4);
        for f in &r.folds {
            assert_eq!(f.audit.test_reads_before_evaluation, 0);
            assert!(!f.audit.selection_on_test);
            assert_eq!(f.test_subjects.len(), 20);
        }
        let t1 = r.table1_csv().unwrap();
        assert_eq!(t1.lines().count(), 5);
        assert_eq!(r.table2_csv().unwrap().lines().count(), 1);
        let m = r.summary_for("FC-MLP", 1.0).unwrap().mean_auc;
        assert!(m > 0.8, "{m} {:?}", r.folds.iter().map(|f| f.auc).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic_across_runs() {
        let d = toy(24);
        let a = run_experiment(&d, &cfg()).unwrap();
        let b = run_experiment(&d, &cfg()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn test_fold_selection_is_recorded() {
        let d = toy(24);
        let c = ExperimentConfig { variants: vec![Variant::FcMlp], proportions: vec![1.0], validation: ValidationMode::TestFold, ..cfg() };
        let r = run_experiment(&d, &c).unwrap();
        assert!(r.folds.iter().all(|f| f.audit.selection_on_test && f.audit.test_reads_before_evaluation > 0));
    }

    #[test]
    fn volume_variant_without_volumes_is_a_config_error() {
        let d = toy(24);
        let c = ExperimentConfig { variants: vec![Variant::StvOnly { channels: vec![DerivativeKind::Dc] }], ..cfg() };
        assert!(run_experiment(&d, &c).is_err());
    }
}
