//! Mini-batch Adam training with periodic validation and best-model
//! selection, plus batched inference.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::audit::FoldView;
use super::metrics::auc;
use crate::connectome::{apply_mask, diagnet_mask, QuartileMask};
use crate::error::{Error, Result};
use crate::models::{Model, ModelInputs};
use crate::nn::graph::{Graph, Mode};
use crate::nn::{Adam, AdamConfig, ParamStore, Tensor};
use crate::preprocess::{augment, AugmentSpec};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub eval_every: usize,
    /// Stop after this many evaluations without improvement.
    pub patience: usize,
    pub seed: u64,
    pub augmentation: Option<AugmentSpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { batch_size: 8, lr: 1e-5, max_epochs: 100, eval_every: 5, patience: 10, seed: 0, augmentation: None }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.eval_every == 0 || self.patience == 0 {
            return Err(Error::InvalidConfig(format!("batch_size, max_epochs, eval_every and patience must be positive: {self:?}")));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr = {}", self.lr)));
        }
        if let Some(a) = &self.augmentation {
            a.validate()?;
        }
        Ok(())
    }
}

/// Per-fold input preprocessing fitted on training subjects only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputTransform {
    /// Derivative channels fed to the voxel branch, as stack positions.
    pub channels: Option<Vec<usize>>,
    pub feature_mask: Option<QuartileMask>,
    /// Per-feature standardization (after masking).
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
}

impl InputTransform {
    pub fn fit(model: &Model, view: &FoldView<'_>, fit_subjects: &[usize], channels: Option<Vec<usize>>, fold: usize) -> Result<Self> {
        let spec = model.spec();
        let mut t = InputTransform { channels, feature_mask: None, feature_mean: Vec::new(), feature_std: Vec::new() };
        if spec.needs_features() {
            let raw = fit_subjects.iter().map(|&i| view.features(i)).collect::<Result<Vec<_>>>()?;
            if spec.uses_diagnet_mask() {
                let mut mask = diagnet_mask(&raw)?;
                mask.fold = Some(fold);
                t.feature_mask = Some(mask);
            }
            let rows = raw.iter().map(|r| t.mask_features(r)).collect::<Result<Vec<_>>>()?;
            let d = rows[0].len();
            let n = rows.len() as f64;
            t.feature_mean = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
            t.feature_std = (0..d)
                .map(|j| {
                    let m = t.feature_mean[j];
                    let sd = (rows.iter().map(|r| (r[j] - m) * (r[j] - m)).sum::<f64>() / n).sqrt();
                    if sd < 1e-12 { 1.0 } else { sd }
                })
                .collect();
        }
        Ok(t)
    }

    fn mask_features(&self, raw: &[f64]) -> Result<Vec<f64>> {
        match &self.feature_mask {
            Some(m) => apply_mask(raw, m),
            None => Ok(raw.to_vec()),
        }
    }

    pub fn features(&self, raw: &[f64]) -> Result<Vec<f64>> {
        let mut f = self.mask_features(raw)?;
        if f.len() != self.feature_mean.len() {
            return Err(Error::LengthMismatch { expected: self.feature_mean.len(), got: f.len() });
        }
        for ((x, m), s) in f.iter_mut().zip(&self.feature_mean).zip(&self.feature_std) {
            *x = (*x - m) / s;
        }
        Ok(f)
    }
}

/// Assemble one batch as graph inputs; `augment_with` enables random warps.
fn batch_inputs(
    g: &mut Graph<'_>,
    model: &Model,
    view: &FoldView<'_>,
    t: &InputTransform,
    idx: &[usize],
    augment_with: Option<(&AugmentSpec, u64)>,
) -> Result<ModelInputs<crate::nn::Var>> {
    let spec = model.spec();
    let mut inputs = ModelInputs { volume: None, features: None, series: None };
    if spec.needs_volume() {
        let mut items = Vec::with_capacity(idx.len());
        for (k, &i) in idx.iter().enumerate() {
            let v = view.volume(i)?;
            let v = match &t.channels {
                Some(ch) => v.select_channels(ch)?,
                None => v.clone(),
            };
            let v = match augment_with {
                Some((a, s)) => augment(&v, a, &mut seed::rng(s, "augment-item", k as u64)),
                None => v,
            };
            items.push(v);
        }
        let [x, y, z] = items[0].extents();
        let shape = [items[0].channels(), z, y, x];
        let refs: Vec<&[f64]> = items.iter().map(|v| v.data()).collect();
        inputs.volume = Some(g.input(Tensor::stack(&refs, &shape)?));
    }
    if spec.needs_features() {
        let rows = idx.iter().map(|&i| t.features(view.features(i)?)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        inputs.features = Some(g.input(Tensor::stack(&refs, &[rows[0].len()])?));
    }
    if spec.needs_series() {
        let rows = idx.iter().map(|&i| view.series(i)).collect::<Result<Vec<_>>>()?;
        let d = view.data();
        inputs.series = Some(g.input(Tensor::stack(&rows, &[d.n_rois, 1, 1, d.crop_len])?));
    }
    Ok(inputs)
}

/// Probabilities for `idx` in evaluation mode.
pub fn predict(model: &Model, store: &ParamStore, view: &FoldView<'_>, t: &InputTransform, idx: &[usize], batch_size: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let mut g = Graph::new(store, Mode::Eval, None);
        let inputs = batch_inputs(&mut g, model, view, t, chunk, None)?;
        let res = model.forward(&mut g, &inputs)?;
        out.extend_from_slice(g.value(res.prob).data());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_auc: Option<f64>,
    pub val_bce: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub store: ParamStore,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub steps: u64,
    pub trace: Vec<EpochRecord>,
}

fn mean_bce(probs: &[f64], labels: &[u8]) -> f64 {
    let eps = 1e-7;
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(eps, 1.0 - eps);
            if y != 0 { -p.ln() } else { -(1.0 - p).ln() }
        })
        .sum();
    total / probs.len() as f64
}

pub fn train(model: &Model, view: &FoldView<'_>, t: &InputTransform, fit: &[usize], val: &[usize], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if fit.is_empty() || val.is_empty() {
        return Err(Error::InvalidConfig("training and validation sets must be non-empty".into()));
    }
    let fit_labels: Vec<f64> = fit.iter().map(|&i| view.label(i).map(f64::from)).collect::<Result<_>>()?;
    let val_labels: Vec<u8> = val.iter().map(|&i| view.label(i)).collect::<Result<_>>()?;
    let label_of: std::collections::HashMap<usize, f64> = fit.iter().copied().zip(fit_labels).collect();

    let mut store = ParamStore::init(model.layout(), &mut seed::rng(cfg.seed, "init", 0));
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() }, &store);
    let mut best: Option<(usize, f64, f64, ParamStore)> = None;
    let mut stale = 0;
    let mut trace = Vec::new();
    let mut step = 0u64;

    for epoch in 1..=cfg.max_epochs {
        let mut order = fit.to_vec();
        order.shuffle(&mut seed::rng(cfg.seed, "epoch", epoch as u64));
        let mut batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        // a trailing single-sample batch gives degenerate batch statistics
        if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
            batches.pop();
        }
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for b in batches {
            step += 1;
            let mut g = Graph::new(&store, Mode::Train, Some(seed::rng(cfg.seed, "dropout", step)));
            let aug = cfg.augmentation.as_ref().map(|a| (a, seed::derive(cfg.seed, "augment", step)));
            let inputs = batch_inputs(&mut g, model, view, t, b, aug)?;
            let out = model.forward(&mut g, &inputs)?;
            let targets: Vec<f64> = b.iter().map(|i| label_of[i]).collect();
            let loss = model.loss(&mut g, &out, &targets)?;
            let back = g.backward(loss)?;
            if !back.loss.is_finite() {
                return Err(Error::DivergedLoss { epoch, detail: format!("loss {} at step {step}", back.loss) });
            }
            adam.update(&mut store, &back.param_grads)?;
            if store.params().iter().any(|p| p.data().iter().any(|v| !v.is_finite())) {
                return Err(Error::DivergedLoss { epoch, detail: format!("non-finite parameter after step {step}") });
            }
            store.apply_bn_updates(&back.bn_updates);
            loss_sum += back.loss * b.len() as f64;
            seen += b.len();
        }
        let mut record = EpochRecord { epoch, loss: loss_sum / seen as f64, val_auc: None, val_bce: None };
        if epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs {
            let scores = predict(model, &store, view, t, val, cfg.batch_size)?;
            let a = auc(&scores, &val_labels)?;
            let bce = mean_bce(&scores, &val_labels);
            record.val_auc = Some(a);
            record.val_bce = Some(bce);
            // small validation sets saturate AUC early; ties go to the lower loss
            if best.as_ref().is_none_or(|&(_, ba, bl, _)| a > ba || (a == ba && bce < bl)) {
                best = Some((epoch, a, bce, store.clone()));
                stale = 0;
            } else {
                stale += 1;
            }
        }
        trace.push(record);
        if stale >= cfg.patience {
            break;
        }
    }
    let (best_epoch, best_val_auc, _, store) = best.expect("the final epoch is always evaluated");
    Ok(TrainOutcome { store, best_epoch, best_val_auc, steps: step, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelSpec;
    use crate::pipeline::dataset::Dataset;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn separable(n: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let features = labels
            .iter()
            .map(|&l| {
                let shift = if l == 1 { 1.5 } else { -1.5 };
                (0..6).map(|j| if j < 2 { shift + rng.random_range(-0.5..0.5) } else { rng.random_range(-1.0..1.0) }).collect()
            })
            .collect();
        Dataset {
            subject_ids: (0..n).map(|i| format!("s{i}")).collect(),
            labels,
            channels: Vec::new(),
            volumes: None,
            features: Some(features),
            series: None,
            n_rois: 4,
            crop_len: 0,
        }
    }

    fn run(cfg: &TrainConfig, spec: ModelSpec) -> (TrainOutcome, f64) {
        let d = separable(40);
        let view = FoldView::new(&d, 0, &[]);
        let model = spec.build().unwrap();
        let fit: Vec<usize> = (0..32).collect();
        let val: Vec<usize> = (32..40).collect();
        let t = InputTransform::fit(&model, &view, &fit, None, 0).unwrap();
        let out = train(&model, &view, &t, &fit, &val, cfg).unwrap();
        let scores = predict(&model, &out.store, &view, &t, &fit, 8).unwrap();
        let train_auc = auc(&scores, &fit.iter().map(|&i| d.labels[i]).collect::<Vec<_>>()).unwrap();
        (out, train_auc)
    }

    #[test]
    fn separable_toy_is_learned() {
        let cfg = TrainConfig { lr: 1e-2, max_epochs: 20, eval_every: 20, ..TrainConfig::default() };
        let spec = ModelSpec::FcMlp { feature_dim: 6, hidden: 16, dropout: 0.0 };
        let (out, train_auc) = run(&cfg, spec);
        let losses: Vec<f64> = out.trace.iter().map(|r| r.loss).collect();
        assert!(losses[..10].windows(2).all(|w| w[1] < w[0]), "{losses:?}");
        assert_eq!(train_auc, 1.0);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let cfg = TrainConfig { lr: 0.0, max_epochs: 6, eval_every: 2, ..TrainConfig::default() };
        let spec = ModelSpec::FcMlp { feature_dim: 6, hidden: 16, dropout: 0.0 };
        let (out, _) = run(&cfg, spec.clone());
        let model = spec.build().unwrap();
        let init = ParamStore::init(model.layout(), &mut seed::rng(cfg.seed, "init", 0));
        assert_eq!(out.store, init);
        let l0 = out.trace[0].loss;
        assert!(out.trace.iter().all(|r| (r.loss - l0).abs() < 1e-12));
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = TrainConfig { lr: 1e-2, max_epochs: 10, seed: 5, ..TrainConfig::default() };
        let (a, _) = run(&cfg, ModelSpec::fc_mlp(6));
        let (b, _) = run(&cfg, ModelSpec::fc_mlp(6));
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.store, b.store);
        assert_eq!(a.best_epoch, b.best_epoch);
    }

    #[test]
    fn early_stopping_and_earliest_tie() {
        // lr = 0: every evaluation ties, so the first one wins and patience ends the run
        let cfg = TrainConfig { lr: 0.0, max_epochs: 100, eval_every: 1, patience: 3, ..TrainConfig::default() };
        let (out, _) = run(&cfg, ModelSpec::fc_mlp(6));
        assert_eq!(out.best_epoch, 1);
        assert_eq!(out.trace.len(), 4);
    }

    #[test]
    fn divergence_is_reported() {
        let d = separable(20);
        let mut bad = d.clone();
        bad.features.as_mut().unwrap()[0][0] = f64::NAN;
        let view = FoldView::new(&bad, 0, &[]);
        let model = ModelSpec::fc_mlp(6).build().unwrap();
        let fit: Vec<usize> = (0..16).collect();
        let t = InputTransform { channels: None, feature_mask: None, feature_mean: vec![0.0; 6], feature_std: vec![1.0; 6] };
        let err = train(&model, &view, &t, &fit, &[16, 17, 18, 19], &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::DivergedLoss { .. }), "{err:?}");
    }
}
