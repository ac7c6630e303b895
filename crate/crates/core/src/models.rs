//! The fused spatial-temporal classifier, its single-branch ablations and
//! the connectome baselines, all built from the `nn` layers.
//!
//! Volume inputs are `[B, C, Z, Y, X]` tensors (a `Volume3D` buffer read
//! as-is), connectome features are `[B, D]`, ROI series are `[B, M, 1, 1, T]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::graph::{Backend, Graph, Var};
use crate::nn::layers::{BatchNorm, Conv3d, Dense};
use crate::nn::trace::{TraceStats, Tracer};
use crate::nn::{ConvSpec, LayerSpec, ParamLayout};

pub const DROPOUT: f64 = 0.2;
pub const FLOP_CONVENTION: &str = "2 FLOPs per multiply-accumulate in dense and convolution layers; normalization, activations, pooling and additions not counted";

/// Voxel branch: stem conv, residual stages, pointwise conv, global pooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StvConfig {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub stage_channels: Vec<usize>,
    pub stage_strides: Vec<usize>,
    pub embed_dim: usize,
}

impl Default for StvConfig {
    fn default() -> Self {
        StvConfig { in_channels: 4, stem_channels: 64, stage_channels: vec![128, 256, 512], stage_strides: vec![2, 2, 2], embed_dim: 512 }
    }
}

impl StvConfig {
    /// Narrow variant for desk-scale experiments.
    pub fn mini(in_channels: usize) -> Self {
        StvConfig { in_channels, stem_channels: 8, stage_channels: vec![8, 16, 16], stage_strides: vec![2, 2, 2], embed_dim: 16 }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [self.in_channels, self.stem_channels, self.embed_dim];
        if widths.iter().chain(&self.stage_channels).chain(&self.stage_strides).any(|&w| w == 0) {
            return Err(Error::InvalidConfig(format!("zero width or stride in {self:?}")));
        }
        if self.stage_channels.len() != self.stage_strides.len() {
            return Err(Error::InvalidConfig("stage_channels and stage_strides differ in length".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Voxel branch and connectome branch fused by one dense layer. With
    /// `diagnet`, `feature_dim` is the quartile-masked length and a linear
    /// decoder reconstructs the features from the connectome embedding.
    Sto { stv: StvConfig, feature_dim: usize, diagnet: bool, dropout: f64, recon_weight: f64 },
    StvOnly { stv: StvConfig, dropout: f64 },
    StrOnly { feature_dim: usize, embed_dim: usize, dropout: f64 },
    FcMlp { feature_dim: usize, hidden: usize, dropout: f64 },
    /// Autoencoder over quartile-masked features with a classifier on the code.
    DiagNet { feature_dim: usize, hidden: usize, recon_weight: f64 },
    Conv1d { n_rois: usize, crop_len: usize, filters: usize, kernel: usize },
}

/// Length kept by quartile selection: top and bottom quarter of `d`.
pub fn diagnet_dim(d: usize) -> usize {
    2 * (d / 4)
}

impl ModelSpec {
    pub fn sto(stv: StvConfig, feature_dim: usize) -> Self {
        ModelSpec::Sto { stv, feature_dim, diagnet: false, dropout: DROPOUT, recon_weight: 1.0 }
    }

    /// `raw_dim` is the unmasked connectome length.
    pub fn sto_diagnet(stv: StvConfig, raw_dim: usize) -> Self {
        ModelSpec::Sto { stv, feature_dim: diagnet_dim(raw_dim), diagnet: true, dropout: DROPOUT, recon_weight: 1.0 }
    }

    pub fn stv_only(stv: StvConfig) -> Self {
        ModelSpec::StvOnly { stv, dropout: DROPOUT }
    }

    pub fn str_only(feature_dim: usize, embed_dim: usize) -> Self {
        ModelSpec::StrOnly { feature_dim, embed_dim, dropout: DROPOUT }
    }

    pub fn fc_mlp(feature_dim: usize) -> Self {
        ModelSpec::FcMlp { feature_dim, hidden: 16, dropout: DROPOUT }
    }

    /// Hidden width defaults to half the masked length.
    pub fn diagnet(raw_dim: usize) -> Self {
        let d = diagnet_dim(raw_dim);
        ModelSpec::DiagNet { feature_dim: d, hidden: (d / 2).max(1), recon_weight: 1.0 }
    }

    pub fn conv1d(n_rois: usize, crop_len: usize) -> Self {
        ModelSpec::Conv1d { n_rois, crop_len, filters: 32, kernel: 7 }
    }

    pub fn needs_volume(&self) -> bool {
        matches!(self, ModelSpec::Sto { .. } | ModelSpec::StvOnly { .. })
    }

    pub fn needs_features(&self) -> bool {
        matches!(self, ModelSpec::Sto { .. } | ModelSpec::StrOnly { .. } | ModelSpec::FcMlp { .. } | ModelSpec::DiagNet { .. })
    }

    pub fn needs_series(&self) -> bool {
        matches!(self, ModelSpec::Conv1d { .. })
    }

    /// Whether the connectome input must be quartile-masked.
    pub fn uses_diagnet_mask(&self) -> bool {
        matches!(self, ModelSpec::Sto { diagnet: true, .. } | ModelSpec::DiagNet { .. })
    }

    pub fn feature_dim(&self) -> Option<usize> {
        match *self {
            ModelSpec::Sto { feature_dim, .. }
            | ModelSpec::StrOnly { feature_dim, .. }
            | ModelSpec::FcMlp { feature_dim, .. }
            | ModelSpec::DiagNet { feature_dim, .. } => Some(feature_dim),
            _ => None,
        }
    }

    pub fn volume_channels(&self) -> Option<usize> {
        match self {
            ModelSpec::Sto { stv, .. } | ModelSpec::StvOnly { stv, .. } => Some(stv.in_channels),
            _ => None,
        }
    }

    pub fn recon_weight(&self) -> f64 {
        match *self {
            ModelSpec::Sto { diagnet: true, recon_weight, .. } | ModelSpec::DiagNet { recon_weight, .. } => recon_weight,
            _ => 0.0,
        }
    }

    pub fn build(&self) -> Result<Model> {
        Model::new(self.clone())
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv3d,
    bn1: BatchNorm,
    conv2: Conv3d,
    bn2: BatchNorm,
    shortcut: Option<(Conv3d, BatchNorm)>,
}

#[derive(Debug, Clone)]
struct StvNet {
    stem: Conv3d,
    stem_bn: BatchNorm,
    blocks: Vec<ResBlock>,
    head: Conv3d,
    head_bn: BatchNorm,
}

impl StvNet {
    fn new(layout: &mut ParamLayout, cfg: &StvConfig) -> Result<Self> {
        cfg.validate()?;
        let stem = Conv3d::new(layout, "stv.stem", cfg.in_channels, cfg.stem_channels, ConvSpec::cubic(3, 1, 1));
        let stem_bn = BatchNorm::new(layout, "stv.stem_bn", cfg.stem_channels);
        layout.layer(LayerSpec::Relu);
        let mut blocks = Vec::new();
        let mut c_in = cfg.stem_channels;
        for (i, (&c_out, &s)) in cfg.stage_channels.iter().zip(&cfg.stage_strides).enumerate() {
            let name = format!("stv.block{}", i + 1);
            let conv1 = Conv3d::new(layout, &format!("{name}.conv1"), c_in, c_out, ConvSpec::cubic(3, s, 1));
            let bn1 = BatchNorm::new(layout, &format!("{name}.bn1"), c_out);
            layout.layer(LayerSpec::Relu);
            let conv2 = Conv3d::new(layout, &format!("{name}.conv2"), c_out, c_out, ConvSpec::cubic(3, 1, 1));
            let bn2 = BatchNorm::new(layout, &format!("{name}.bn2"), c_out);
            let shortcut = (c_in != c_out || s != 1).then(|| {
                (
                    Conv3d::new(layout, &format!("{name}.proj"), c_in, c_out, ConvSpec::cubic(1, s, 0)),
                    BatchNorm::new(layout, &format!("{name}.proj_bn"), c_out),
                )
            });
            layout.layer(LayerSpec::Relu);
            blocks.push(ResBlock { conv1, bn1, conv2, bn2, shortcut });
            c_in = c_out;
        }
        let head = Conv3d::new(layout, "stv.pointwise", c_in, cfg.embed_dim, ConvSpec::cubic(1, 1, 0));
        let head_bn = BatchNorm::new(layout, "stv.pointwise_bn", cfg.embed_dim);
        layout.layer(LayerSpec::Relu);
        layout.layer(LayerSpec::GlobalAvgPool);
        Ok(StvNet { stem, stem_bn, blocks, head, head_bn })
    }

    fn forward<B: Backend>(&self, be: &mut B, x: B::Var) -> Result<B::Var> {
        let h = self.stem.forward(be, x)?;
        let h = self.stem_bn.forward(be, h)?;
        let mut h = be.relu(h)?;
        for b in &self.blocks {
            let y = b.conv1.forward(be, h)?;
            let y = b.bn1.forward(be, y)?;
            let y = be.relu(y)?;
            let y = b.conv2.forward(be, y)?;
            let y = b.bn2.forward(be, y)?;
            let skip = match &b.shortcut {
                Some((conv, bn)) => {
                    let s = conv.forward(be, h)?;
                    bn.forward(be, s)?
                }
                None => h,
            };
            let sum = be.add(y, skip)?;
            h = be.relu(sum)?;
        }
        let h = self.head.forward(be, h)?;
        let h = self.head_bn.forward(be, h)?;
        let h = be.relu(h)?;
        be.global_avg_pool(h)
    }
}

#[derive(Debug, Clone)]
enum Net {
    Sto { stv: StvNet, encoder: Dense, decoder: Option<Dense>, head: Dense, dropout: f64 },
    StvOnly { stv: StvNet, head: Dense, dropout: f64 },
    StrOnly { fc: Dense, head: Dense, dropout: f64 },
    FcMlp { fc1: Dense, fc2: Dense, dropout: f64 },
    DiagNet { encoder: Dense, decoder: Dense, head: Dense },
    Conv1d { conv: Conv3d, head: Dense },
}

/// Per-branch inputs; unused branches are `None`.
#[derive(Debug, Clone, Copy)]
pub struct ModelInputs<V> {
    pub volume: Option<V>,
    pub features: Option<V>,
    pub series: Option<V>,
}

#[derive(Debug, Clone, Copy)]
pub struct ModelOutputs<V> {
    /// `[B, 1]` probabilities.
    pub prob: V,
    /// Reconstruction and its target, for autoencoding variants.
    pub recon: Option<(V, V)>,
}

#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    layout: ParamLayout,
    net: Net,
}

fn check_dropout(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("dropout p = {p} must be in [0, 1)")))
    }
}

fn require<V>(v: Option<V>, what: &str) -> Result<V> {
    v.ok_or_else(|| Error::ShapeMismatch(format!("model needs a {what} input")))
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let mut l = ParamLayout::new();
        let net = match &spec {
            &ModelSpec::Sto { ref stv, feature_dim, diagnet, dropout, recon_weight } => {
                check_dropout(dropout)?;
                if feature_dim < 2 || recon_weight < 0.0 {
                    return Err(Error::InvalidConfig(format!("feature_dim = {feature_dim}, recon_weight = {recon_weight}")));
                }
                let stv_net = StvNet::new(&mut l, stv)?;
                let encoder = Dense::new(&mut l, "str.fc", feature_dim, stv.embed_dim);
                l.layer(LayerSpec::Relu);
                let decoder = diagnet.then(|| Dense::new(&mut l, "str.decoder", stv.embed_dim, feature_dim));
                l.layer(LayerSpec::Concat);
                l.layer(LayerSpec::Dropout { p: dropout });
                let head = Dense::new(&mut l, "fusion", 2 * stv.embed_dim, 1);
                l.layer(LayerSpec::Sigmoid);
                Net::Sto { stv: stv_net, encoder, decoder, head, dropout }
            }
            ModelSpec::StvOnly { stv, dropout } => {
                check_dropout(*dropout)?;
                let stv_net = StvNet::new(&mut l, stv)?;
                l.layer(LayerSpec::Dropout { p: *dropout });
                let head = Dense::new(&mut l, "head", stv.embed_dim, 1);
                l.layer(LayerSpec::Sigmoid);
                Net::StvOnly { stv: stv_net, head, dropout: *dropout }
            }
            &ModelSpec::StrOnly { feature_dim, embed_dim, dropout } => {
                check_dropout(dropout)?;
                let fc = Dense::new(&mut l, "str.fc", feature_dim, embed_dim);
                l.layer(LayerSpec::Relu);
                l.layer(LayerSpec::Dropout { p: dropout });
                let head = Dense::new(&mut l, "head", embed_dim, 1);
                l.layer(LayerSpec::Sigmoid);
                Net::StrOnly { fc, head, dropout }
            }
            &ModelSpec::FcMlp { feature_dim, hidden, dropout } => {
                check_dropout(dropout)?;
                if feature_dim < 2 || hidden == 0 {
                    return Err(Error::InvalidConfig(format!("fc_mlp dims {feature_dim} -> {hidden}")));
                }
                let fc1 = Dense::new(&mut l, "fc1", feature_dim, hidden);
                l.layer(LayerSpec::Relu);
                l.layer(LayerSpec::Dropout { p: dropout });
                let fc2 = Dense::new(&mut l, "fc2", hidden, 1);
                l.layer(LayerSpec::Sigmoid);
                Net::FcMlp { fc1, fc2, dropout }
            }
            &ModelSpec::DiagNet { feature_dim, hidden, recon_weight } => {
                if feature_dim < 2 || hidden == 0 || recon_weight < 0.0 {
                    return Err(Error::InvalidConfig(format!("diagnet dims {feature_dim} -> {hidden}, weight {recon_weight}")));
                }
                let encoder = Dense::new(&mut l, "encoder", feature_dim, hidden);
                l.layer(LayerSpec::Relu);
                let decoder = Dense::new(&mut l, "decoder", hidden, feature_dim);
                let head = Dense::new(&mut l, "slp", hidden, 1);
                l.layer(LayerSpec::Sigmoid);
                Net::DiagNet { encoder, decoder, head }
            }
            &ModelSpec::Conv1d { n_rois, crop_len, filters, kernel } => {
                if n_rois < 2 || crop_len < 8 || filters == 0 || kernel == 0 || kernel > crop_len {
                    return Err(Error::InvalidConfig(format!("conv1d: M = {n_rois}, T = {crop_len}, {filters} filters of {kernel}")));
                }
                let spec = ConvSpec { kernel: [1, 1, kernel], stride: [1; 3], padding: [0; 3] };
                let conv = Conv3d::with_bias(&mut l, "conv1d", n_rois, filters, spec);
                l.layer(LayerSpec::Relu);
                l.layer(LayerSpec::GlobalAvgPool);
                let head = Dense::new(&mut l, "head", filters, 1);
                l.layer(LayerSpec::Sigmoid);
                Net::Conv1d { conv, head }
            }
        };
        Ok(Model { spec, layout: l, net })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn n_params(&self) -> u64 {
        self.layout.n_params()
    }

    pub fn forward<B: Backend>(&self, be: &mut B, inputs: &ModelInputs<B::Var>) -> Result<ModelOutputs<B::Var>> {
        let mut recon = None;
        let logit = match &self.net {
            Net::Sto { stv, encoder, decoder, head, dropout } => {
                let ev = stv.forward(be, require(inputs.volume, "volume")?)?;
                let f = require(inputs.features, "feature")?;
                let er = encoder.forward(be, f)?;
                let er = be.relu(er)?;
                if let Some(dec) = decoder {
                    recon = Some((dec.forward(be, er)?, f));
                }
                let joined = be.concat(ev, er)?;
                let joined = be.dropout(joined, *dropout)?;
                head.forward(be, joined)?
            }
            Net::StvOnly { stv, head, dropout } => {
                let ev = stv.forward(be, require(inputs.volume, "volume")?)?;
                let ev = be.dropout(ev, *dropout)?;
                head.forward(be, ev)?
            }
            Net::StrOnly { fc, head, dropout } => {
                let h = fc.forward(be, require(inputs.features, "feature")?)?;
                let h = be.relu(h)?;
                let h = be.dropout(h, *dropout)?;
                head.forward(be, h)?
            }
            Net::FcMlp { fc1, fc2, dropout } => {
                let h = fc1.forward(be, require(inputs.features, "feature")?)?;
                let h = be.relu(h)?;
                let h = be.dropout(h, *dropout)?;
                fc2.forward(be, h)?
            }
            Net::DiagNet { encoder, decoder, head } => {
                let f = require(inputs.features, "feature")?;
                let code = encoder.forward(be, f)?;
                let code = be.relu(code)?;
                recon = Some((decoder.forward(be, code)?, f));
                head.forward(be, code)?
            }
            Net::Conv1d { conv, head } => {
                let h = conv.forward(be, require(inputs.series, "ROI series")?)?;
                let h = be.relu(h)?;
                let h = be.global_avg_pool(h)?;
                head.forward(be, h)?
            }
        };
        Ok(ModelOutputs { prob: be.sigmoid(logit)?, recon })
    }

    /// `BCE(prob, y) + recon_weight * MSE(reconstruction, input)`.
    pub fn loss(&self, g: &mut Graph<'_>, out: &ModelOutputs<Var>, targets: &[f64]) -> Result<Var> {
        let bce = g.bce(out.prob, targets)?;
        match out.recon {
            Some((recon, target)) => {
                let mse = g.mse(recon, target)?;
                let weighted = g.scale(mse, self.spec.recon_weight());
                g.add(bce, weighted)
            }
            None => Ok(bce),
        }
    }

    /// Input shapes for a batch of `batch` samples.
    pub fn input_shapes(&self, batch: usize, volume_grid: Option<[usize; 3]>) -> Result<ModelInputs<Vec<usize>>> {
        let volume = match self.spec.volume_channels() {
            Some(c) => {
                let g = volume_grid.ok_or_else(|| Error::InvalidConfig("volume grid required".into()))?;
                Some(vec![batch, c, g[0], g[1], g[2]])
            }
            None => None,
        };
        let features = self.spec.feature_dim().map(|d| vec![batch, d]);
        let series = match self.spec {
            ModelSpec::Conv1d { n_rois, crop_len, .. } => Some(vec![batch, n_rois, 1, 1, crop_len]),
            _ => None,
        };
        Ok(ModelInputs { volume, features, series })
    }

    /// Parameters, forward FLOPs and activation memory for one sample.
    pub fn stats(&self, volume_grid: Option<[usize; 3]>) -> Result<ModelStats> {
        let mut tr = Tracer::new(&self.layout);
        let shapes = self.input_shapes(1, volume_grid)?;
        let inputs = ModelInputs {
            volume: shapes.volume.map(|s| tr.input(s)),
            features: shapes.features.map(|s| tr.input(s)),
            series: shapes.series.map(|s| tr.input(s)),
        };
        self.forward(&mut tr, &inputs)?;
        Ok(ModelStats::from_trace(tr.stats()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelStats {
    pub params: u64,
    pub flops: u64,
    pub activation_bytes: u64,
    pub gflops: f64,
    /// Parameters plus activations, 8 bytes per element, in MiB.
    pub memory_mb: f64,
    pub flop_convention: String,
}

impl ModelStats {
    fn from_trace(t: TraceStats) -> Self {
        ModelStats {
            params: t.params,
            flops: t.flops,
            activation_bytes: t.activation_bytes,
            gflops: t.flops as f64 / 1e9,
            memory_mb: (t.params * 8 + t.activation_bytes) as f64 / (1024.0 * 1024.0),
            flop_convention: FLOP_CONVENTION.to_string(),
        }
    }
}
