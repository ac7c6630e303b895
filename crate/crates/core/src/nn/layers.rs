//! Parameterised layers. Each constructor declares its parameters into a
//! [`ParamLayout`] and records its [`LayerSpec`].

use serde::{Deserialize, Serialize};

use super::graph::Backend;
use super::kernels::ConvSpec;
use super::{BufferId, Init, LayerSpec, ParamId, ParamLayout};
use crate::error::Result;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub n_in: usize,
    pub n_out: usize,
}

impl Dense {
    pub fn new(layout: &mut ParamLayout, name: &str, n_in: usize, n_out: usize) -> Self {
        let w = layout.param(format!("{name}.weight"), vec![n_in, n_out], Init::HeUniform { fan_in: n_in });
        let b = layout.param(format!("{name}.bias"), vec![n_out], Init::Zeros);
        layout.layer(LayerSpec::Dense { n_in, n_out });
        Dense { w, b, n_in, n_out }
    }

    pub fn forward<B: Backend>(&self, be: &mut B, x: B::Var) -> Result<B::Var> {
        let (w, b) = (be.param(self.w), be.param(self.b));
        be.dense(x, w, b)
    }
}

/// 3D convolution; bias-free unless built with [`Conv3d::with_bias`], since
/// convolutions followed by batch norm do not need one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conv3d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub spec: ConvSpec,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl Conv3d {
    pub fn new(layout: &mut ParamLayout, name: &str, in_ch: usize, out_ch: usize, spec: ConvSpec) -> Self {
        Self::build(layout, name, in_ch, out_ch, spec, false)
    }

    pub fn with_bias(layout: &mut ParamLayout, name: &str, in_ch: usize, out_ch: usize, spec: ConvSpec) -> Self {
        Self::build(layout, name, in_ch, out_ch, spec, true)
    }

    fn build(layout: &mut ParamLayout, name: &str, in_ch: usize, out_ch: usize, spec: ConvSpec, bias: bool) -> Self {
        let [k0, k1, k2] = spec.kernel;
        let w = layout.param(format!("{name}.weight"), vec![out_ch, in_ch, k0, k1, k2], Init::HeUniform { fan_in: in_ch * spec.taps() });
        let b = bias.then(|| layout.param(format!("{name}.bias"), vec![out_ch], Init::Zeros));
        layout.layer(LayerSpec::Conv3d { in_ch, out_ch, spec, bias });
        Conv3d { w, b, spec, in_ch, out_ch }
    }

    pub fn forward<B: Backend>(&self, be: &mut B, x: B::Var) -> Result<B::Var> {
        let w = be.param(self.w);
        let y = be.conv3d(x, w, self.spec)?;
        match self.b {
            Some(b) => {
                let b = be.param(b);
                be.channel_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(layout: &mut ParamLayout, name: &str, channels: usize) -> Self {
        let gamma = layout.param(format!("{name}.gamma"), vec![channels], Init::Ones);
        let beta = layout.param(format!("{name}.beta"), vec![channels], Init::Zeros);
        let running_mean = layout.buffer(format!("{name}.running_mean"), vec![channels], 0.0);
        let running_var = layout.buffer(format!("{name}.running_var"), vec![channels], 1.0);
        layout.layer(LayerSpec::BatchNorm { channels, eps: BN_EPS, momentum: BN_MOMENTUM });
        BatchNorm { gamma, beta, running_mean, running_var, channels, eps: BN_EPS, momentum: BN_MOMENTUM }
    }

    pub fn forward<B: Backend>(&self, be: &mut B, x: B::Var) -> Result<B::Var> {
        be.batch_norm(x, self)
    }
}
