//! Minimal reverse-mode autodiff over dense `f64` tensors, restricted to the
//! layers the classifiers need.
//!
//! Models declare their parameters once into a [`ParamLayout`]; the layout is
//! enough for exact parameter accounting and shape tracing, while a
//! [`ParamStore`] holds the values. Forward code is written once against the
//! [`Backend`] trait and runs either on a differentiable [`Graph`] or on the
//! shape-only [`Tracer`].

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod trace;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{Adam, AdamConfig};
pub use graph::{Backend, Backward, Graph, Mode, Var};
pub use kernels::ConvSpec;
pub use layers::{BatchNorm, Conv3d, Dense};
pub use trace::{Tracer, TraceStats};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![value; n] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Stack equally shaped samples along a new leading batch axis.
    pub fn stack(items: &[&[f64]], item_shape: &[usize]) -> Result<Self> {
        let n: usize = item_shape.iter().product();
        let mut data = Vec::with_capacity(n * items.len());
        for it in items {
            if it.len() != n {
                return Err(Error::LengthMismatch { expected: n, got: it.len() });
            }
            data.extend_from_slice(it);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(item_shape);
        Tensor::new(shape, data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BufferId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`.
    HeUniform { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub fill: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { n_in: usize, n_out: usize },
    Conv3d { in_ch: usize, out_ch: usize, spec: ConvSpec, bias: bool },
    BatchNorm { channels: usize, eps: f64, momentum: f64 },
    Relu,
    GlobalAvgPool,
    Dropout { p: f64 },
    Sigmoid,
    Concat,
}

impl LayerSpec {
    pub fn param_count(&self) -> u64 {
        match *self {
            LayerSpec::Dense { n_in, n_out } => (n_in * n_out + n_out) as u64,
            LayerSpec::Conv3d { in_ch, out_ch, spec, bias } => (in_ch * out_ch * spec.taps() + if bias { out_ch } else { 0 }) as u64,
            LayerSpec::BatchNorm { channels, .. } => 2 * channels as u64,
            _ => 0,
        }
    }
}

/// Declared parameters, buffers and layers of a network, in creation order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub params: Vec<ParamInfo>,
    pub buffers: Vec<BufferInfo>,
    pub layers: Vec<LayerSpec>,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn param(&mut self, name: impl Into<String>, shape: Vec<usize>, init: Init) -> ParamId {
        self.params.push(ParamInfo { name: name.into(), shape, init });
        ParamId(self.params.len() - 1)
    }

    pub fn buffer(&mut self, name: impl Into<String>, shape: Vec<usize>, fill: f64) -> BufferId {
        self.buffers.push(BufferInfo { name: name.into(), shape, fill });
        BufferId(self.buffers.len() - 1)
    }

    pub fn layer(&mut self, spec: LayerSpec) {
        self.layers.push(spec);
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.params[id.0].shape
    }

    /// Sum of parameter tensor sizes.
    pub fn n_params(&self) -> u64 {
        self.params.iter().map(|p| p.shape.iter().product::<usize>() as u64).sum()
    }

    /// Same quantity from the layer specs alone.
    pub fn n_params_from_layers(&self) -> u64 {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }
}

/// Parameter and buffer values for one layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    layout: ParamLayout,
    params: Vec<Tensor>,
    buffers: Vec<Tensor>,
}

impl ParamStore {
    pub fn init<R: Rng + ?Sized>(layout: &ParamLayout, rng: &mut R) -> Self {
        let params = layout
            .params
            .iter()
            .map(|p| {
                let n: usize = p.shape.iter().product();
                let data = match p.init {
                    Init::HeUniform { fan_in } => {
                        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
                        (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                    }
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                };
                Tensor { shape: p.shape.clone(), data }
            })
            .collect();
        let buffers = layout.buffers.iter().map(|b| Tensor::filled(b.shape.clone(), b.fill)).collect();
        ParamStore { layout: layout.clone(), params, buffers }
    }

    pub fn from_parts(layout: ParamLayout, params: Vec<Tensor>, buffers: Vec<Tensor>) -> Result<Self> {
        if params.len() != layout.params.len() || buffers.len() != layout.buffers.len() {
            return Err(Error::ShapeMismatch("parameter/buffer count differs from layout".into()));
        }
        for (t, info) in params.iter().zip(&layout.params) {
            if t.shape() != info.shape.as_slice() {
                return Err(Error::ShapeMismatch(format!("{}: {:?} vs {:?}", info.name, t.shape(), info.shape)));
            }
        }
        for (t, info) in buffers.iter().zip(&layout.buffers) {
            if t.shape() != info.shape.as_slice() {
                return Err(Error::ShapeMismatch(format!("{}: {:?} vs {:?}", info.name, t.shape(), info.shape)));
            }
        }
        Ok(ParamStore { layout, params, buffers })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn param(&self, id: ParamId) -> &Tensor {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0]
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor {
        &self.buffers[id.0]
    }

    pub fn buffers(&self) -> &[Tensor] {
        &self.buffers
    }

    pub fn n_params(&self) -> u64 {
        self.params.iter().map(|t| t.numel() as u64).sum()
    }

    /// Fold a batch's statistics into the running buffers.
    pub fn apply_bn_updates(&mut self, updates: &[graph::BnUpdate]) {
        for u in updates {
            let m = u.momentum;
            for (r, b) in self.buffers[u.running_mean.0].data.iter_mut().zip(&u.batch_mean) {
                *r = (1.0 - m) * *r + m * b;
            }
            for (r, b) in self.buffers[u.running_var.0].data.iter_mut().zip(&u.batch_var) {
                *r = (1.0 - m) * *r + m * b;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn he_uniform_bounds_and_fills() {
        let mut layout = ParamLayout::new();
        let w = layout.param("w", vec![50, 40], Init::HeUniform { fan_in: 50 });
        let b = layout.param("b", vec![40], Init::Zeros);
        let g = layout.param("g", vec![3], Init::Ones);
        let store = ParamStore::init(&layout, &mut ChaCha8Rng::seed_from_u64(0));
        let bound = (6.0f64 / 50.0).sqrt();
        assert!(store.param(w).data().iter().all(|v| v.abs() < bound));
        assert!(store.param(b).data().iter().all(|&v| v == 0.0));
        assert!(store.param(g).data().iter().all(|&v| v == 1.0));
        assert_eq!(store.n_params(), 2000 + 40 + 3);
    }

    #[test]
    fn tensor_shape_checked() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::stack(&[&[1.0, 2.0], &[3.0, 4.0]], &[2]).unwrap();
        assert_eq!(t.shape(), &[2, 2]);
    }
}
