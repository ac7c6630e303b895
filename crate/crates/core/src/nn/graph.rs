//! Tape-based reverse-mode differentiation.

use std::borrow::Cow;
use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, ConvShape, ConvSpec};
use super::layers::BatchNorm;
use super::{BufferId, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Probabilities leaving a sigmoid are kept inside this margin of {0, 1}.
pub const SIGMOID_MARGIN: f64 = 1e-15;
/// Clamp applied inside the binary cross-entropy.
pub const BCE_CLAMP: f64 = 1e-7;

/// Operations shared by the differentiable graph and the shape tracer.
pub trait Backend {
    type Var: Copy;

    fn is_training(&self) -> bool;
    fn param(&mut self, id: ParamId) -> Self::Var;
    fn dense(&mut self, x: Self::Var, w: Self::Var, b: Self::Var) -> Result<Self::Var>;
    fn conv3d(&mut self, x: Self::Var, w: Self::Var, spec: ConvSpec) -> Result<Self::Var>;
    fn batch_norm(&mut self, x: Self::Var, bn: &BatchNorm) -> Result<Self::Var>;
    /// `y[b, c, ...] = x[b, c, ...] + bias[c]`.
    fn channel_bias(&mut self, x: Self::Var, bias: Self::Var) -> Result<Self::Var>;
    fn relu(&mut self, x: Self::Var) -> Result<Self::Var>;
    fn add(&mut self, a: Self::Var, b: Self::Var) -> Result<Self::Var>;
    /// Mean over every axis after the channel axis: `[B, C, ...] -> [B, C]`.
    fn global_avg_pool(&mut self, x: Self::Var) -> Result<Self::Var>;
    fn dropout(&mut self, x: Self::Var, p: f64) -> Result<Self::Var>;
    fn sigmoid(&mut self, x: Self::Var) -> Result<Self::Var>;
    /// Join `[B, a]` and `[B, b]` into `[B, a + b]`.
    fn concat(&mut self, a: Self::Var, b: Self::Var) -> Result<Self::Var>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch statistics produced by a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BnUpdate {
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub momentum: f64,
    pub batch_mean: Vec<f64>,
    /// Unbiased.
    pub batch_var: Vec<f64>,
}

enum Op {
    Input,
    Param(ParamId),
    Dense { x: Var, w: Var, b: Var },
    Conv { x: Var, w: Var, shape: ConvShape },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
    ChannelBias { x: Var, bias: Var },
    Relu(Var),
    Add(Var, Var),
    Scale(Var, f64),
    Gap(Var),
    Dropout { x: Var, mask: Vec<f64> },
    Sigmoid(Var),
    Concat(Var, Var),
    WeightedSum { x: Var, weights: Vec<f64> },
    Bce { p: Var, targets: Vec<f64> },
    Mse(Var, Var),
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
}

pub struct Graph<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node<'a>>,
    params: HashMap<ParamId, Var>,
    mode: Mode,
    rng: Option<ChaCha8Rng>,
    stochastic: bool,
    bn_updates: Vec<BnUpdate>,
}

/// Channel-major view of a `[B, C, ...]` tensor.
fn channel_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::ShapeMismatch(format!("expected [B, C, ...], got {shape:?}")));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

impl<'a> Graph<'a> {
    /// `rng` drives dropout masks; it is only needed in training mode.
    pub fn new(store: &'a ParamStore, mode: Mode, rng: Option<ChaCha8Rng>) -> Self {
        Graph { store, nodes: Vec::new(), params: HashMap::new(), mode, rng, stochastic: false, bn_updates: Vec::new() }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value: Cow::Owned(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// True once a dropout mask has been drawn.
    pub fn is_stochastic(&self) -> bool {
        self.stochastic
    }

    pub fn bn_updates(&self) -> &[BnUpdate] {
        &self.bn_updates
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let t = self.value(x);
        let out = Tensor { shape: t.shape.clone(), data: t.data.iter().map(|v| v * s).collect() };
        self.push(out, Op::Scale(x, s))
    }

    /// Scalar `sum(x * weights)`; a fixed random projection for gradient checks.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<f64>) -> Result<Var> {
        let t = self.value(x);
        if t.numel() != weights.len() {
            return Err(Error::LengthMismatch { expected: t.numel(), got: weights.len() });
        }
        let s = t.data.iter().zip(&weights).map(|(a, b)| a * b).sum();
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x, weights }))
    }

    /// Mean binary cross-entropy of probabilities `p` (`[B]` or `[B, 1]`).
    pub fn bce(&mut self, p: Var, targets: &[f64]) -> Result<Var> {
        let t = self.value(p);
        if t.numel() != targets.len() {
            return Err(Error::ShapeMismatch(format!("{} probabilities vs {} targets", t.numel(), targets.len())));
        }
        let n = targets.len() as f64;
        let loss = t
            .data
            .iter()
            .zip(targets)
            .map(|(&p, &y)| {
                let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln())
            })
            .sum::<f64>()
            / n;
        Ok(self.push(Tensor::scalar(loss), Op::Bce { p, targets: targets.to_vec() }))
    }

    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(Error::ShapeMismatch(format!("mse of {:?} and {:?}", ta.shape, tb.shape)));
        }
        let loss = ta.data.iter().zip(&tb.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / ta.numel().max(1) as f64;
        Ok(self.push(Tensor::scalar(loss), Op::Mse(a, b)))
    }

    pub fn backward(self, loss: Var) -> Result<Backward> {
        if self.value(loss).numel() != 1 {
            return Err(Error::ShapeMismatch(format!("loss must be a scalar, got {:?}", self.shape(loss))));
        }
        let loss_value = self.value(loss).data[0];
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut param_grads: Vec<Tensor> = self.store.layout().params.iter().map(|p| Tensor::zeros(p.shape.clone())).collect();
        let mut leaf_grads = HashMap::new();

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let val = |v: Var| -> &Tensor { &self.nodes[v.0].value };
            match &node.op {
                Op::Input => {
                    leaf_grads.insert(i, Tensor { shape: node.value.shape.clone(), data: g });
                }
                Op::Param(id) => {
                    param_grads[id.0].data.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                &Op::Dense { x, w, b } => {
                    let (bsz, n_in) = (val(x).shape[0], val(x).shape[1]);
                    let n_out = val(w).shape[1];
                    let (dx, dw, db) = kernels::dense_backward(&val(x).data, &val(w).data, &g, bsz, n_in, n_out);
                    acc(&mut grads, x, dx);
                    acc(&mut grads, w, dw);
                    acc(&mut grads, b, db);
                }
                Op::Conv { x, w, shape } => {
                    let (dx, dw) = kernels::conv3d_backward(&val(*x).data, &val(*w).data, &g, shape);
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *w, dw);
                }
                Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                    let (b, c, s) = channel_dims(&node.value.shape)?;
                    let gam = &val(*gamma).data;
                    let n = (b * s) as f64;
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    for bi in 0..b {
                        for ci in 0..c {
                            let o = (bi * c + ci) * s;
                            for k in o..o + s {
                                dgamma[ci] += g[k] * xhat[k];
                                dbeta[ci] += g[k];
                            }
                        }
                    }
                    let mut dx = vec![0.0; g.len()];
                    for bi in 0..b {
                        for ci in 0..c {
                            let o = (bi * c + ci) * s;
                            let scale = gam[ci] * inv_std[ci];
                            for k in o..o + s {
                                dx[k] = if *train {
                                    scale * (g[k] - dbeta[ci] / n - xhat[k] * dgamma[ci] / n)
                                } else {
                                    scale * g[k]
                                };
                            }
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *gamma, dgamma);
                    acc(&mut grads, *beta, dbeta);
                }
                &Op::ChannelBias { x, bias } => {
                    let (_, c, s) = channel_dims(&node.value.shape)?;
                    let mut db = vec![0.0; c];
                    for (k, chunk) in g.chunks(s).enumerate() {
                        db[k % c] += chunk.iter().sum::<f64>();
                    }
                    acc(&mut grads, x, g);
                    acc(&mut grads, bias, db);
                }
                Op::Relu(x) => {
                    let dx = g.iter().zip(&node.value.data).map(|(g, &y)| if y > 0.0 { *g } else { 0.0 }).collect();
                    acc(&mut grads, *x, dx);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Scale(x, s) => acc(&mut grads, *x, g.iter().map(|v| v * s).collect()),
                Op::Gap(x) => {
                    let (_, _, s) = channel_dims(&val(*x).shape)?;
                    let inv = 1.0 / s as f64;
                    let dx = g.iter().flat_map(|&gv| std::iter::repeat_n(gv * inv, s)).collect();
                    acc(&mut grads, *x, dx);
                }
                Op::Dropout { x, mask } => acc(&mut grads, *x, g.iter().zip(mask).map(|(g, m)| g * m).collect()),
                Op::Sigmoid(x) => {
                    let dx = g.iter().zip(&node.value.data).map(|(g, p)| g * p * (1.0 - p)).collect();
                    acc(&mut grads, *x, dx);
                }
                Op::Concat(a, b) => {
                    let (wa, wb) = (val(*a).shape[1], val(*b).shape[1]);
                    let mut ga = Vec::with_capacity(val(*a).numel());
                    let mut gb = Vec::with_capacity(val(*b).numel());
                    for row in g.chunks(wa + wb) {
                        ga.extend_from_slice(&row[..wa]);
                        gb.extend_from_slice(&row[wa..]);
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::WeightedSum { x, weights } => acc(&mut grads, *x, weights.iter().map(|w| w * g[0]).collect()),
                Op::Bce { p, targets } => {
                    let n = targets.len() as f64;
                    let dp = val(*p)
                        .data
                        .iter()
                        .zip(targets)
                        .map(|(&p, &y)| {
                            if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
                                return 0.0;
                            }
                            g[0] * -(y / p - (1.0 - y) / (1.0 - p)) / n
                        })
                        .collect();
                    acc(&mut grads, *p, dp);
                }
                Op::Mse(a, b) => {
                    let (ta, tb) = (val(*a), val(*b));
                    let k = 2.0 * g[0] / ta.numel().max(1) as f64;
                    let da: Vec<f64> = ta.data.iter().zip(&tb.data).map(|(x, y)| k * (x - y)).collect();
                    let db = da.iter().map(|v| -v).collect();
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
            }
        }
        Ok(Backward { loss: loss_value, param_grads, leaf_grads, bn_updates: self.bn_updates })
    }
}

impl<'a> Backend for Graph<'a> {
    type Var = Var;

    fn is_training(&self) -> bool {
        self.mode == Mode::Train
    }

    fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node { value: Cow::Borrowed(self.store.param(id)), op: Op::Param(id) });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs != [ws[1]] {
            return Err(Error::ShapeMismatch(format!("dense: x {xs:?}, W {ws:?}, b {bs:?}")));
        }
        let (bsz, n_in, n_out) = (xs[0], xs[1], ws[1]);
        let y = kernels::dense_forward(&self.value(x).data, &self.value(w).data, &self.value(b).data, bsz, n_in, n_out);
        Ok(self.push(Tensor { shape: vec![bsz, n_out], data: y }, Op::Dense { x, w, b }))
    }

    fn conv3d(&mut self, x: Var, w: Var, spec: ConvSpec) -> Result<Var> {
        let shape = ConvShape::new(self.shape(x), self.shape(w), spec)?;
        let y = kernels::conv3d_forward(&self.value(x).data, &self.value(w).data, &shape);
        Ok(self.push(Tensor { shape: shape.output_shape(), data: y }, Op::Conv { x, w, shape }))
    }

    fn batch_norm(&mut self, x: Var, bn: &BatchNorm) -> Result<Var> {
        let (b, c, s) = channel_dims(self.shape(x))?;
        if c != bn.channels {
            return Err(Error::ShapeMismatch(format!("batch norm over {} channels got {c}", bn.channels)));
        }
        let gamma = self.param(bn.gamma);
        let beta = self.param(bn.beta);
        let train = self.is_training();
        let xd = &self.value(x).data;
        let (mean, var) = if train {
            let n = (b * s) as f64;
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for bi in 0..b {
                for ci in 0..c {
                    let o = (bi * c + ci) * s;
                    mean[ci] += xd[o..o + s].iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            for bi in 0..b {
                for ci in 0..c {
                    let o = (bi * c + ci) * s;
                    var[ci] += xd[o..o + s].iter().map(|v| (v - mean[ci]) * (v - mean[ci])).sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= n);
            (mean, var)
        } else {
            (self.store.buffer(bn.running_mean).data.clone(), self.store.buffer(bn.running_var).data.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + bn.eps).sqrt()).collect();
        let (gd, bd) = (&self.value(gamma).data, &self.value(beta).data);
        let mut xhat = vec![0.0; xd.len()];
        let mut y = vec![0.0; xd.len()];
        for bi in 0..b {
            for ci in 0..c {
                let o = (bi * c + ci) * s;
                for k in o..o + s {
                    xhat[k] = (xd[k] - mean[ci]) * inv_std[ci];
                    y[k] = gd[ci] * xhat[k] + bd[ci];
                }
            }
        }
        if train {
            let n = b * s;
            let unbias = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
            self.bn_updates.push(BnUpdate {
                running_mean: bn.running_mean,
                running_var: bn.running_var,
                momentum: bn.momentum,
                batch_mean: mean,
                batch_var: var.iter().map(|v| v * unbias).collect(),
            });
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(Tensor { shape, data: y }, Op::BatchNorm { x, gamma, beta, xhat, inv_std, train }))
    }

    fn channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, c, s) = channel_dims(self.shape(x))?;
        if self.shape(bias) != [c] {
            return Err(Error::ShapeMismatch(format!("bias {:?} for {c} channels", self.shape(bias))));
        }
        let bd = &self.value(bias).data;
        let t = self.value(x);
        let data = t.data.chunks(s).enumerate().flat_map(|(k, ch)| ch.iter().map(move |v| v + bd[k % c])).collect();
        let out = Tensor { shape: t.shape.clone(), data };
        Ok(self.push(out, Op::ChannelBias { x, bias }))
    }

    fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor { shape: t.shape.clone(), data: t.data.iter().map(|v| v.max(0.0)).collect() };
        Ok(self.push(out, Op::Relu(x)))
    }

    fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(Error::ShapeMismatch(format!("add of {:?} and {:?}", ta.shape, tb.shape)));
        }
        let out = Tensor { shape: ta.shape.clone(), data: ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect() };
        Ok(self.push(out, Op::Add(a, b)))
    }

    fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (b, c, s) = channel_dims(self.shape(x))?;
        let data = self.value(x).data.chunks(s).map(|ch| ch.iter().sum::<f64>() / s as f64).collect();
        Ok(self.push(Tensor { shape: vec![b, c], data }, Op::Gap(x)))
    }

    fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidConfig(format!("dropout p = {p}")));
        }
        if !self.is_training() || p == 0.0 {
            return Ok(x);
        }
        let rng = self.rng.as_mut().ok_or_else(|| Error::InvalidConfig("training-mode dropout needs an rng".into()))?;
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.nodes[x.0].value.numel()).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
        self.stochastic = true;
        let t = self.value(x);
        let out = Tensor { shape: t.shape.clone(), data: t.data.iter().zip(&mask).map(|(v, m)| v * m).collect() };
        Ok(self.push(out, Op::Dropout { x, mask }))
    }

    fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let data = t.data.iter().map(|v| (1.0 / (1.0 + (-v).exp())).clamp(SIGMOID_MARGIN, 1.0 - SIGMOID_MARGIN)).collect();
        let out = Tensor { shape: t.shape.clone(), data };
        Ok(self.push(out, Op::Sigmoid(x)))
    }

    fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape.len() != 2 || tb.shape.len() != 2 || ta.shape[0] != tb.shape[0] {
            return Err(Error::ShapeMismatch(format!("concat of {:?} and {:?}", ta.shape, tb.shape)));
        }
        let (wa, wb) = (ta.shape[1], tb.shape[1]);
        let mut data = Vec::with_capacity(ta.numel() + tb.numel());
        for (ra, rb) in ta.data.chunks(wa).zip(tb.data.chunks(wb)) {
            data.extend_from_slice(ra);
            data.extend_from_slice(rb);
        }
        let out = Tensor { shape: vec![ta.shape[0], wa + wb], data };
        Ok(self.push(out, Op::Concat(a, b)))
    }
}

/// Result of a backward pass.
#[derive(Debug, Clone)]
pub struct Backward {
    pub loss: f64,
    /// One tensor per declared parameter; zeros where no gradient flowed.
    pub param_grads: Vec<Tensor>,
    leaf_grads: HashMap<usize, Tensor>,
    pub bn_updates: Vec<BnUpdate>,
}

impl Backward {
    pub fn input_grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads.get(&v.0)
    }

    pub fn param_grad(&self, id: ParamId) -> &Tensor {
        &self.param_grads[id.0]
    }
}
