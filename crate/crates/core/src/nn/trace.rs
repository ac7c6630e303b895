//! Shape-only execution of a forward definition, for parameter, FLOP and
//! activation-memory accounting without allocating any tensors.
//!
//! Convention: FLOPs count 2 per multiply-accumulate in dense and convolution
//! layers only; normalisation, activations, pooling and additions are free.
//! Activation bytes sum every intermediate output at 8 bytes per element.

use serde::{Deserialize, Serialize};

use super::graph::Backend;
use super::kernels::{ConvShape, ConvSpec};
use super::layers::BatchNorm;
use super::{ParamId, ParamLayout};
use crate::error::{Error, Result};

pub const ELEMENT_BYTES: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStats {
    pub params: u64,
    pub flops: u64,
    pub activation_bytes: u64,
}

pub struct Tracer<'l> {
    layout: &'l ParamLayout,
    shapes: Vec<Vec<usize>>,
    flops: u64,
    activation_elems: u64,
    training: bool,
}

impl<'l> Tracer<'l> {
    pub fn new(layout: &'l ParamLayout) -> Self {
        Tracer { layout, shapes: Vec::new(), flops: 0, activation_elems: 0, training: false }
    }

    pub fn input(&mut self, shape: Vec<usize>) -> usize {
        self.shapes.push(shape);
        self.shapes.len() - 1
    }

    pub fn shape(&self, v: usize) -> &[usize] {
        &self.shapes[v]
    }

    fn output(&mut self, shape: Vec<usize>) -> usize {
        self.activation_elems += shape.iter().product::<usize>() as u64;
        self.shapes.push(shape);
        self.shapes.len() - 1
    }

    pub fn stats(&self) -> TraceStats {
        TraceStats { params: self.layout.n_params(), flops: self.flops, activation_bytes: self.activation_elems * ELEMENT_BYTES }
    }
}

impl<'l> Backend for Tracer<'l> {
    type Var = usize;

    fn is_training(&self) -> bool {
        self.training
    }

    fn param(&mut self, id: ParamId) -> usize {
        self.shapes.push(self.layout.shape(id).to_vec());
        self.shapes.len() - 1
    }

    fn dense(&mut self, x: usize, w: usize, _b: usize) -> Result<usize> {
        let (xs, ws) = (&self.shapes[x], &self.shapes[w]);
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(Error::ShapeMismatch(format!("dense: x {xs:?}, W {ws:?}")));
        }
        let (b, n_in, n_out) = (xs[0], ws[0], ws[1]);
        self.flops += 2 * (b * n_in * n_out) as u64;
        Ok(self.output(vec![b, n_out]))
    }

    fn conv3d(&mut self, x: usize, w: usize, spec: ConvSpec) -> Result<usize> {
        let shape = ConvShape::new(&self.shapes[x], &self.shapes[w], spec)?;
        self.flops += 2 * shape.macs();
        Ok(self.output(shape.output_shape()))
    }

    fn batch_norm(&mut self, x: usize, bn: &BatchNorm) -> Result<usize> {
        if self.shapes[x].get(1) != Some(&bn.channels) {
            return Err(Error::ShapeMismatch(format!("batch norm over {} channels got {:?}", bn.channels, self.shapes[x])));
        }
        Ok(self.output(self.shapes[x].clone()))
    }

    fn channel_bias(&mut self, x: usize, bias: usize) -> Result<usize> {
        if self.shapes[x].get(1) != self.shapes[bias].first() {
            return Err(Error::ShapeMismatch(format!("bias {:?} for {:?}", self.shapes[bias], self.shapes[x])));
        }
        Ok(self.output(self.shapes[x].clone()))
    }

    fn relu(&mut self, x: usize) -> Result<usize> {
        Ok(self.output(self.shapes[x].clone()))
    }

    fn add(&mut self, a: usize, b: usize) -> Result<usize> {
        if self.shapes[a] != self.shapes[b] {
            return Err(Error::ShapeMismatch(format!("add of {:?} and {:?}", self.shapes[a], self.shapes[b])));
        }
        Ok(self.output(self.shapes[a].clone()))
    }

    fn global_avg_pool(&mut self, x: usize) -> Result<usize> {
        let s = &self.shapes[x];
        if s.len() < 2 {
            return Err(Error::ShapeMismatch(format!("pool of {s:?}")));
        }
        Ok(self.output(vec![s[0], s[1]]))
    }

    fn dropout(&mut self, x: usize, _p: f64) -> Result<usize> {
        Ok(x)
    }

    fn sigmoid(&mut self, x: usize) -> Result<usize> {
        Ok(self.output(self.shapes[x].clone()))
    }

    fn concat(&mut self, a: usize, b: usize) -> Result<usize> {
        let (sa, sb) = (&self.shapes[a], &self.shapes[b]);
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(Error::ShapeMismatch(format!("concat of {sa:?} and {sb:?}")));
        }
        Ok(self.output(vec![sa[0], sa[1] + sb[1]]))
    }
}
