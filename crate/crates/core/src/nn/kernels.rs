//! Dense and 3D convolution kernels on row-major `f64` buffers.
//!
//! Convolutions use the cross-correlation convention on `[B, C, D0, D1, D2]`
//! tensors with `[C', C, k0, k1, k2]` kernels. Each batch item goes through
//! an im2col buffer; per-item kernel gradients are summed in batch order so
//! results do not depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvSpec {
    pub fn cubic(kernel: usize, stride: usize, padding: usize) -> Self {
        ConvSpec { kernel: [kernel; 3], stride: [stride; 3], padding: [padding; 3] }
    }

    pub fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn output_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            if self.kernel[a] == 0 || self.stride[a] == 0 {
                return Err(Error::ShapeMismatch(format!("degenerate conv spec {self:?}")));
            }
            let padded = input[a] + 2 * self.padding[a];
            if padded < self.kernel[a] {
                return Err(Error::EmptyOutput(format!(
                    "axis {a}: input {} + 2*{} padding is smaller than kernel {}",
                    input[a], self.padding[a], self.kernel[a]
                )));
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }
}

/// Geometry of one convolution call.
#[derive(Debug, Clone, Copy)]
pub struct ConvShape {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub input: [usize; 3],
    pub output: [usize; 3],
    pub spec: ConvSpec,
}

impl ConvShape {
    pub fn new(x_shape: &[usize], w_shape: &[usize], spec: ConvSpec) -> Result<Self> {
        if x_shape.len() != 5 || w_shape.len() != 5 {
            return Err(Error::ShapeMismatch(format!("conv3d needs rank-5 input and kernel, got {x_shape:?} and {w_shape:?}")));
        }
        if x_shape[1] != w_shape[1] || w_shape[2..] != spec.kernel {
            return Err(Error::ShapeMismatch(format!("input {x_shape:?} incompatible with kernel {w_shape:?} / {spec:?}")));
        }
        let input = [x_shape[2], x_shape[3], x_shape[4]];
        Ok(ConvShape { batch: x_shape[0], in_ch: x_shape[1], out_ch: w_shape[0], input, output: spec.output_dims(input)?, spec })
    }

    pub fn in_len(&self) -> usize {
        self.in_ch * self.input.iter().product::<usize>()
    }

    pub fn out_positions(&self) -> usize {
        self.output.iter().product()
    }

    pub fn rows(&self) -> usize {
        self.in_ch * self.spec.taps()
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_ch, self.output[0], self.output[1], self.output[2]]
    }

    /// Multiply-accumulates of one forward pass.
    pub fn macs(&self) -> u64 {
        (self.batch * self.out_ch * self.out_positions() * self.rows()) as u64
    }

    /// For every (row, position) the flat input offset, or `usize::MAX` for padding.
    fn gather_table(&self) -> Vec<usize> {
        let [k0, k1, k2] = self.spec.kernel;
        let [s0, s1, s2] = self.spec.stride;
        let [p0, p1, p2] = self.spec.padding;
        let [n0, n1, n2] = self.input;
        let [o0, o1, o2] = self.output;
        let p = self.out_positions();
        let mut table = Vec::with_capacity(self.rows() * p);
        for c in 0..self.in_ch {
            for a in 0..k0 {
                for b in 0..k1 {
                    for d in 0..k2 {
                        for i in 0..o0 {
                            let u = (i * s0 + a) as isize - p0 as isize;
                            for j in 0..o1 {
                                let v = (j * s1 + b) as isize - p1 as isize;
                                for l in 0..o2 {
                                    let w = (l * s2 + d) as isize - p2 as isize;
                                    let inside = u >= 0 && v >= 0 && w >= 0 && (u as usize) < n0 && (v as usize) < n1 && (w as usize) < n2;
                                    table.push(if inside {
                                        ((c * n0 + u as usize) * n1 + v as usize) * n2 + w as usize
                                    } else {
                                        usize::MAX
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        table
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn im2col(x: &[f64], table: &[usize]) -> Vec<f64> {
    table.iter().map(|&i| if i == usize::MAX { 0.0 } else { x[i] }).collect()
}

pub fn conv3d_forward(x: &[f64], w: &[f64], shape: &ConvShape) -> Vec<f64> {
    let table = shape.gather_table();
    let (p, rows, co) = (shape.out_positions(), shape.rows(), shape.out_ch);
    let mut y = vec![0.0; shape.batch * co * p];
    y.par_chunks_mut(co * p).zip(x.par_chunks(shape.in_len())).for_each(|(yb, xb)| {
        let cols = im2col(xb, &table);
        for (o, out_row) in yb.chunks_mut(p).enumerate() {
            for (r, &wv) in w[o * rows..(o + 1) * rows].iter().enumerate() {
                if wv != 0.0 {
                    axpy(out_row, wv, &cols[r * p..(r + 1) * p]);
                }
            }
        }
    });
    y
}

/// Returns `(dx, dw)` for upstream gradient `dy`.
pub fn conv3d_backward(x: &[f64], w: &[f64], dy: &[f64], shape: &ConvShape) -> (Vec<f64>, Vec<f64>) {
    let table = shape.gather_table();
    let (p, rows, co) = (shape.out_positions(), shape.rows(), shape.out_ch);
    let in_len = shape.in_len();
    let per_item: Vec<(Vec<f64>, Vec<f64>)> = x
        .par_chunks(in_len)
        .zip(dy.par_chunks(co * p))
        .map(|(xb, dyb)| {
            let cols = im2col(xb, &table);
            let mut dw = vec![0.0; co * rows];
            let mut dcols = vec![0.0; rows * p];
            for o in 0..co {
                let g = &dyb[o * p..(o + 1) * p];
                for r in 0..rows {
                    dw[o * rows + r] = dot(g, &cols[r * p..(r + 1) * p]);
                    let wv = w[o * rows + r];
                    if wv != 0.0 {
                        axpy(&mut dcols[r * p..(r + 1) * p], wv, g);
                    }
                }
            }
            let mut dx = vec![0.0; in_len];
            for (&i, &g) in table.iter().zip(&dcols) {
                if i != usize::MAX {
                    dx[i] += g;
                }
            }
            (dx, dw)
        })
        .collect();
    let mut dx = Vec::with_capacity(x.len());
    let mut dw = vec![0.0; w.len()];
    for (dxb, dwb) in per_item {
        dx.extend_from_slice(&dxb);
        for (a, b) in dw.iter_mut().zip(&dwb) {
            *a += b;
        }
    }
    (dx, dw)
}

/// `y[B, out] = x[B, in] W[in, out] + b[out]`.
pub fn dense_forward(x: &[f64], w: &[f64], b: &[f64], batch: usize, n_in: usize, n_out: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(batch * n_out);
    for row in x.chunks(n_in).take(batch) {
        let mut out = b.to_vec();
        for (i, &xi) in row.iter().enumerate() {
            if xi != 0.0 {
                axpy(&mut out, xi, &w[i * n_out..(i + 1) * n_out]);
            }
        }
        y.extend_from_slice(&out);
    }
    y
}

/// Returns `(dx, dw, db)`.
pub fn dense_backward(x: &[f64], w: &[f64], dy: &[f64], batch: usize, n_in: usize, n_out: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; batch * n_in];
    let mut dw = vec![0.0; n_in * n_out];
    let mut db = vec![0.0; n_out];
    for bi in 0..batch {
        let g = &dy[bi * n_out..(bi + 1) * n_out];
        let xr = &x[bi * n_in..(bi + 1) * n_in];
        axpy(&mut db, 1.0, g);
        for i in 0..n_in {
            let wr = &w[i * n_out..(i + 1) * n_out];
            dx[bi * n_in + i] = dot(wr, g);
            if xr[i] != 0.0 {
                axpy(&mut dw[i * n_out..(i + 1) * n_out], xr[i], g);
            }
        }
    }
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Straight nested-loop cross-correlation.
    fn conv_reference(x: &[f64], w: &[f64], s: &ConvShape) -> Vec<f64> {
        let [n0, n1, n2] = s.input;
        let [o0, o1, o2] = s.output;
        let [k0, k1, k2] = s.spec.kernel;
        let mut y = vec![0.0; s.batch * s.out_ch * o0 * o1 * o2];
        for b in 0..s.batch {
            for o in 0..s.out_ch {
                for i in 0..o0 {
                    for j in 0..o1 {
                        for l in 0..o2 {
                            let mut acc = 0.0;
                            for c in 0..s.in_ch {
                                for a in 0..k0 {
                                    for bb in 0..k1 {
                                        for d in 0..k2 {
                                            let u = (i * s.spec.stride[0] + a) as isize - s.spec.padding[0] as isize;
                                            let v = (j * s.spec.stride[1] + bb) as isize - s.spec.padding[1] as isize;
                                            let t = (l * s.spec.stride[2] + d) as isize - s.spec.padding[2] as isize;
                                            if u < 0 || v < 0 || t < 0 || u as usize >= n0 || v as usize >= n1 || t as usize >= n2 {
                                                continue;
                                            }
                                            let xi = (((b * s.in_ch + c) * n0 + u as usize) * n1 + v as usize) * n2 + t as usize;
                                            let wi = (((o * s.in_ch + c) * k0 + a) * k1 + bb) * k2 + d;
                                            acc += x[xi] * w[wi];
                                        }
                                    }
                                }
                            }
                            y[(((b * s.out_ch + o) * o0 + i) * o1 + j) * o2 + l] = acc;
                        }
                    }
                }
            }
        }
        y
    }

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn matches_loop_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for spec in [ConvSpec::cubic(3, 2, 1), ConvSpec::cubic(3, 1, 1), ConvSpec::cubic(1, 2, 0), ConvSpec { kernel: [1, 2, 3], stride: [1, 2, 1], padding: [0, 1, 2] }] {
            let shape = ConvShape::new(&[2, 2, 5, 5, 5], &[3, 2, spec.kernel[0], spec.kernel[1], spec.kernel[2]], spec).unwrap();
            let x = random(2 * 2 * 125, &mut rng);
            let w = random(3 * 2 * spec.taps(), &mut rng);
            let fast = conv3d_forward(&x, &w, &shape);
            let slow = conv_reference(&x, &w, &shape);
            assert_eq!(fast.len(), slow.len());
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "{spec:?}");
            }
        }
    }

    #[test]
    fn stride_two_output_dims() {
        let s = ConvShape::new(&[2, 2, 5, 5, 5], &[3, 2, 3, 3, 3], ConvSpec::cubic(3, 2, 1)).unwrap();
        assert_eq!(s.output, [3, 3, 3]);
        assert!(matches!(ConvSpec::cubic(3, 1, 0).output_dims([2, 5, 5]), Err(Error::EmptyOutput(_))));
    }

    #[test]
    fn unit_pointwise_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(2 * 27, &mut rng);
        let s = ConvShape::new(&[1, 2, 3, 3, 3], &[2, 2, 1, 1, 1], ConvSpec::cubic(1, 1, 0)).unwrap();
        assert_eq!(conv3d_forward(&x, &[1.0, 0.0, 0.0, 1.0], &s), x);
    }

    #[test]
    fn impulse_response_stamps_flipped_kernel() {
        // cross-correlation: a unit impulse at the centre reproduces the kernel reversed
        let mut x = vec![0.0; 125];
        x[2 * 25 + 2 * 5 + 2] = 1.0;
        let w: Vec<f64> = (0..27).map(|i| i as f64).collect();
        let s = ConvShape::new(&[1, 1, 5, 5, 5], &[1, 1, 3, 3, 3], ConvSpec::cubic(3, 1, 1)).unwrap();
        let y = conv3d_forward(&x, &w, &s);
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    let at = (1 + a) * 25 + (1 + b) * 5 + (1 + c);
                    assert_eq!(y[at], w[(2 - a) * 9 + (2 - b) * 3 + (2 - c)]);
                }
            }
        }
        assert_eq!(y.iter().filter(|&&v| v != 0.0).count(), 26);
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <dy, conv(x)> = <dx, x> (linear in x) and <dw, w> (linear in w)
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = ConvShape::new(&[2, 2, 5, 4, 3], &[3, 2, 3, 3, 3], ConvSpec::cubic(3, 2, 1)).unwrap();
        let x = random(2 * s.in_len(), &mut rng);
        let w = random(3 * 2 * 27, &mut rng);
        let y = conv3d_forward(&x, &w, &s);
        let dy = random(y.len(), &mut rng);
        let (dx, dw) = conv3d_backward(&x, &w, &dy, &s);
        let lhs = dot(&dy, &y);
        assert!((lhs - dot(&dx, &x)).abs() < 1e-10);
        assert!((lhs - dot(&dw, &w)).abs() < 1e-10);
    }

    #[test]
    fn dense_arithmetic() {
        assert_eq!(dense_forward(&[1.0, 2.0], &[3.0, 4.0], &[5.0], 1, 2, 1), vec![16.0]);
        let (dx, dw, db) = dense_backward(&[1.0, 2.0], &[3.0, 4.0], &[1.0], 1, 2, 1);
        assert_eq!((dx, dw, db), (vec![3.0, 4.0], vec![1.0, 2.0], vec![1.0]));
    }
}
