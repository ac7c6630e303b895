//! Temporal filtering, per-series normalization, trilinear resampling and the
//! random spatial warps used for training-time augmentation.

use std::sync::Arc;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume3D;

pub const MIN_BANDPASS_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandpassSpec {
    pub low_hz: f64,
    pub high_hz: f64,
    pub tr_seconds: f64,
}

impl BandpassSpec {
    /// The literal 0.01 to 10 Hz band; the upper edge is clamped to Nyquist.
    pub fn with_tr(tr_seconds: f64) -> Self {
        BandpassSpec { low_hz: 0.01, high_hz: 10.0, tr_seconds }
    }

    pub fn nyquist(&self) -> f64 {
        1.0 / (2.0 * self.tr_seconds)
    }

    pub fn effective_high(&self) -> f64 {
        self.high_hz.min(self.nyquist())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tr_seconds > 0.0) {
            return Err(Error::InvalidConfig(format!("tr_seconds = {}", self.tr_seconds)));
        }
        if !(self.low_hz >= 0.0 && self.low_hz < self.high_hz) {
            return Err(Error::InvalidConfig(format!(
                "band [{}, {}] Hz is empty",
                self.low_hz, self.high_hz
            )));
        }
        Ok(())
    }
}

/// Ideal (brick-wall) FFT filter planned for one series length.
pub struct Bandpass {
    keep: Vec<bool>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Bandpass {
    pub fn new(spec: &BandpassSpec, len: usize) -> Result<Self> {
        spec.validate()?;
        if len < MIN_BANDPASS_LEN {
            return Err(Error::SequenceTooShort { min: MIN_BANDPASS_LEN, len });
        }
        let high = spec.effective_high();
        let resolution = 1.0 / (len as f64 * spec.tr_seconds);
        let keep = (0..len)
            .map(|k| {
                let f = k.min(len - k) as f64 * resolution;
                f >= spec.low_hz && f <= high
            })
            .collect();
        let mut planner = FftPlanner::new();
        Ok(Bandpass { keep, forward: planner.plan_fft_forward(len), inverse: planner.plan_fft_inverse(len) })
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn apply(&self, ts: &[f64]) -> Result<Vec<f64>> {
        let n = self.keep.len();
        if ts.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: ts.len() });
        }
        let mut buf: Vec<Complex<f64>> = ts.iter().map(|&x| Complex::new(x, 0.0)).collect();
        self.forward.process(&mut buf);
        for (b, &keep) in buf.iter_mut().zip(&self.keep) {
            if !keep {
                *b = Complex::new(0.0, 0.0);
            }
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / n as f64;
        Ok(buf.iter().map(|c| c.re * scale).collect())
    }
}

pub fn bandpass(ts: &[f64], spec: &BandpassSpec) -> Result<Vec<f64>> {
    Bandpass::new(spec, ts.len())?.apply(ts)
}

/// Zero mean, unit population standard deviation; near-constant input maps
/// to zeros.
pub fn znormalize(ts: &[f64]) -> Vec<f64> {
    let m = crate::stats::mean(ts);
    let sd = crate::stats::std_pop(ts);
    if sd < 1e-12 {
        return vec![0.0; ts.len()];
    }
    ts.iter().map(|x| (x - m) / sd).collect()
}

/// Trilinear sample of one channel at fractional voxel coordinates; points
/// outside the grid read as 0.
fn sample(channel: &[f64], ext: [usize; 3], p: [f64; 3]) -> f64 {
    const TOL: f64 = 1e-9;
    let mut base = [0usize; 3];
    let mut frac = [0f64; 3];
    for a in 0..3 {
        let hi = (ext[a] - 1) as f64;
        if p[a] < -TOL || p[a] > hi + TOL {
            return 0.0;
        }
        let q = p[a].clamp(0.0, hi);
        if ext[a] == 1 {
            base[a] = 0;
            frac[a] = 0.0;
        } else {
            let i = (q.floor() as usize).min(ext[a] - 2);
            base[a] = i;
            frac[a] = q - i as f64;
        }
    }
    let at = |x: usize, y: usize, z: usize| channel[x + ext[0] * (y + ext[1] * z)];
    let step = |a: usize| usize::from(ext[a] > 1);
    let (x0, y0, z0) = (base[0], base[1], base[2]);
    let (x1, y1, z1) = (x0 + step(0), y0 + step(1), z0 + step(2));
    let [fx, fy, fz] = frac;
    let c00 = at(x0, y0, z0) * (1.0 - fx) + at(x1, y0, z0) * fx;
    let c10 = at(x0, y1, z0) * (1.0 - fx) + at(x1, y1, z0) * fx;
    let c01 = at(x0, y0, z1) * (1.0 - fx) + at(x1, y0, z1) * fx;
    let c11 = at(x0, y1, z1) * (1.0 - fx) + at(x1, y1, z1) * fx;
    let c0 = c00 * (1.0 - fy) + c10 * fy;
    let c1 = c01 * (1.0 - fy) + c11 * fy;
    c0 * (1.0 - fz) + c1 * fz
}

/// Corner-aligned trilinear resampling: output index 0 maps to source index
/// 0 and the last output index to the last source index.
pub fn resample_to(vol: &Volume3D, target: [usize; 3]) -> Result<Volume3D> {
    if target.iter().any(|&t| t < 1) {
        return Err(Error::InvalidTarget(target));
    }
    let src = vol.extents();
    if src.iter().any(|&s| s < 2) {
        return Err(Error::InvalidVolume(format!("cannot resample from extents {src:?}")));
    }
    if src == target {
        return Ok(vol.clone());
    }
    let coord = |i: usize, a: usize| -> f64 {
        if target[a] == 1 {
            (src[a] - 1) as f64 / 2.0
        } else {
            i as f64 * (src[a] - 1) as f64 / (target[a] - 1) as f64
        }
    };
    let n_out: usize = target.iter().product();
    let mut data = Vec::with_capacity(n_out * vol.channels());
    for c in 0..vol.channels() {
        let ch = vol.channel(c);
        for z in 0..target[2] {
            for y in 0..target[1] {
                for x in 0..target[0] {
                    data.push(sample(ch, src, [coord(x, 0), coord(y, 1), coord(z, 2)]));
                }
            }
        }
    }
    Volume3D::new(target, vol.channels(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSpec {
    pub flip_axes: Vec<Axis>,
    pub max_rotation_deg: f64,
    pub max_translation_vox: u32,
    pub scale_range: (f64, f64),
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            flip_axes: vec![Axis::X],
            max_rotation_deg: 10.0,
            max_translation_vox: 3,
            scale_range: (0.9, 1.1),
            seed: 0,
        }
    }
}

impl AugmentSpec {
    pub fn identity() -> Self {
        AugmentSpec {
            flip_axes: Vec::new(),
            max_rotation_deg: 0.0,
            max_translation_vox: 0,
            scale_range: (1.0, 1.0),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidConfig(format!("scale_range ({lo}, {hi})")));
        }
        if !(self.max_rotation_deg >= 0.0 && self.max_rotation_deg.is_finite()) {
            return Err(Error::InvalidConfig(format!("max_rotation_deg {}", self.max_rotation_deg)));
        }
        Ok(())
    }
}

pub type Matrix3 = [[f64; 3]; 3];

pub const IDENTITY3: Matrix3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Rotation by `angle_rad` about the (normalized) `axis`, via Rodrigues.
pub fn rotation_matrix(axis: [f64; 3], angle_rad: f64) -> Matrix3 {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    if n == 0.0 || angle_rad == 0.0 {
        return IDENTITY3;
    }
    let [x, y, z] = [axis[0] / n, axis[1] / n, axis[2] / n];
    let (s, c) = angle_rad.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

/// One concrete spatial warp. Forward map about the grid centre `c`:
/// `p' = c + R (s F (p - c)) + t` with `F` the per-axis flips.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialTransform {
    pub flip: [bool; 3],
    pub rotation: Matrix3,
    pub translation: [f64; 3],
    pub scale: f64,
}

impl SpatialTransform {
    pub fn identity() -> Self {
        SpatialTransform { flip: [false; 3], rotation: IDENTITY3, translation: [0.0; 3], scale: 1.0 }
    }

    pub fn draw<R: Rng + ?Sized>(spec: &AugmentSpec, rng: &mut R) -> Self {
        let mut flip = [false; 3];
        for axis in &spec.flip_axes {
            flip[axis.index()] = rng.random_bool(0.5);
        }
        let rotation = if spec.max_rotation_deg > 0.0 {
            let mut axis = [0.0; 3];
            let mut norm = 0.0;
            while norm < 1e-6 {
                for a in axis.iter_mut() {
                    *a = rng.random_range(-1.0..=1.0);
                }
                norm = axis.iter().map(|a| a * a).sum::<f64>();
                if norm > 1.0 {
                    norm = 0.0;
                }
            }
            let max = spec.max_rotation_deg.to_radians();
            rotation_matrix(axis, rng.random_range(-max..=max))
        } else {
            IDENTITY3
        };
        let m = spec.max_translation_vox as i64;
        let mut translation = [0.0; 3];
        for t in translation.iter_mut() {
            *t = rng.random_range(-m..=m) as f64;
        }
        let (lo, hi) = spec.scale_range;
        let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        SpatialTransform { flip, rotation, translation, scale }
    }

    /// Source coordinate read by output voxel `q`.
    fn source_of(&self, q: [f64; 3], centre: [f64; 3]) -> [f64; 3] {
        let d = [q[0] - centre[0] - self.translation[0], q[1] - centre[1] - self.translation[1], q[2] - centre[2] - self.translation[2]];
        let r = &self.rotation;
        let mut p = [0.0; 3];
        for (a, pa) in p.iter_mut().enumerate() {
            // R^T d
            let v = (r[0][a] * d[0] + r[1][a] * d[1] + r[2][a] * d[2]) / self.scale;
            *pa = centre[a] + if self.flip[a] { -v } else { v };
        }
        p
    }

    pub fn apply(&self, vol: &Volume3D) -> Volume3D {
        let ext = vol.extents();
        let centre = [(ext[0] - 1) as f64 / 2.0, (ext[1] - 1) as f64 / 2.0, (ext[2] - 1) as f64 / 2.0];
        let n: usize = ext.iter().product();
        let mut sources = Vec::with_capacity(n);
        for z in 0..ext[2] {
            for y in 0..ext[1] {
                for x in 0..ext[0] {
                    sources.push(self.source_of([x as f64, y as f64, z as f64], centre));
                }
            }
        }
        let mut data = Vec::with_capacity(n * vol.channels());
        for c in 0..vol.channels() {
            let ch = vol.channel(c);
            data.extend(sources.iter().map(|&p| sample(ch, ext, p)));
        }
        Volume3D::new(ext, vol.channels(), data).expect("warp preserves shape")
    }
}

/// Draw a random warp from `spec` and apply it to every channel.
pub fn augment<R: Rng + ?Sized>(vol: &Volume3D, spec: &AugmentSpec, rng: &mut R) -> Volume3D {
    SpatialTransform::draw(spec, rng).apply(vol)
}
