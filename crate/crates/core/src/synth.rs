//! Labelled synthetic 4D cohorts with a planted class difference in the
//! coupling between pairs of cuboid pseudo-ROIs ("blocks").
//!
//! Per subject, every block `b` owns a latent AR(1) series `z_b` with unit
//! stationary variance. For class 1 the second block of each planted pair
//! `(a, b)` is replaced by `(z_b + c * z_a) / sqrt(1 + c^2)` with
//! `c = effect_size`, which keeps its variance at 1 while raising the pair's
//! correlation to `c / sqrt(1 + c^2)`. Class 0 leaves the latents independent,
//! so `effect_size = 0` makes both classes identically distributed.
//!
//! A voxel inside block `b` reads
//! `BASELINE + z_b(t) + GLOBAL_WEIGHT * g(t) + noise_std * e(t)` where `g` is a
//! subject-wide AR(1) series and `e` is independent AR(1) voxel noise.
//! Background voxels carry noise only.
//!
//! Seeding: subject `i` draws from `seed::rng(cfg.seed, "synth-subject", i)`
//! and, when lengths vary, its length from `seed::rng(cfg.seed, "synth-length", i)`.
//! Subjects can therefore be generated in any order or in parallel.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::connectome::AtlasVolume;
use crate::error::{Error, Result};
use crate::seed;
use crate::volume::{MaskVolume, Volume3D, Volume4D};

pub const BASELINE: f64 = 100.0;
pub const GLOBAL_WEIGHT: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_subjects_per_class: usize,
    pub extents: [usize; 3],
    pub n_timepoints: usize,
    /// Inclusive range; when set, each subject draws its own length.
    pub t_range: Option<(usize, usize)>,
    pub tr_seconds: f64,
    pub n_blocks: usize,
    pub ar_coefficient: f64,
    pub effect_size: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects_per_class: 20,
            extents: [24, 24, 24],
            n_timepoints: 120,
            t_range: None,
            tr_seconds: 2.0,
            n_blocks: 12,
            ar_coefficient: 0.4,
            effect_size: 1.0,
            noise_std: 1.0,
            seed: 0,
        }
    }
}

/// Smallest effect size for which the planted edge is reliably recovered
/// (two-sample t > 3 at 40 subjects per class and the default lengths).
pub const DETECTABLE_EFFECT: f64 = 0.2;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.extents.iter().any(|&e| e < 8) {
            return bad(format!("extents {:?} must be >= 8 per axis", self.extents));
        }
        if self.n_blocks < 2 {
            return bad(format!("n_blocks = {} must be >= 2", self.n_blocks));
        }
        if !(self.effect_size >= 0.0 && self.effect_size.is_finite()) {
            return bad(format!("effect_size = {} must be >= 0", self.effect_size));
        }
        if !(0.0..1.0).contains(&self.ar_coefficient) {
            return bad(format!("ar_coefficient = {} must be in [0, 1)", self.ar_coefficient));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std = {}", self.noise_std));
        }
        if !(self.tr_seconds > 0.0) {
            return bad(format!("tr_seconds = {}", self.tr_seconds));
        }
        if self.n_subjects_per_class < 1 {
            return bad("n_subjects_per_class must be >= 1".into());
        }
        let (lo, hi) = self.t_range.unwrap_or((self.n_timepoints, self.n_timepoints));
        if lo < 8 || lo > hi {
            return bad(format!("time range [{lo}, {hi}] must satisfy 8 <= lo <= hi"));
        }
        BlockLayout::new(self.extents, self.n_blocks).map(|_| ())
    }

    pub fn n_subjects(&self) -> usize {
        2 * self.n_subjects_per_class
    }

    /// Subjects `0..n` are class 0, `n..2n` class 1.
    pub fn label_of(&self, subject: usize) -> u8 {
        u8::from(subject >= self.n_subjects_per_class)
    }

    pub fn planted_pairs(&self) -> Vec<(usize, usize)> {
        planted_pairs(self.n_blocks)
    }
}

/// Block pairs `(0,1), (2,3), ...`, `max(1, n_blocks / 4)` of them.
pub fn planted_pairs(n_blocks: usize) -> Vec<(usize, usize)> {
    (0..(n_blocks / 4).max(1)).map(|p| (2 * p, 2 * p + 1)).collect()
}

/// Axis-aligned grid of blocks tiling the central region of the volume.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLayout {
    extents: [usize; 3],
    grid: [usize; 3],
    /// Block id + 1 per voxel, 0 for background.
    labels: Vec<usize>,
}

/// Split `n` into (gx, gy, gz), gx = 2 whenever `n` is even so that block
/// pairs (2k, 2k+1) are mirror images across the midline.
fn grid_for(n: usize) -> [usize; 3] {
    let (gx, rest) = if n % 2 == 0 { (2, n / 2) } else { (1, n) };
    let mut gy = (rest as f64).sqrt().floor() as usize;
    while gy > 1 && rest % gy != 0 {
        gy -= 1;
    }
    [gx, rest / gy.max(1), gy.max(1)]
}

impl BlockLayout {
    pub fn new(extents: [usize; 3], n_blocks: usize) -> Result<Self> {
        let grid = grid_for(n_blocks);
        let mut bounds: [Vec<usize>; 3] = Default::default();
        for a in 0..3 {
            let lo = extents[a] / 6;
            let width = extents[a] - 2 * lo;
            if width < grid[a] {
                return Err(Error::InvalidConfig(format!(
                    "axis {a}: central width {width} cannot hold {} blocks",
                    grid[a]
                )));
            }
            bounds[a] = (0..=grid[a]).map(|k| lo + k * width / grid[a]).collect();
        }
        let cell = |a: usize, i: usize| -> Option<usize> {
            let b = &bounds[a];
            if i < b[0] || i >= b[grid[a]] {
                return None;
            }
            Some(b.windows(2).position(|w| i >= w[0] && i < w[1]).expect("inside bounds"))
        };
        let mut labels = Vec::with_capacity(extents.iter().product());
        for z in 0..extents[2] {
            for y in 0..extents[1] {
                for x in 0..extents[0] {
                    let id = match (cell(0, x), cell(1, y), cell(2, z)) {
                        (Some(i), Some(j), Some(k)) => 1 + i + grid[0] * (j + grid[1] * k),
                        _ => 0,
                    };
                    labels.push(id);
                }
            }
        }
        Ok(BlockLayout { extents, grid, labels })
    }

    pub fn grid(&self) -> [usize; 3] {
        self.grid
    }

    pub fn n_blocks(&self) -> usize {
        self.grid.iter().product()
    }

    /// Block of a flat voxel index, if any.
    pub fn block_of(&self, voxel: usize) -> Option<usize> {
        self.labels[voxel].checked_sub(1)
    }

    pub fn atlas(&self) -> AtlasVolume {
        AtlasVolume::new(self.extents, self.labels.clone()).expect("every block is non-empty")
    }

    pub fn mask(&self) -> MaskVolume {
        MaskVolume::new(self.extents, self.labels.iter().map(|&l| l > 0).collect()).expect("blocks are non-empty")
    }
}

#[derive(Debug, Clone)]
pub struct SynthCohort {
    pub config: SynthConfig,
    pub subject_ids: Vec<String>,
    pub volumes: Vec<Volume4D>,
    pub labels: Vec<u8>,
    pub atlas: Volume3D,
    pub mask: MaskVolume,
}

pub fn subject_id(i: usize) -> String {
    format!("sub-{i:04}")
}

fn ar1<R: Rng + ?Sized>(rng: &mut R, len: usize, phi: f64) -> Vec<f64> {
    let innov = (1.0 - phi * phi).sqrt();
    let mut out = Vec::with_capacity(len);
    let mut prev: f64 = rng.sample(StandardNormal);
    out.push(prev);
    for _ in 1..len {
        let e: f64 = rng.sample(StandardNormal);
        prev = phi * prev + innov * e;
        out.push(prev);
    }
    out
}

/// Time points of subject `i`.
pub fn subject_length(cfg: &SynthConfig, i: usize) -> usize {
    match cfg.t_range {
        Some((lo, hi)) => seed::rng(cfg.seed, "synth-length", i as u64).random_range(lo..=hi),
        None => cfg.n_timepoints,
    }
}

/// One subject's volume; independent of every other subject.
pub fn generate_subject(cfg: &SynthConfig, layout: &BlockLayout, i: usize) -> Result<Volume4D> {
    let t_len = subject_length(cfg, i);
    let mut rng = seed::rng(cfg.seed, "synth-subject", i as u64);
    let phi = cfg.ar_coefficient;
    let mut latents: Vec<Vec<f64>> = (0..layout.n_blocks()).map(|_| ar1(&mut rng, t_len, phi)).collect();
    let global = ar1(&mut rng, t_len, phi);
    if cfg.label_of(i) == 1 {
        let c = cfg.effect_size;
        let norm = (1.0 + c * c).sqrt();
        for (a, b) in planted_pairs(layout.n_blocks()) {
            let source = latents[a].clone();
            for (zb, za) in latents[b].iter_mut().zip(&source) {
                *zb = (*zb + c * za) / norm;
            }
        }
    }
    let nv = layout.labels.len();
    let mut data = vec![0.0; nv * t_len];
    for v in 0..nv {
        let noise = ar1(&mut rng, t_len, phi);
        let block = layout.block_of(v);
        for t in 0..t_len {
            let signal = match block {
                Some(b) => latents[b][t] + GLOBAL_WEIGHT * global[t],
                None => 0.0,
            };
            data[t * nv + v] = BASELINE + signal + cfg.noise_std * noise[t];
        }
    }
    let [x, y, z] = cfg.extents;
    Volume4D::new([x, y, z, t_len], [3.0; 3], cfg.tr_seconds, data)
}

pub fn generate_cohort(cfg: &SynthConfig) -> Result<SynthCohort> {
    cfg.validate()?;
    let layout = BlockLayout::new(cfg.extents, cfg.n_blocks)?;
    let n = cfg.n_subjects();
    let volumes = (0..n).into_par_iter().map(|i| generate_subject(cfg, &layout, i)).collect::<Result<Vec<_>>>()?;
    Ok(SynthCohort {
        config: cfg.clone(),
        subject_ids: (0..n).map(subject_id).collect(),
        labels: (0..n).map(|i| cfg.label_of(i)).collect(),
        volumes,
        atlas: layout.atlas().to_volume(),
        mask: layout.mask(),
    })
}
