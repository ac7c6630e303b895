use rayon::prelude::*;

use super::kendall::w_from_rank_sums;
use super::{check_extents, DerivativeSpec};
use crate::error::Result;
use crate::stats::{midranks, tie_correction};
use crate::volume::{coords, MaskVolume, Volume3D, Volume4D};

/// Offsets of the 7-, 19- or 27-voxel neighbourhood, the centre included.
pub(crate) fn neighborhood(size: usize) -> Vec<[i64; 3]> {
    let mut out = Vec::with_capacity(size);
    for dz in -1i64..=1 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let manhattan = dx.abs() + dy.abs() + dz.abs();
                let keep = match size {
                    7 => manhattan <= 1,
                    19 => manhattan <= 2,
                    _ => true,
                };
                if keep {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

/// Kendall's W of each in-mask voxel with its in-mask neighbours. Voxels
/// with no in-mask neighbour are 0.
pub fn reho(v: &Volume4D, mask: &MaskVolume, spec: &DerivativeSpec) -> Result<Volume3D> {
    spec.validate()?;
    reho_inner(v, mask, spec.reho_neighborhood)
}

pub(crate) fn reho_inner(v: &Volume4D, mask: &MaskVolume, size: usize) -> Result<Volume3D> {
    check_extents(v, mask)?;
    let ext = v.spatial_extents();
    let n = v.n_timepoints();
    let voxels = mask.voxels();
    let mut row_of = vec![usize::MAX; v.n_voxels()];
    for (r, &vox) in voxels.iter().enumerate() {
        row_of[vox] = r;
    }
    let ranked: Vec<(Vec<f64>, f64)> = voxels
        .par_iter()
        .map(|&vox| {
            let s = v.series_at(vox);
            (midranks(&s), tie_correction(&s))
        })
        .collect();
    let offsets = neighborhood(size);

    let values: Vec<f64> = voxels
        .par_iter()
        .map(|&vox| {
            let [x, y, z] = coords(vox, ext);
            let mut sums = vec![0.0; n];
            let mut ties = 0.0;
            let mut k = 0;
            for d in &offsets {
                let (nx, ny, nz) = (x as i64 + d[0], y as i64 + d[1], z as i64 + d[2]);
                if nx < 0 || ny < 0 || nz < 0 || nx >= ext[0] as i64 || ny >= ext[1] as i64 || nz >= ext[2] as i64 {
                    continue;
                }
                let idx = nx as usize + ext[0] * (ny as usize + ext[1] * nz as usize);
                let row = row_of[idx];
                if row == usize::MAX {
                    continue;
                }
                let (ranks, t) = &ranked[row];
                for (acc, r) in sums.iter_mut().zip(ranks) {
                    *acc += r;
                }
                ties += t;
                k += 1;
            }
            if k < 2 {
                0.0
            } else {
                w_from_rank_sums(&sums, k, ties)
            }
        })
        .collect();

    let mut data = vec![0.0; v.n_voxels()];
    for (&vox, w) in voxels.iter().zip(values) {
        data[vox] = w;
    }
    Volume3D::new(ext, 1, data)
}
