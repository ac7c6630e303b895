use std::collections::VecDeque;

use rayon::prelude::*;

use super::{DerivativeSpec, MaskedSeries};
use crate::error::Result;
use crate::volume::{coords, MaskVolume, Volume3D, Volume4D};

/// Local functional connectivity density: size (minus the seed) of the
/// face-connected in-mask cluster around each seed in which every member
/// correlates with the seed above the threshold.
pub fn lfcd(v: &Volume4D, mask: &MaskVolume, spec: &DerivativeSpec) -> Result<Volume3D> {
    spec.validate()?;
    let series = MaskedSeries::new(v, mask)?;
    Ok(lfcd_inner(&series, spec.correlation_threshold))
}

pub(crate) fn face_neighbors(vox: usize, ext: [usize; 3]) -> impl Iterator<Item = usize> {
    let [x, y, z] = coords(vox, ext);
    let sx = 1;
    let sy = ext[0];
    let sz = ext[0] * ext[1];
    [
        (x > 0).then(|| vox - sx),
        (x + 1 < ext[0]).then(|| vox + sx),
        (y > 0).then(|| vox - sy),
        (y + 1 < ext[1]).then(|| vox + sy),
        (z > 0).then(|| vox - sz),
        (z + 1 < ext[2]).then(|| vox + sz),
    ]
    .into_iter()
    .flatten()
}

pub(crate) fn lfcd_inner(series: &MaskedSeries, threshold: f64) -> Volume3D {
    let n = series.voxels.len();
    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .map_init(
            || (vec![false; n], VecDeque::new(), Vec::new()),
            |(seen, queue, touched), seed| {
                let seed_row = series.row(seed);
                seen[seed] = true;
                touched.push(seed);
                queue.push_back(series.voxels[seed]);
                let mut size = 0usize;
                while let Some(vox) = queue.pop_front() {
                    size += 1;
                    for nb in face_neighbors(vox, series.extents) {
                        let row = series.row_of[nb];
                        if row == usize::MAX || seen[row] {
                            continue;
                        }
                        let r = crate::stats::dot(seed_row, series.row(row)).clamp(-1.0, 1.0);
                        if r > threshold {
                            seen[row] = true;
                            touched.push(row);
                            queue.push_back(nb);
                        }
                    }
                }
                for r in touched.drain(..) {
                    seen[r] = false;
                }
                (size - 1) as f64
            },
        )
        .collect();
    series.to_map(&values)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;
    use crate::stats::pearson;
    use crate::volume::MaskVolume;

    /// Reference flood fill: repeat full passes until the admitted set stops growing.
    fn brute_lfcd(v: &Volume4D, mask: &MaskVolume, threshold: f64) -> Vec<f64> {
        let ext = v.spatial_extents();
        let mut out = vec![0.0; v.n_voxels()];
        for seed in mask.voxels() {
            let s = v.series_at(seed);
            let mut member = vec![false; v.n_voxels()];
            member[seed] = true;
            loop {
                let mut grew = false;
                for cand in mask.voxels() {
                    if member[cand] {
                        continue;
                    }
                    let adjacent = face_neighbors(cand, ext).any(|nb| member[nb]);
                    if adjacent && pearson(&s, &v.series_at(cand)) > threshold {
                        member[cand] = true;
                        grew = true;
                    }
                }
                if !grew {
                    break;
                }
            }
            out[seed] = (member.iter().filter(|&&m| m).count() - 1) as f64;
        }
        out
    }

    #[test]
    fn identical_series_fill_mask() {
        let v = volume_from([3, 4, 2], 10, |_, _, _| (0..10).map(|t| (t as f64).sqrt()).collect());
        let map = lfcd(&v, &full_mask(&v), &DerivativeSpec::default()).unwrap();
        assert!(map.data().iter().all(|&c| c == 23.0));
    }

    #[test]
    fn anticorrelated_neighbors_isolate_seed() {
        // checkerboard of u and -u: every face neighbour is anti-correlated
        let u: Vec<f64> = (0..10).map(|t| (t as f64 * 0.7).sin()).collect();
        let v = volume_from([3, 3, 3], 10, |x, y, z| {
            let sign = if (x + y + z) % 2 == 0 { 1.0 } else { -1.0 };
            u.iter().map(|a| sign * a).collect()
        });
        let map = lfcd(&v, &full_mask(&v), &DerivativeSpec::default()).unwrap();
        assert!(map.data().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn correlated_tube() {
        // a straight tube along x at (y, z) = (2, 2) carries u; the rest is noise
        let noise = random_volume([5, 5, 5, 40], 6);
        let u: Vec<f64> = (0..40).map(|t| (t as f64 * 0.45).sin() * 3.0).collect();
        let v = volume_from([5, 5, 5], 40, |x, y, z| {
            if y == 2 && z == 2 { u.clone() } else { noise.series_at(x + 5 * (y + 5 * z)).iter().map(|a| a * 0.1).collect() }
        });
        let mask = full_mask(&v);
        let spec = DerivativeSpec { correlation_threshold: 0.9, ..Default::default() };
        let map = lfcd(&v, &mask, &spec).unwrap();
        assert_eq!(map.get(0, 2, 2, 0), 4.0);
        assert_eq!(map.get(3, 2, 2, 0), 4.0);
        assert_eq!(map.data(), &brute_lfcd(&v, &mask, 0.9)[..]);
    }

    #[test]
    fn matches_reference_on_random_masked_volume() {
        let v = random_volume([5, 5, 5, 6], 13);
        let m: Vec<bool> = (0..125).map(|i| i % 7 != 3).collect();
        let mask = MaskVolume::new([5, 5, 5], m).unwrap();
        for threshold in [-0.2, 0.1, 0.25] {
            let spec = DerivativeSpec { correlation_threshold: threshold, ..Default::default() };
            assert_eq!(lfcd(&v, &mask, &spec).unwrap().data(), &brute_lfcd(&v, &mask, threshold)[..]);
        }
    }
}
