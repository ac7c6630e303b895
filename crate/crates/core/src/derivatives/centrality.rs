use rayon::prelude::*;

use super::{DerivativeSpec, MaskedSeries};
use crate::error::{Error, Result};
use crate::volume::{MaskVolume, Volume3D, Volume4D};

/// Rows processed per sweep block; bounds the working set of the all-pairs
/// correlation sweep.
const BLOCK: usize = 256;

/// Whole-mask degree centrality: the number of other in-mask voxels whose
/// correlation exceeds the threshold, or the sum of those correlations when
/// `dc_weighted` is set.
pub fn degree_centrality(v: &Volume4D, mask: &MaskVolume, spec: &DerivativeSpec) -> Result<Volume3D> {
    spec.validate()?;
    let series = MaskedSeries::new(v, mask)?;
    if series.voxels.len() < 2 {
        return Err(Error::InvalidVolume("degree centrality needs at least 2 in-mask voxels".into()));
    }
    Ok(dc_inner(&series, spec))
}

pub(crate) fn dc_inner(series: &MaskedSeries, spec: &DerivativeSpec) -> Volume3D {
    let n = series.voxels.len();
    let threshold = spec.correlation_threshold;
    let weighted = spec.dc_weighted;
    let mut values = vec![0.0; n];
    values.par_chunks_mut(BLOCK).enumerate().for_each(|(block, out)| {
        let start = block * BLOCK;
        for (offset, acc) in out.iter_mut().enumerate() {
            let i = start + offset;
            let row = series.row(i);
            let mut total = 0.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let r = crate::stats::dot(row, series.row(j)).clamp(-1.0, 1.0);
                if r > threshold {
                    total += if weighted { r } else { 1.0 };
                }
            }
            *acc = total;
        }
    });
    series.to_map(&values)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;
    use crate::volume::MaskVolume;

    /// Independent all-pairs sweep using the textbook Pearson formula.
    fn brute_dc(v: &Volume4D, mask: &MaskVolume, threshold: f64, weighted: bool) -> Vec<f64> {
        let voxels = mask.voxels();
        let t = v.n_timepoints() as f64;
        let pearson = |a: &[f64], b: &[f64]| {
            let (ma, mb) = (a.iter().sum::<f64>() / t, b.iter().sum::<f64>() / t);
            let mut sab = 0.0;
            let mut saa = 0.0;
            let mut sbb = 0.0;
            for (x, y) in a.iter().zip(b) {
                sab += (x - ma) * (y - mb);
                saa += (x - ma) * (x - ma);
                sbb += (y - mb) * (y - mb);
            }
            if saa == 0.0 || sbb == 0.0 {
                0.0
            } else {
                sab / (saa * sbb).sqrt()
            }
        };
        let mut out = vec![0.0; v.n_voxels()];
        for &a in &voxels {
            for &b in &voxels {
                if a != b {
                    let r = pearson(&v.series_at(a), &v.series_at(b));
                    if r > threshold {
                        out[a] += if weighted { r } else { 1.0 };
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identical_pair() {
        let mut m = vec![false; 8];
        m[0] = true;
        m[5] = true;
        let mask = MaskVolume::new([2, 2, 2], m).unwrap();
        let v = volume_from([2, 2, 2], 6, |x, y, z| (0..6).map(|t| ((t + x + y + z) % 3) as f64).collect());
        let v = {
            // voxels 0 and 5 carry the same series
            let s = v.series_at(0);
            volume_from([2, 2, 2], 6, |x, y, z| if (x, y, z) == (1, 0, 1) { s.clone() } else { v.series_at(x + 2 * (y + 2 * z)) })
        };
        let dc = degree_centrality(&v, &mask, &DerivativeSpec::default()).unwrap();
        assert_eq!(dc.data()[0], 1.0);
        assert_eq!(dc.data()[5], 1.0);
    }

    #[test]
    fn orthogonal_voxel_has_zero_degree() {
        // cos/sin at one full cycle over 8 samples are exactly uncorrelated
        let v = volume_from([2, 1, 1], 8, |x, _, _| {
            (0..8).map(|t| {
                let a = 2.0 * std::f64::consts::PI * t as f64 / 8.0;
                if x == 0 { a.cos() } else { a.sin() }
            }).collect()
        });
        let dc = degree_centrality(&v, &full_mask(&v), &DerivativeSpec::default()).unwrap();
        assert_eq!(dc.data(), &[0.0, 0.0]);
    }

    #[test]
    fn matches_brute_force_sweep() {
        let v = random_volume([4, 4, 4, 10], 31);
        let mask = full_mask(&v);
        for weighted in [false, true] {
            let spec = DerivativeSpec { correlation_threshold: 0.25, dc_weighted: weighted, ..Default::default() };
            let got = degree_centrality(&v, &mask, &spec).unwrap();
            let want = brute_dc(&v, &mask, 0.25, weighted);
            for (g, w) in got.data().iter().zip(&want) {
                if weighted {
                    assert!((g - w).abs() < 1e-10);
                } else {
                    assert_eq!(g, w);
                }
            }
        }
    }
}
