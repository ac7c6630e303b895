//! Parcellation into ROI mean time series, Pearson functional connectivity,
//! upper-triangle feature vectors and the quartile feature selection used by
//! the DiagNet-style models.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;
use crate::volume::{Volume3D, Volume4D};

/// Integer label volume; 0 is background, ROIs are labelled `1..=M`.
#[derive(Debug, Clone, PartialEq)]
pub struct AtlasVolume {
    extents: [usize; 3],
    labels: Vec<usize>,
    n_rois: usize,
}

impl AtlasVolume {
    pub fn new(extents: [usize; 3], labels: Vec<usize>) -> Result<Self> {
        let expected: usize = extents.iter().product();
        if labels.len() != expected {
            return Err(Error::LengthMismatch { expected, got: labels.len() });
        }
        let n_rois = labels.iter().copied().max().unwrap_or(0);
        let mut seen = vec![false; n_rois + 1];
        for &l in &labels {
            seen[l] = true;
        }
        if let Some(missing) = (1..=n_rois).find(|&l| !seen[l]) {
            return Err(Error::EmptyRoi(missing));
        }
        if n_rois == 0 {
            return Err(Error::InvalidVolume("atlas has no labelled voxels".into()));
        }
        Ok(AtlasVolume { extents, labels, n_rois })
    }

    pub fn from_volume(v: &Volume3D) -> Result<Self> {
        if v.channels() != 1 {
            return Err(Error::InvalidVolume(format!("atlas has {} channels", v.channels())));
        }
        let labels = v
            .data()
            .iter()
            .map(|&x| {
                if x < 0.0 || x.fract() != 0.0 {
                    Err(Error::InvalidVolume(format!("atlas label {x} is not a non-negative integer")))
                } else {
                    Ok(x as usize)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(v.extents(), labels)
    }

    pub fn to_volume(&self) -> Volume3D {
        Volume3D::new(self.extents, 1, self.labels.iter().map(|&l| l as f64).collect())
            .expect("atlas extents are valid")
    }

    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_rois(&self) -> usize {
        self.n_rois
    }
}

/// T x M matrix, one row per time point and one column per ROI.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiTimeseries {
    n_time: usize,
    n_rois: usize,
    data: Vec<f64>,
}

impl RoiTimeseries {
    pub fn new(n_time: usize, n_rois: usize, data: Vec<f64>) -> Result<Self> {
        if n_rois < 2 || n_time < 3 {
            return Err(Error::ShapeMismatch(format!("ROI time series needs T >= 3 and M >= 2, got {n_time} x {n_rois}")));
        }
        if data.len() != n_time * n_rois {
            return Err(Error::LengthMismatch { expected: n_time * n_rois, got: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidVolume("non-finite ROI time series".into()));
        }
        Ok(RoiTimeseries { n_time, n_rois, data })
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    pub fn n_rois(&self) -> usize {
        self.n_rois
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, t: usize, roi: usize) -> f64 {
        self.data[t * self.n_rois + roi]
    }

    pub fn column(&self, roi: usize) -> Vec<f64> {
        (0..self.n_time).map(|t| self.get(t, roi)).collect()
    }

    /// First `len` time points.
    pub fn crop(&self, len: usize) -> Result<RoiTimeseries> {
        if len > self.n_time {
            return Err(Error::SequenceTooShort { min: len, len: self.n_time });
        }
        RoiTimeseries::new(len, self.n_rois, self.data[..len * self.n_rois].to_vec())
    }
}

/// Mean series of every atlas label.
pub fn roi_mean_timeseries(v: &Volume4D, atlas: &AtlasVolume) -> Result<RoiTimeseries> {
    if v.spatial_extents() != atlas.extents() {
        return Err(Error::ExtentMismatch(format!("volume {:?} vs atlas {:?}", v.spatial_extents(), atlas.extents())));
    }
    let m = atlas.n_rois();
    let t_len = v.n_timepoints();
    let nv = v.n_voxels();
    let mut counts = vec![0usize; m];
    for &l in atlas.labels() {
        if l > 0 {
            counts[l - 1] += 1;
        }
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyRoi(empty + 1));
    }
    let mut data = vec![0.0; t_len * m];
    for (t, row) in data.chunks_mut(m).enumerate() {
        let frame = &v.data()[t * nv..(t + 1) * nv];
        for (&l, &x) in atlas.labels().iter().zip(frame) {
            if l > 0 {
                row[l - 1] += x;
            }
        }
        for (acc, &c) in row.iter_mut().zip(&counts) {
            *acc /= c as f64;
        }
    }
    RoiTimeseries::new(t_len, m, data)
}

/// Symmetric M x M Pearson correlation matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct FcMatrix {
    n: usize,
    data: Vec<f64>,
}

impl FcMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

pub fn fc_matrix(ts: &RoiTimeseries) -> FcMatrix {
    let m = ts.n_rois();
    let cols: Vec<Vec<f64>> = (0..m).map(|j| stats::unit_centered(&ts.column(j))).collect();
    let mut data = vec![0.0; m * m];
    for i in 0..m {
        data[i * m + i] = 1.0;
        for j in i + 1..m {
            let r = stats::dot(&cols[i], &cols[j]).clamp(-1.0, 1.0);
            data[i * m + j] = r;
            data[j * m + i] = r;
        }
    }
    FcMatrix { n: m, data }
}

/// Length of the strict upper triangle of an `m x m` matrix.
pub fn feature_len(m: usize) -> usize {
    m * m.saturating_sub(1) / 2
}

/// Strict upper triangle, row-major: (0,1), (0,2), ..., (1,2), ...
pub fn upper_triangle(fc: &FcMatrix) -> Vec<f64> {
    let m = fc.n();
    let mut out = Vec::with_capacity(feature_len(m));
    for i in 0..m {
        for j in i + 1..m {
            out.push(fc.get(i, j));
        }
    }
    out
}

/// Inverse of [`upper_triangle`]: mirror and set a unit diagonal.
pub fn from_upper_triangle(features: &[f64], m: usize) -> Result<FcMatrix> {
    if features.len() != feature_len(m) {
        return Err(Error::LengthMismatch { expected: feature_len(m), got: features.len() });
    }
    let mut data = vec![0.0; m * m];
    let mut k = 0;
    for i in 0..m {
        data[i * m + i] = 1.0;
        for j in i + 1..m {
            data[i * m + j] = features[k];
            data[j * m + i] = features[k];
            k += 1;
        }
    }
    Ok(FcMatrix { n: m, data })
}

/// Fisher z-transform of correlation features (off by default).
pub fn fisher_z(features: &[f64]) -> Vec<f64> {
    const LIM: f64 = 1.0 - 1e-7;
    features.iter().map(|r| r.clamp(-LIM, LIM).atanh()).collect()
}

/// Subject feature vector straight from a 4D volume.
pub fn connectome_features(v: &Volume4D, atlas: &AtlasVolume) -> Result<Vec<f64>> {
    Ok(upper_triangle(&fc_matrix(&roi_mean_timeseries(v, atlas)?)))
}

/// Indices kept by quartile selection, with the provenance of the fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuartileMask {
    pub indices: Vec<usize>,
    /// Length of the feature vectors the mask applies to.
    pub d: usize,
    pub fold: Option<usize>,
    pub statistic: String,
    #[serde(skip)]
    pub group_mean: Vec<f64>,
}

/// Keep the `floor(D/4)` features with the largest training-set mean and the
/// `floor(D/4)` with the smallest; ties go to the lower index. Fit on
/// training subjects only.
pub fn diagnet_mask<S: AsRef<[f64]> + Sync>(train: &[S]) -> Result<QuartileMask> {
    let first = train.first().ok_or_else(|| Error::InvalidConfig("empty training set for quartile mask".into()))?;
    let d = first.as_ref().len();
    let mut mean = vec![0.0; d];
    for s in train {
        let s = s.as_ref();
        if s.len() != d {
            return Err(Error::LengthMismatch { expected: d, got: s.len() });
        }
        for (acc, x) in mean.iter_mut().zip(s) {
            *acc += x;
        }
    }
    let n = train.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);

    let q = d / 4;
    let mut desc: Vec<usize> = (0..d).collect();
    desc.sort_by(|&a, &b| mean[b].total_cmp(&mean[a]).then(a.cmp(&b)));
    let top: Vec<usize> = desc[..q].to_vec();
    let mut taken = vec![false; d];
    for &i in &top {
        taken[i] = true;
    }
    let mut asc: Vec<usize> = (0..d).collect();
    asc.par_sort_by(|&a, &b| mean[a].total_cmp(&mean[b]).then(a.cmp(&b)));
    let bottom = asc.into_iter().filter(|&i| !taken[i]).take(q);
    let mut indices: Vec<usize> = top.into_iter().chain(bottom).collect();
    indices.sort_unstable();
    Ok(QuartileMask { indices, d, fold: None, statistic: "group-mean".into(), group_mean: mean })
}

/// Gather masked features in mask order.
pub fn apply_mask(features: &[f64], mask: &QuartileMask) -> Result<Vec<f64>> {
    mask.indices
        .iter()
        .map(|&i| {
            features
                .get(i)
                .copied()
                .ok_or_else(|| Error::IndexOutOfBounds(format!("mask index {i} >= feature length {}", features.len())))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Volume4D;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(ext: [usize; 4], seed: u64) -> Volume4D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = ext.iter().product();
        Volume4D::new(ext, [1.0; 3], 2.0, (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    fn brute_pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn single_roi_is_global_mean() {
        let v = random_volume([3, 3, 2, 6], 1);
        let mut labels = vec![1; 18];
        labels[4] = 2;
        let atlas = AtlasVolume::new([3, 3, 2], labels).unwrap();
        let ts = roi_mean_timeseries(&v, &atlas).unwrap();
        for t in 0..6 {
            let frame = &v.data()[t * 18..(t + 1) * 18];
            let want = (frame.iter().sum::<f64>() - frame[4]) / 17.0;
            assert!((ts.get(t, 0) - want).abs() < 1e-12);
            assert_eq!(ts.get(t, 1), frame[4]);
        }
    }

    #[test]
    fn one_voxel_rois_are_voxel_series() {
        let v = random_volume([2, 2, 1, 5], 2);
        let atlas = AtlasVolume::new([2, 2, 1], vec![1, 2, 3, 4]).unwrap();
        let ts = roi_mean_timeseries(&v, &atlas).unwrap();
        for roi in 0..4 {
            assert_eq!(ts.column(roi), v.series_at(roi));
        }
    }

    #[test]
    fn roi_means_match_index_scan() {
        let v = random_volume([4, 3, 3, 7], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut labels: Vec<usize> = (0..36).map(|_| rng.random_range(0..4)).collect();
        labels[0] = 1;
        labels[1] = 2;
        labels[2] = 3;
        let atlas = AtlasVolume::new([4, 3, 3], labels.clone()).unwrap();
        let ts = roi_mean_timeseries(&v, &atlas).unwrap();
        for roi in 1..=3 {
            for t in 0..7 {
                let mut sum = 0.0;
                let mut count = 0.0;
                for (vox, &l) in labels.iter().enumerate() {
                    if l == roi {
                        sum += v.data()[vox + 36 * t];
                        count += 1.0;
                    }
                }
                assert!((ts.get(t, roi - 1) - sum / count).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn missing_label_is_empty_roi() {
        assert!(matches!(AtlasVolume::new([3, 1, 1], vec![1, 3, 0]), Err(Error::EmptyRoi(2))));
        let v = random_volume([3, 1, 1, 4], 5);
        let atlas = AtlasVolume::new([1, 3, 1], vec![1, 2, 0]).unwrap();
        assert!(matches!(roi_mean_timeseries(&v, &atlas), Err(Error::ExtentMismatch(_))));
    }

    #[test]
    fn fc_duplicates_and_negations() {
        let a = [1.0, 3.0, 2.0, 5.0, 4.0];
        let mut data = Vec::new();
        for &x in &a {
            data.extend_from_slice(&[x, x, -x]);
        }
        let fc = fc_matrix(&RoiTimeseries::new(5, 3, data).unwrap());
        assert!((fc.get(0, 1) - 1.0).abs() < 1e-12);
        assert!((fc.get(0, 2) + 1.0).abs() < 1e-12);
        assert_eq!(fc.get(2, 2), 1.0);
    }

    #[test]
    fn fc_matches_pairwise_pearson() {
        let data = vec![0.3, 1.2, -0.5, 1.1, 0.4, 0.2, -0.7, 2.0, 0.9, 0.0, -1.3, 0.6, 2.2, 0.1, -0.4];
        let ts = RoiTimeseries::new(5, 3, data).unwrap();
        let fc = fc_matrix(&ts);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { brute_pearson(&ts.column(i), &ts.column(j)) };
                assert!((fc.get(i, j) - want).abs() < 1e-12);
                assert_eq!(fc.get(i, j), fc.get(j, i));
            }
        }
    }

    #[test]
    fn constant_column_correlates_zero() {
        let data = vec![1.0, 2.0, 2.0, 2.0, 3.0, 2.0, 4.0, 2.0];
        let fc = fc_matrix(&RoiTimeseries::new(4, 2, data).unwrap());
        assert_eq!(fc.get(0, 1), 0.0);
        assert_eq!(fc.get(1, 1), 1.0);
    }

    #[test]
    fn triangle_lengths_and_order() {
        assert_eq!(feature_len(116), 6670);
        assert_eq!(feature_len(200), 19900);
        let fc = from_upper_triangle(&[0.1, 0.2, 0.3], 3).unwrap();
        assert_eq!(upper_triangle(&fc), vec![0.1, 0.2, 0.3]);
        assert_eq!(fc.get(2, 1), 0.3);
    }

    #[test]
    fn quartile_mask_examples() {
        let m = diagnet_mask(&[vec![0.9, 0.8, 0.1, 0.0, 0.5, 0.5, 0.4, 0.6]]).unwrap();
        assert_eq!(m.indices, vec![0, 1, 2, 3]);
        assert_eq!(m.statistic, "group-mean");
        let flat = diagnet_mask(&[vec![0.2; 10]]).unwrap();
        assert_eq!(flat.indices, vec![0, 1, 2, 3]);
        assert!(matches!(diagnet_mask(&[vec![0.0; 4], vec![0.0; 5]]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn quartile_mask_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let subjects: Vec<Vec<f64>> = (0..20).map(|_| (0..100).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mask = diagnet_mask(&subjects).unwrap();
        let mean: Vec<f64> = (0..100).map(|i| subjects.iter().map(|s| s[i]).sum::<f64>() / 20.0).collect();
        let mut order: Vec<(f64, usize)> = mean.iter().cloned().zip(0..).collect();
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut want: Vec<usize> = order[..25].iter().chain(&order[75..]).map(|p| p.1).collect();
        want.sort();
        assert_eq!(mask.indices, want);
        assert_eq!(mask.indices.len(), 50);
    }

    #[test]
    fn apply_mask_gathers() {
        let f: Vec<f64> = (0..12).map(|i| i as f64 * 1.5).collect();
        let mut mask = diagnet_mask(&[vec![0.0; 12]]).unwrap();
        assert_eq!(apply_mask(&f, &mask).unwrap(), f[..6].to_vec());
        mask.indices = vec![1, 5, 11];
        assert_eq!(apply_mask(&f, &mask).unwrap(), vec![1.5, 7.5, 16.5]);
        mask.indices = vec![12];
        assert!(matches!(apply_mask(&f, &mask), Err(Error::IndexOutOfBounds(_))));
    }

    proptest::proptest! {
        #[test]
        fn fc_invariant_under_positive_affine(data in proptest::collection::vec(-5.0f64..5.0, 24), scales in proptest::collection::vec((0.1f64..10.0, -50.0f64..50.0), 3)) {
            let ts = RoiTimeseries::new(8, 3, data.clone()).unwrap();
            let scaled: Vec<f64> = data.iter().enumerate().map(|(k, x)| { let (a, b) = scales[k % 3]; a * x + b }).collect();
            let a = fc_matrix(&ts);
            let b = fc_matrix(&RoiTimeseries::new(8, 3, scaled).unwrap());
            for (x, y) in a.data().iter().zip(b.data()) {
                proptest::prop_assert!((x - y).abs() < 1e-10);
            }
        }

        #[test]
        fn triangle_reconstructs(data in proptest::collection::vec(-5.0f64..5.0, 30)) {
            let fc = fc_matrix(&RoiTimeseries::new(6, 5, data).unwrap());
            let back = from_upper_triangle(&upper_triangle(&fc), 5).unwrap();
            proptest::prop_assert_eq!(back, fc);
        }
    }
}
