//! Per-subject model inputs: derivative stacks resampled to a fixed grid,
//! connectome feature vectors and cropped ROI series.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::connectome::{self, AtlasVolume};
use crate::derivatives::{derivative_stack, DerivativeKind, DerivativeSpec};
use crate::error::{Error, Result};
use crate::preprocess::{resample_to, Bandpass, BandpassSpec};
use crate::volume::{MaskVolume, Volume3D, Volume4D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepConfig {
    /// Apply the ideal band-pass (0.01 Hz to Nyquist) to every voxel first.
    pub bandpass: bool,
    pub derivatives: DerivativeSpec,
    /// Spatial grid the derivative stacks are resampled to (x, y, z).
    pub grid: [usize; 3],
    /// ROI series length for the 1D-convolution baseline; defaults to the
    /// shortest subject.
    pub crop_len: Option<usize>,
    pub fisher_z: bool,
    pub volumes: bool,
    pub connectome: bool,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig {
            bandpass: true,
            derivatives: DerivativeSpec::default(),
            grid: [32, 32, 32],
            crop_len: None,
            fisher_z: false,
            volumes: true,
            connectome: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub subject_ids: Vec<String>,
    pub labels: Vec<u8>,
    /// Channel order of every stack in `volumes`.
    pub channels: Vec<DerivativeKind>,
    pub volumes: Option<Vec<Volume3D>>,
    pub features: Option<Vec<Vec<f64>>>,
    /// `[M, T]` row-major (one row per ROI), `T = crop_len`.
    pub series: Option<Vec<Vec<f64>>>,
    pub n_rois: usize,
    pub crop_len: usize,
}

/// Filter every voxel series with one planned band-pass.
pub fn bandpass_volume(v: &Volume4D) -> Result<Volume4D> {
    let filter = Bandpass::new(&BandpassSpec::with_tr(v.tr_seconds()), v.n_timepoints())?;
    v.map_series(0..v.n_voxels(), |s| filter.apply(s))
}

struct Prepared {
    volume: Option<Volume3D>,
    features: Option<Vec<f64>>,
    series: Option<connectome::RoiTimeseries>,
}

impl Dataset {
    /// Build inputs for `n` subjects; `load(i)` yields subject `i`'s 4D volume
    /// and is called once per subject, possibly from several threads.
    pub fn prepare<F>(ids: Vec<String>, labels: Vec<u8>, atlas: &AtlasVolume, mask: &MaskVolume, cfg: &PrepConfig, load: F) -> Result<Dataset>
    where
        F: Fn(usize) -> Result<Volume4D> + Sync,
    {
        if ids.len() != labels.len() {
            return Err(Error::LengthMismatch { expected: ids.len(), got: labels.len() });
        }
        if cfg.grid.iter().any(|&g| g == 0) {
            return Err(Error::InvalidTarget(cfg.grid));
        }
        cfg.derivatives.validate()?;
        let prepared = (0..ids.len())
            .into_par_iter()
            .map(|i| {
                let raw = load(i)?;
                let v = if cfg.bandpass { bandpass_volume(&raw)? } else { raw };
                let volume = if cfg.volumes {
                    Some(resample_to(&derivative_stack(&v, mask, &cfg.derivatives)?, cfg.grid)?)
                } else {
                    None
                };
                let (features, series) = if cfg.connectome {
                    let ts = connectome::roi_mean_timeseries(&v, atlas)?;
                    let f = connectome::upper_triangle(&connectome::fc_matrix(&ts));
                    (Some(if cfg.fisher_z { connectome::fisher_z(&f) } else { f }), Some(ts))
                } else {
                    (None, None)
                };
                Ok(Prepared { volume, features, series })
            })
            .collect::<Result<Vec<_>>>()?;

        let min_len = prepared.iter().filter_map(|p| p.series.as_ref().map(|s| s.n_time())).min().unwrap_or(0);
        let crop_len = cfg.crop_len.unwrap_or(min_len);
        let series = if cfg.connectome {
            Some(
                prepared
                    .iter()
                    .map(|p| {
                        let ts = p.series.as_ref().expect("connectome enabled").crop(crop_len)?;
                        Ok((0..ts.n_rois()).flat_map(|m| ts.column(m)).collect())
                    })
                    .collect::<Result<Vec<Vec<f64>>>>()?,
            )
        } else {
            None
        };
        let n_rois = if cfg.connectome { atlas.n_rois() } else { 0 };
        let mut volumes = Vec::new();
        let mut features = Vec::new();
        for p in prepared {
            volumes.extend(p.volume);
            features.extend(p.features);
        }
        Ok(Dataset {
            subject_ids: ids,
            labels,
            channels: cfg.derivatives.channels.clone(),
            volumes: cfg.volumes.then_some(volumes),
            features: cfg.connectome.then_some(features),
            series,
            n_rois,
            crop_len,
        })
    }

    /// Generate a synthetic cohort in memory and prepare it.
    pub fn synthetic(synth: &crate::synth::SynthConfig, cfg: &PrepConfig) -> Result<Dataset> {
        synth.validate()?;
        let layout = crate::synth::BlockLayout::new(synth.extents, synth.n_blocks)?;
        let n = synth.n_subjects();
        let ids = (0..n).map(crate::synth::subject_id).collect();
        let labels = (0..n).map(|i| synth.label_of(i)).collect();
        Dataset::prepare(ids, labels, &layout.atlas(), &layout.mask(), cfg, |i| crate::synth::generate_subject(synth, &layout, i))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.features.as_ref().and_then(|f| f.first()).map(Vec::len)
    }

    /// Grid of the derivative stacks as (x, y, z).
    pub fn grid(&self) -> Option<[usize; 3]> {
        self.volumes.as_ref().and_then(|v| v.first()).map(Volume3D::extents)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let check = |len: usize, what: &str| -> Result<()> {
            if len != n {
                return Err(Error::ShapeMismatch(format!("{len} {what} for {n} subjects")));
            }
            Ok(())
        };
        check(self.subject_ids.len(), "subject ids")?;
        if let Some(v) = &self.volumes {
            check(v.len(), "volumes")?;
        }
        if let Some(f) = &self.features {
            check(f.len(), "feature vectors")?;
        }
        if let Some(s) = &self.series {
            check(s.len(), "ROI series")?;
        }
        if self.labels.iter().any(|&l| l > 1) {
            return Err(Error::InvalidConfig("labels must be 0 or 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_subject, BlockLayout, SynthConfig};

    #[test]
    fn prepares_all_inputs() {
        let cfg = SynthConfig { n_subjects_per_class: 2, extents: [10, 10, 10], n_timepoints: 30, t_range: Some((24, 30)), n_blocks: 4, ..SynthConfig::default() };
        let layout = BlockLayout::new(cfg.extents, cfg.n_blocks).unwrap();
        let prep = PrepConfig { grid: [6, 6, 6], ..PrepConfig::default() };
        let ids: Vec<String> = (0..4).map(crate::synth::subject_id).collect();
        let labels = (0..4).map(|i| cfg.label_of(i)).collect();
        let data = Dataset::prepare(ids, labels, &layout.atlas(), &layout.mask(), &prep, |i| generate_subject(&cfg, &layout, i)).unwrap();
        data.validate().unwrap();
        assert_eq!(data.grid(), Some([6, 6, 6]));
        assert_eq!(data.volumes.as_ref().unwrap()[0].channels(), 4);
        assert_eq!(data.feature_dim(), Some(6));
        assert_eq!(data.n_rois, 4);
        assert!((24..=30).contains(&data.crop_len));
        assert_eq!(data.series.as_ref().unwrap()[0].len(), 4 * data.crop_len);
        assert_eq!(data.channels[3], DerivativeKind::Vmhc);
    }
}
