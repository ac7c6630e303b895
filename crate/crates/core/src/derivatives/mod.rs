//! Voxelwise temporal derivatives: regional homogeneity, degree centrality,
//! local functional connectivity density and voxel-mirrored homotopic
//! connectivity. Each map is computed over in-mask voxels only and is zero
//! elsewhere.

mod centrality;
mod kendall;
mod lfcd;
mod reho;
mod vmhc;

pub use centrality::degree_centrality;
pub use kendall::kendalls_w;
pub use lfcd::lfcd;
pub use reho::reho;
pub use vmhc::vmhc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;
use crate::volume::{MaskVolume, Volume3D, Volume4D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DerivativeKind {
    #[serde(rename = "reho")]
    ReHo,
    #[serde(rename = "dc")]
    Dc,
    #[serde(rename = "lfcd")]
    Lfcd,
    #[serde(rename = "vmhc")]
    Vmhc,
}

impl DerivativeKind {
    pub const ALL: [DerivativeKind; 4] =
        [DerivativeKind::ReHo, DerivativeKind::Dc, DerivativeKind::Lfcd, DerivativeKind::Vmhc];

    pub fn label(self) -> &'static str {
        match self {
            DerivativeKind::ReHo => "ReHo",
            DerivativeKind::Dc => "DC",
            DerivativeKind::Lfcd => "LFCD",
            DerivativeKind::Vmhc => "VMHC",
        }
    }

    /// Position in the canonical four-channel stack.
    pub fn channel(self) -> usize {
        match self {
            DerivativeKind::ReHo => 0,
            DerivativeKind::Dc => 1,
            DerivativeKind::Lfcd => 2,
            DerivativeKind::Vmhc => 3,
        }
    }
}

/// Dash-joined labels, e.g. `ReHo-DC-LFCD-VMHC`.
pub fn channel_set_label(kinds: &[DerivativeKind]) -> String {
    kinds.iter().map(|k| k.label()).collect::<Vec<_>>().join("-")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DerivativeSpec {
    /// 7 (faces), 19 (faces and edges) or 27 (full cube).
    pub reho_neighborhood: usize,
    /// Shared by DC and LFCD.
    pub correlation_threshold: f64,
    pub dc_weighted: bool,
    pub channels: Vec<DerivativeKind>,
}

impl Default for DerivativeSpec {
    fn default() -> Self {
        DerivativeSpec {
            reho_neighborhood: 27,
            correlation_threshold: 0.25,
            dc_weighted: false,
            channels: DerivativeKind::ALL.to_vec(),
        }
    }
}

impl DerivativeSpec {
    pub fn validate(&self) -> Result<()> {
        if ![7, 19, 27].contains(&self.reho_neighborhood) {
            return Err(Error::InvalidConfig(format!(
                "reho_neighborhood must be 7, 19 or 27, got {}",
                self.reho_neighborhood
            )));
        }
        if !(self.correlation_threshold > -1.0 && self.correlation_threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "correlation_threshold {} outside (-1, 1)",
                self.correlation_threshold
            )));
        }
        if self.channels.is_empty() {
            return Err(Error::InvalidConfig("no derivative channels selected".into()));
        }
        Ok(())
    }
}

fn check_extents(v: &Volume4D, mask: &MaskVolume) -> Result<()> {
    if v.spatial_extents() != mask.extents() {
        return Err(Error::ExtentMismatch(format!(
            "volume {:?} vs mask {:?}",
            v.spatial_extents(),
            mask.extents()
        )));
    }
    Ok(())
}

/// In-mask voxel series, centred and scaled to unit norm so that a dot
/// product is a Pearson correlation. Row `i` belongs to `voxels[i]`.
pub(crate) struct MaskedSeries {
    pub extents: [usize; 3],
    pub voxels: Vec<usize>,
    /// flat spatial index -> row, or `usize::MAX` outside the mask
    pub row_of: Vec<usize>,
    pub len: usize,
    pub rows: Vec<f64>,
}

impl MaskedSeries {
    pub fn new(v: &Volume4D, mask: &MaskVolume) -> Result<Self> {
        check_extents(v, mask)?;
        let voxels = mask.voxels();
        let mut row_of = vec![usize::MAX; v.n_voxels()];
        for (r, &vox) in voxels.iter().enumerate() {
            row_of[vox] = r;
        }
        let len = v.n_timepoints();
        let rows: Vec<f64> = voxels
            .par_iter()
            .flat_map_iter(|&vox| stats::unit_centered(&v.series_at(vox)))
            .collect();
        Ok(MaskedSeries { extents: v.spatial_extents(), voxels, row_of, len, rows })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.rows[r * self.len..(r + 1) * self.len]
    }

    pub fn correlation(&self, a: usize, b: usize) -> f64 {
        stats::dot(self.row(a), self.row(b)).clamp(-1.0, 1.0)
    }

    /// Scatter per-row values into a single-channel map.
    pub fn to_map(&self, values: &[f64]) -> Volume3D {
        let mut data = vec![0.0; self.row_of.len()];
        for (&vox, &v) in self.voxels.iter().zip(values) {
            data[vox] = v;
        }
        Volume3D::new(self.extents, 1, data).expect("map shape follows the mask")
    }
}

/// Z-score `values` over the mask; a flat map stays zero.
fn znormalize_in_mask(map: &Volume3D, mask: &MaskVolume) -> Vec<f64> {
    let inside: Vec<f64> = mask.voxels().iter().map(|&v| map.data()[v]).collect();
    let m = stats::mean(&inside);
    let sd = stats::std_pop(&inside);
    map.data()
        .iter()
        .zip(mask.data())
        .map(|(&x, &keep)| if keep && sd >= 1e-12 { (x - m) / sd } else { 0.0 })
        .collect()
}

/// Compute the selected derivatives, z-normalize each channel over the mask
/// and stack them in `spec.channels` order.
pub fn derivative_stack(v: &Volume4D, mask: &MaskVolume, spec: &DerivativeSpec) -> Result<Volume3D> {
    spec.validate()?;
    check_extents(v, mask)?;
    let series = MaskedSeries::new(v, mask)?;
    let mut data = Vec::with_capacity(v.n_voxels() * spec.channels.len());
    for kind in &spec.channels {
        let map = match kind {
            DerivativeKind::ReHo => reho::reho_inner(v, mask, spec.reho_neighborhood)?,
            DerivativeKind::Dc => centrality::dc_inner(&series, spec),
            DerivativeKind::Lfcd => lfcd::lfcd_inner(&series, spec.correlation_threshold),
            DerivativeKind::Vmhc => vmhc::vmhc_inner(&series),
        };
        data.extend(znormalize_in_mask(&map, mask));
    }
    Volume3D::new(v.spatial_extents(), spec.channels.len(), data)
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;

    #[test]
    fn stack_channels_are_standardized() {
        let v = random_volume([5, 5, 5, 30], 3);
        let mask = full_mask(&v);
        let stack = derivative_stack(&v, &mask, &DerivativeSpec::default()).unwrap();
        assert_eq!(stack.channels(), 4);
        for c in 0..4 {
            let ch = stack.channel(c);
            assert!(stats::mean(ch).abs() < 1e-10, "channel {c}");
            assert!((stats::std_pop(ch) - 1.0).abs() < 1e-10, "channel {c}");
        }
    }

    #[test]
    fn single_channel_ablation_matches_component() {
        let v = random_volume([4, 4, 4, 25], 8);
        let mask = full_mask(&v);
        let spec = DerivativeSpec { channels: vec![DerivativeKind::Vmhc], ..Default::default() };
        let stack = derivative_stack(&v, &mask, &spec).unwrap();
        assert_eq!(stack.channels(), 1);
        let raw = vmhc(&v, &mask).unwrap();
        let want = znormalize_in_mask(&raw, &mask);
        assert_eq!(stack.data(), &want[..]);
    }

    #[test]
    fn stack_composes_components() {
        let v = random_volume([5, 4, 4, 24], 21);
        let mut m: Vec<bool> = vec![true; 80];
        m[0] = false;
        m[17] = false;
        let mask = MaskVolume::new([5, 4, 4], m).unwrap();
        let spec = DerivativeSpec::default();
        let stack = derivative_stack(&v, &mask, &spec).unwrap();
        let parts = [
            reho(&v, &mask, &spec).unwrap(),
            degree_centrality(&v, &mask, &spec).unwrap(),
            lfcd(&v, &mask, &spec).unwrap(),
            vmhc(&v, &mask).unwrap(),
        ];
        for (c, p) in parts.iter().enumerate() {
            assert_eq!(stack.channel(c), &znormalize_in_mask(p, &mask)[..]);
        }
        assert_eq!(stack.get(0, 0, 0, 2), 0.0);
    }

    #[test]
    fn extent_mismatch() {
        let v = random_volume([4, 4, 4, 10], 1);
        let mask = MaskVolume::full([4, 4, 5]).unwrap();
        assert!(matches!(
            derivative_stack(&v, &mask, &DerivativeSpec::default()),
            Err(Error::ExtentMismatch(_))
        ));
    }

    #[test]
    fn invariant_under_affine_rescaling() {
        let v = random_volume([4, 4, 4, 30], 4);
        let mask = full_mask(&v);
        let spec = DerivativeSpec::default();
        let scaled: Vec<f64> = v.data().iter().map(|x| 3.7 * x - 12.0).collect();
        let w = Volume4D::new(v.extents(), v.spacing_mm(), v.tr_seconds(), scaled).unwrap();
        let a = derivative_stack(&v, &mask, &spec).unwrap();
        let b = derivative_stack(&w, &mask, &spec).unwrap();
        let diff = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-10, "max diff {diff}");
    }

    #[test]
    fn parallel_matches_sequential() {
        let v = random_volume([5, 5, 5, 20], 12);
        let mask = full_mask(&v);
        let spec = DerivativeSpec { dc_weighted: true, ..Default::default() };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| derivative_stack(&v, &mask, &spec).unwrap())
        };
        assert_eq!(run(1).data(), run(4).data());
    }
}
