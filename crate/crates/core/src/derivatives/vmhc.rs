use rayon::prelude::*;

use super::MaskedSeries;
use crate::error::Result;
use crate::volume::{coords, MaskVolume, Volume3D, Volume4D};

/// Correlation of each voxel with its mirror `(X-1-x, y, z)` across the
/// stored x axis; 0 where the mirror is outside the mask.
pub fn vmhc(v: &Volume4D, mask: &MaskVolume) -> Result<Volume3D> {
    let series = MaskedSeries::new(v, mask)?;
    Ok(vmhc_inner(&series))
}

pub(crate) fn vmhc_inner(series: &MaskedSeries) -> Volume3D {
    let ext = series.extents;
    let values: Vec<f64> = (0..series.voxels.len())
        .into_par_iter()
        .map(|row| {
            let [x, y, z] = coords(series.voxels[row], ext);
            let mirror = (ext[0] - 1 - x) + ext[0] * (y + ext[1] * z);
            match series.row_of[mirror] {
                usize::MAX => 0.0,
                m => series.correlation(row, m),
            }
        })
        .collect();
    series.to_map(&values)
}
