//! Dense volumetric containers. All arrays are stored x-fastest, matching the
//! on-disk NIfTI order: `index = x + X*(y + Y*(z + Z*t))`.

use crate::error::{Error, Result};

fn check_finite(data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::InvalidVolume(format!("non-finite value at element {i}"))),
        None => Ok(()),
    }
}

fn check_extents(extents: &[usize]) -> Result<()> {
    if extents.iter().any(|&e| e == 0) {
        return Err(Error::InvalidVolume(format!("zero extent in {extents:?}")));
    }
    Ok(())
}

/// A BOLD time series volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume4D {
    extents: [usize; 4],
    spacing_mm: [f64; 3],
    tr_seconds: f64,
    data: Vec<f64>,
}

impl Volume4D {
    pub fn new(extents: [usize; 4], spacing_mm: [f64; 3], tr_seconds: f64, data: Vec<f64>) -> Result<Self> {
        check_extents(&extents)?;
        if extents[3] < 2 {
            return Err(Error::InvalidVolume(format!("need T >= 2, got {}", extents[3])));
        }
        let expected: usize = extents.iter().product();
        if data.len() != expected {
            return Err(Error::LengthMismatch { expected, got: data.len() });
        }
        check_finite(&data)?;
        Ok(Self { extents, spacing_mm, tr_seconds, data })
    }

    pub fn extents(&self) -> [usize; 4] {
        self.extents
    }

    pub fn spatial_extents(&self) -> [usize; 3] {
        [self.extents[0], self.extents[1], self.extents[2]]
    }

    pub fn n_timepoints(&self) -> usize {
        self.extents[3]
    }

    pub fn n_voxels(&self) -> usize {
        self.extents[0] * self.extents[1] * self.extents[2]
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn tr_seconds(&self) -> f64 {
        self.tr_seconds
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn voxel_index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.extents[0] * (y + self.extents[1] * z)
    }

    /// The T samples at voxel `(x, y, z)` in temporal order.
    pub fn voxel_timeseries(&self, x: usize, y: usize, z: usize) -> Result<Vec<f64>> {
        let [nx, ny, nz, _] = self.extents;
        if x >= nx || y >= ny || z >= nz {
            return Err(Error::IndexOutOfBounds(format!(
                "voxel ({x}, {y}, {z}) outside extents ({nx}, {ny}, {nz})"
            )));
        }
        Ok(self.series_at(self.voxel_index(x, y, z)))
    }

    /// Series at a flat spatial index (no bounds check beyond slice indexing).
    pub fn series_at(&self, voxel: usize) -> Vec<f64> {
        let stride = self.n_voxels();
        (0..self.extents[3]).map(|t| self.data[voxel + stride * t]).collect()
    }

    /// Replace every voxel series by `f(series)`; `f` must preserve length.
    pub fn map_series<F>(&self, voxels: impl Iterator<Item = usize>, mut f: F) -> Result<Volume4D>
    where
        F: FnMut(&[f64]) -> Result<Vec<f64>>,
    {
        let stride = self.n_voxels();
        let t_len = self.extents[3];
        let mut data = self.data.clone();
        for v in voxels {
            let series = self.series_at(v);
            let out = f(&series)?;
            if out.len() != t_len {
                return Err(Error::LengthMismatch { expected: t_len, got: out.len() });
            }
            for (t, value) in out.into_iter().enumerate() {
                data[v + stride * t] = value;
            }
        }
        Volume4D::new(self.extents, self.spacing_mm, self.tr_seconds, data)
    }
}

/// A multi-channel 3D map; channel is the slowest axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    extents: [usize; 3],
    channels: usize,
    data: Vec<f64>,
}

impl Volume3D {
    pub fn new(extents: [usize; 3], channels: usize, data: Vec<f64>) -> Result<Self> {
        check_extents(&extents)?;
        if channels == 0 {
            return Err(Error::InvalidVolume("zero channels".into()));
        }
        let expected = extents.iter().product::<usize>() * channels;
        if data.len() != expected {
            return Err(Error::LengthMismatch { expected, got: data.len() });
        }
        check_finite(&data)?;
        Ok(Self { extents, channels, data })
    }

    pub fn zeros(extents: [usize; 3], channels: usize) -> Result<Self> {
        let n = extents.iter().product::<usize>() * channels;
        Self::new(extents, channels, vec![0.0; n])
    }

    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn n_voxels(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn index(&self, x: usize, y: usize, z: usize, c: usize) -> usize {
        x + self.extents[0] * (y + self.extents[1] * (z + self.extents[2] * c))
    }

    pub fn get(&self, x: usize, y: usize, z: usize, c: usize) -> f64 {
        self.data[self.index(x, y, z, c)]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.n_voxels();
        &self.data[c * n..(c + 1) * n]
    }

    /// Stack single-channel maps of equal extents.
    pub fn stack(maps: &[Volume3D]) -> Result<Volume3D> {
        let first = maps.first().ok_or_else(|| Error::InvalidVolume("no channels to stack".into()))?;
        let mut data = Vec::with_capacity(first.data.len() * maps.len());
        let mut channels = 0;
        for m in maps {
            if m.extents != first.extents {
                return Err(Error::ExtentMismatch(format!("{:?} vs {:?}", m.extents, first.extents)));
            }
            data.extend_from_slice(&m.data);
            channels += m.channels;
        }
        Volume3D::new(first.extents, channels, data)
    }

    /// Keep only the listed channels, in the given order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<Volume3D> {
        let mut data = Vec::with_capacity(self.n_voxels() * channels.len());
        for &c in channels {
            if c >= self.channels {
                return Err(Error::IndexOutOfBounds(format!("channel {c} of {}", self.channels)));
            }
            data.extend_from_slice(self.channel(c));
        }
        Volume3D::new(self.extents, channels.len(), data)
    }
}

/// In-brain voxel mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskVolume {
    extents: [usize; 3],
    data: Vec<bool>,
}

impl MaskVolume {
    pub fn new(extents: [usize; 3], data: Vec<bool>) -> Result<Self> {
        check_extents(&extents)?;
        let expected: usize = extents.iter().product();
        if data.len() != expected {
            return Err(Error::LengthMismatch { expected, got: data.len() });
        }
        if !data.iter().any(|&b| b) {
            return Err(Error::InvalidVolume("mask has no in-brain voxels".into()));
        }
        Ok(Self { extents, data })
    }

    pub fn full(extents: [usize; 3]) -> Result<Self> {
        Self::new(extents, vec![true; extents.iter().product()])
    }

    /// Nonzero voxels of channel 0 of a map.
    pub fn from_volume(v: &Volume3D) -> Result<Self> {
        Self::new(v.extents(), v.channel(0).iter().map(|&x| x != 0.0).collect())
    }

    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn contains(&self, voxel: usize) -> bool {
        self.data[voxel]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Flat indices of in-mask voxels in storage order.
    pub fn voxels(&self) -> Vec<usize> {
        self.data.iter().enumerate().filter_map(|(i, &b)| b.then_some(i)).collect()
    }

    pub fn to_volume(&self) -> Volume3D {
        let data = self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Volume3D::new(self.extents, 1, data).expect("mask extents are valid")
    }
}

pub(crate) fn coords(index: usize, extents: [usize; 3]) -> [usize; 3] {
    let x = index % extents[0];
    let y = (index / extents[0]) % extents[1];
    let z = index / (extents[0] * extents[1]);
    [x, y, z]
}
