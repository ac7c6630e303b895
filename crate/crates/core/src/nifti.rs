//! Reader and writer for the single-file NIfTI-1 format.
//!
//! Only the fields needed to recover a dense array are interpreted: `dim`,
//! `datatype`, `bitpix`, `pixdim`, `vox_offset`, `scl_slope`/`scl_inter` and
//! `magic`. Orientation (qform/sform) is ignored and arrays are used in stored
//! index order. Gzip-wrapped input is detected by its `1f 8b` prefix.

use std::io::{Read, Write};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::volume::{Volume3D, Volume4D};

pub const HEADER_SIZE: usize = 348;
/// Header plus the four-byte extension flag.
pub const MIN_VOX_OFFSET: usize = 352;
pub const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";
pub const MAGIC_PAIR: &[u8; 4] = b"ni1\0";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Datatype {
    Uint8,
    Int16,
    Int32,
    Float32,
    Float64,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Datatype::Uint8 => 2,
            Datatype::Int16 => 4,
            Datatype::Int32 => 8,
            Datatype::Float32 => 16,
            Datatype::Float64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            2 => Datatype::Uint8,
            4 => Datatype::Int16,
            8 => Datatype::Int32,
            16 => Datatype::Float32,
            64 => Datatype::Float64,
            other => return Err(Error::UnsupportedDatatype(other)),
        })
    }

    pub fn bitpix(self) -> i16 {
        match self {
            Datatype::Uint8 => 8,
            Datatype::Int16 => 16,
            Datatype::Int32 | Datatype::Float32 => 32,
            Datatype::Float64 => 64,
        }
    }

    pub fn bytes(self) -> usize {
        self.bitpix() as usize / 8
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub sizeof_hdr: i32,
    pub dim: [i16; 8],
    pub datatype_code: i16,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub xyzt_units: u8,
    pub magic: [u8; 4],
    pub endian: Endian,
}

impl NiftiHeader {
    fn for_shape(dim: [i16; 8], pixdim: [f32; 8], datatype: Datatype) -> Self {
        NiftiHeader {
            sizeof_hdr: HEADER_SIZE as i32,
            dim,
            datatype_code: datatype.code(),
            bitpix: datatype.bitpix(),
            pixdim,
            vox_offset: MIN_VOX_OFFSET as f32,
            scl_slope: 1.0,
            scl_inter: 0.0,
            // mm + seconds
            xyzt_units: 2 | 8,
            magic: *MAGIC_SINGLE,
            endian: Endian::Little,
        }
    }

    pub fn datatype(&self) -> Result<Datatype> {
        Datatype::from_code(self.datatype_code)
    }

    pub fn rank(&self) -> usize {
        self.dim[0] as usize
    }

    /// Extents `dim[1..=rank]`.
    pub fn extents(&self) -> Vec<usize> {
        (1..=self.rank()).map(|i| self.dim[i] as usize).collect()
    }

    pub fn n_elements(&self) -> Result<usize> {
        self.extents()
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| Error::MalformedHeader("element count overflows".into()))
    }

    pub fn repetition_time(&self) -> f64 {
        f64::from(self.pixdim[4])
    }

    fn validate(&self) -> Result<Datatype> {
        if self.sizeof_hdr != HEADER_SIZE as i32 {
            return Err(Error::MalformedHeader(format!("sizeof_hdr = {}", self.sizeof_hdr)));
        }
        if &self.magic != MAGIC_SINGLE && &self.magic != MAGIC_PAIR {
            return Err(Error::MalformedHeader(format!("bad magic {:?}", self.magic)));
        }
        if !(3..=4).contains(&self.dim[0]) {
            return Err(Error::MalformedHeader(format!("dim[0] = {} (need 3 or 4)", self.dim[0])));
        }
        for i in 1..=self.rank() {
            if self.dim[i] < 1 {
                return Err(Error::MalformedHeader(format!("dim[{i}] = {}", self.dim[i])));
            }
        }
        let datatype = self.datatype()?;
        if self.bitpix != datatype.bitpix() {
            return Err(Error::MalformedHeader(format!(
                "bitpix {} inconsistent with datatype {}",
                self.bitpix, self.datatype_code
            )));
        }
        if !self.vox_offset.is_finite() || self.vox_offset < 0.0 || self.vox_offset.fract() != 0.0 {
            return Err(Error::MalformedHeader(format!("vox_offset = {}", self.vox_offset)));
        }
        if &self.magic == MAGIC_SINGLE && (self.vox_offset as usize) < MIN_VOX_OFFSET {
            return Err(Error::MalformedHeader(format!("vox_offset {} < 352", self.vox_offset)));
        }
        if !self.scl_slope.is_finite() || !self.scl_inter.is_finite() {
            return Err(Error::MalformedHeader("non-finite scaling".into()));
        }
        Ok(datatype)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = vec![0u8; HEADER_SIZE];
        let e = self.endian;
        put(&mut buf, 0, &i32_bytes(self.sizeof_hdr, e));
        // "regular" = 'r' for legacy readers
        buf[38] = b'r';
        for (i, d) in self.dim.iter().enumerate() {
            put(&mut buf, 40 + 2 * i, &i16_bytes(*d, e));
        }
        put(&mut buf, 70, &i16_bytes(self.datatype_code, e));
        put(&mut buf, 72, &i16_bytes(self.bitpix, e));
        for (i, p) in self.pixdim.iter().enumerate() {
            put(&mut buf, 76 + 4 * i, &f32_bytes(*p, e));
        }
        put(&mut buf, 108, &f32_bytes(self.vox_offset, e));
        put(&mut buf, 112, &f32_bytes(self.scl_slope, e));
        put(&mut buf, 116, &f32_bytes(self.scl_inter, e));
        buf[123] = self.xyzt_units;
        buf[344..348].copy_from_slice(&self.magic);
        buf
    }

    /// Parse the fixed 348-byte header, detecting byte order from `sizeof_hdr`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_SIZE {
            return Err(Error::TruncatedData { expected: HEADER_SIZE, found: bytes.len() });
        }
        let raw = [bytes[0], bytes[1], bytes[2], bytes[3]];
        let endian = if i32::from_le_bytes(raw) == HEADER_SIZE as i32 {
            Endian::Little
        } else if i32::from_be_bytes(raw) == HEADER_SIZE as i32 {
            Endian::Big
        } else {
            return Err(Error::MalformedHeader(format!(
                "sizeof_hdr = {} in either byte order",
                i32::from_le_bytes(raw)
            )));
        };
        let r = Reader { bytes, endian };
        let mut dim = [0i16; 8];
        for (i, d) in dim.iter_mut().enumerate() {
            *d = r.i16(40 + 2 * i);
        }
        let mut pixdim = [0f32; 8];
        for (i, p) in pixdim.iter_mut().enumerate() {
            *p = r.f32(76 + 4 * i);
        }
        let mut magic = [0u8; 4];
        magic.copy_from_slice(&bytes[344..348]);
        let header = NiftiHeader {
            sizeof_hdr: HEADER_SIZE as i32,
            dim,
            datatype_code: r.i16(70),
            bitpix: r.i16(72),
            pixdim,
            vox_offset: r.f32(108),
            scl_slope: r.f32(112),
            scl_inter: r.f32(116),
            xyzt_units: bytes[123],
            magic,
            endian,
        };
        header.validate()?;
        Ok(header)
    }
}

fn put(buf: &mut [u8], at: usize, src: &[u8]) {
    buf[at..at + src.len()].copy_from_slice(src);
}

fn i16_bytes(v: i16, e: Endian) -> [u8; 2] {
    match e {
        Endian::Little => v.to_le_bytes(),
        Endian::Big => v.to_be_bytes(),
    }
}

fn i32_bytes(v: i32, e: Endian) -> [u8; 4] {
    match e {
        Endian::Little => v.to_le_bytes(),
        Endian::Big => v.to_be_bytes(),
    }
}

fn f32_bytes(v: f32, e: Endian) -> [u8; 4] {
    match e {
        Endian::Little => v.to_le_bytes(),
        Endian::Big => v.to_be_bytes(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl Reader<'_> {
    fn array<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut a = [0u8; N];
        a.copy_from_slice(&self.bytes[at..at + N]);
        if self.endian == Endian::Big {
            a.reverse();
        }
        a
    }

    fn i16(&self, at: usize) -> i16 {
        i16::from_le_bytes(self.array(at))
    }

    fn f32(&self, at: usize) -> f32 {
        f32::from_le_bytes(self.array(at))
    }

    fn sample(&self, at: usize, dt: Datatype) -> f64 {
        match dt {
            Datatype::Uint8 => f64::from(self.bytes[at]),
            Datatype::Int16 => f64::from(i16::from_le_bytes(self.array(at))),
            Datatype::Int32 => f64::from(i32::from_le_bytes(self.array(at))),
            Datatype::Float32 => f64::from(f32::from_le_bytes(self.array(at))),
            Datatype::Float64 => f64::from_le_bytes(self.array(at)),
        }
    }
}

/// A decoded volume: a time series, or a (possibly multi-channel) map.
///
/// A rank-4 file whose fourth axis has zero spacing (`pixdim[4] == 0`) or a
/// single sample is read as a channel stack rather than a time series.
#[derive(Debug, Clone, PartialEq)]
pub enum NiftiVolume {
    Series(Volume4D),
    Map(Volume3D),
}

impl NiftiVolume {
    pub fn into_series(self) -> Result<Volume4D> {
        match self {
            NiftiVolume::Series(v) => Ok(v),
            NiftiVolume::Map(_) => Err(Error::InvalidVolume("expected a 4D time series".into())),
        }
    }

    pub fn into_map(self) -> Result<Volume3D> {
        match self {
            NiftiVolume::Map(v) => Ok(v),
            NiftiVolume::Series(_) => Err(Error::InvalidVolume("expected a 3D map".into())),
        }
    }
}

fn maybe_gunzip(bytes: &[u8]) -> Result<std::borrow::Cow<'_, [u8]>> {
    if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("gzip stream: {e}")))?;
        Ok(out.into())
    } else {
        Ok(bytes.into())
    }
}

/// Parse a single-file (`n+1`) NIfTI-1 image, optionally gzip-wrapped.
pub fn parse_nifti(bytes: &[u8]) -> Result<(NiftiHeader, NiftiVolume)> {
    let bytes = maybe_gunzip(bytes)?;
    let header = NiftiHeader::from_bytes(&bytes)?;
    if &header.magic != MAGIC_SINGLE {
        return Err(Error::MalformedHeader("detached-header image; use parse_nifti_pair".into()));
    }
    let volume = decode(&header, &bytes, header.vox_offset as usize)?;
    Ok((header, volume))
}

/// Parse a `.hdr`/`.img` pair (`ni1` magic).
pub fn parse_nifti_pair(header_bytes: &[u8], image_bytes: &[u8]) -> Result<(NiftiHeader, NiftiVolume)> {
    let header_bytes = maybe_gunzip(header_bytes)?;
    let image_bytes = maybe_gunzip(image_bytes)?;
    let header = NiftiHeader::from_bytes(&header_bytes)?;
    let volume = decode(&header, &image_bytes, header.vox_offset as usize)?;
    Ok((header, volume))
}

fn decode(header: &NiftiHeader, bytes: &[u8], offset: usize) -> Result<NiftiVolume> {
    let datatype = header.validate()?;
    let n = header.n_elements()?;
    let expected = n
        .checked_mul(datatype.bytes())
        .and_then(|b| b.checked_add(offset))
        .ok_or_else(|| Error::MalformedHeader("payload size overflows".into()))?;
    if bytes.len() < expected {
        return Err(Error::TruncatedData { expected, found: bytes.len() });
    }
    let reader = Reader { bytes, endian: header.endian };
    let step = datatype.bytes();
    let scale = header.scl_slope != 0.0;
    let (slope, inter) = (f64::from(header.scl_slope), f64::from(header.scl_inter));
    let data: Vec<f64> = (0..n)
        .map(|i| {
            let v = reader.sample(offset + i * step, datatype);
            if scale {
                v * slope + inter
            } else {
                v
            }
        })
        .collect();

    let ext = header.extents();
    let spatial = [ext[0], ext[1], ext[2]];
    let spacing = [
        f64::from(header.pixdim[1]),
        f64::from(header.pixdim[2]),
        f64::from(header.pixdim[3]),
    ];
    if header.rank() == 3 {
        return Ok(NiftiVolume::Map(Volume3D::new(spatial, 1, data)?));
    }
    let t = ext[3];
    let tr = header.repetition_time();
    if tr == 0.0 || t < 2 {
        Ok(NiftiVolume::Map(Volume3D::new(spatial, t, data)?))
    } else {
        Ok(NiftiVolume::Series(Volume4D::new([ext[0], ext[1], ext[2], t], spacing, tr, data)?))
    }
}

fn dim_i16(e: usize) -> Result<i16> {
    i16::try_from(e).map_err(|_| Error::InvalidVolume(format!("extent {e} exceeds NIfTI-1 limit")))
}

fn encode(header: NiftiHeader, data: &[f64], datatype: Datatype) -> Result<Vec<u8>> {
    let mut out = header.to_bytes();
    // extension flag: no extensions
    out.extend_from_slice(&[0, 0, 0, 0]);
    out.reserve(data.len() * datatype.bytes());
    for &v in data {
        match datatype {
            Datatype::Float64 => out.extend_from_slice(&v.to_le_bytes()),
            Datatype::Float32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            _ => {
                let (lo, hi) = match datatype {
                    Datatype::Uint8 => (0.0, 255.0),
                    Datatype::Int16 => (f64::from(i16::MIN), f64::from(i16::MAX)),
                    _ => (f64::from(i32::MIN), f64::from(i32::MAX)),
                };
                if v.fract() != 0.0 || v < lo || v > hi {
                    return Err(Error::InvalidVolume(format!("{v} not representable as {datatype:?}")));
                }
                match datatype {
                    Datatype::Uint8 => out.push(v as u8),
                    Datatype::Int16 => out.extend_from_slice(&(v as i16).to_le_bytes()),
                    _ => out.extend_from_slice(&(v as i32).to_le_bytes()),
                }
            }
        }
    }
    Ok(out)
}

/// Borrowed view of something that can be written as NIfTI.
#[derive(Debug, Clone, Copy)]
pub enum VolumeRef<'a> {
    Series(&'a Volume4D),
    Map(&'a Volume3D),
}

impl<'a> From<&'a Volume4D> for VolumeRef<'a> {
    fn from(v: &'a Volume4D) -> Self {
        VolumeRef::Series(v)
    }
}

impl<'a> From<&'a Volume3D> for VolumeRef<'a> {
    fn from(v: &'a Volume3D) -> Self {
        VolumeRef::Map(v)
    }
}

impl<'a> From<&'a NiftiVolume> for VolumeRef<'a> {
    fn from(v: &'a NiftiVolume) -> Self {
        match v {
            NiftiVolume::Series(s) => VolumeRef::Series(s),
            NiftiVolume::Map(m) => VolumeRef::Map(m),
        }
    }
}

/// Write as little-endian float64; lossless.
pub fn write_nifti<'a>(volume: impl Into<VolumeRef<'a>>) -> Result<Vec<u8>> {
    write_nifti_as(volume, Datatype::Float64)
}

/// Write with an explicit on-disk datatype. Integer types require every
/// sample to be integral and in range.
pub fn write_nifti_as<'a>(volume: impl Into<VolumeRef<'a>>, datatype: Datatype) -> Result<Vec<u8>> {
    match volume.into() {
        VolumeRef::Series(v) => {
            let [x, y, z, t] = v.extents();
            let s = v.spacing_mm();
            let dim = [4, dim_i16(x)?, dim_i16(y)?, dim_i16(z)?, dim_i16(t)?, 1, 1, 1];
            let pixdim = [1.0, s[0] as f32, s[1] as f32, s[2] as f32, v.tr_seconds() as f32, 0.0, 0.0, 0.0];
            encode(NiftiHeader::for_shape(dim, pixdim, datatype), v.data(), datatype)
        }
        VolumeRef::Map(v) => {
            let [x, y, z] = v.extents();
            let c = v.channels();
            let dim = if c == 1 {
                [3, dim_i16(x)?, dim_i16(y)?, dim_i16(z)?, 1, 1, 1, 1]
            } else {
                [4, dim_i16(x)?, dim_i16(y)?, dim_i16(z)?, dim_i16(c)?, 1, 1, 1]
            };
            let pixdim = [1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
            encode(NiftiHeader::for_shape(dim, pixdim, datatype), v.data(), datatype)
        }
    }
}

pub fn gzip(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut enc = GzEncoder::new(Vec::new(), Compression::default());
    enc.write_all(bytes)?;
    Ok(enc.finish()?)
}

/// Read a `.nii` or `.nii.gz` file.
pub fn read_file(path: &std::path::Path) -> Result<NiftiVolume> {
    let bytes = std::fs::read(path)?;
    Ok(parse_nifti(&bytes)?.1)
}

/// Write a file, gzip-compressing when the name ends in `.gz`.
pub fn write_file<'a>(path: &std::path::Path, volume: impl Into<VolumeRef<'a>>, datatype: Datatype) -> Result<()> {
    let mut bytes = write_nifti_as(volume, datatype)?;
    if path.extension().is_some_and(|e| e == "gz") {
        bytes = gzip(&bytes)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_4d() -> Volume4D {
        let n = 3 * 2 * 2 * 4;
        let data = (0..n).map(|i| (i as f64 * 0.37).sin() * 100.0).collect();
        Volume4D::new([3, 2, 2, 4], [3.0, 3.0, 3.0], 2.0, data).unwrap()
    }

    #[test]
    fn zeros_payload_layout() {
        let v = Volume4D::new([2, 2, 2, 2], [1.0; 3], 2.0, vec![0.0; 16]).unwrap();
        let bytes = write_nifti(&v).unwrap();
        assert_eq!(bytes.len(), 352 + 16 * 8);
        assert!(bytes[352..].iter().all(|&b| b == 0));
        let (h, _) = parse_nifti(&bytes).unwrap();
        assert_eq!(h.vox_offset, 352.0);
        assert_eq!(h.dim, [4, 2, 2, 2, 2, 1, 1, 1]);
    }

    #[test]
    fn float64_round_trip_is_exact() {
        let v = sample_4d();
        let (h, back) = parse_nifti(&write_nifti(&v).unwrap()).unwrap();
        assert_eq!(h.datatype().unwrap(), Datatype::Float64);
        assert_eq!(back, NiftiVolume::Series(v));
    }

    #[test]
    fn gzip_envelope_is_transparent() {
        let v = sample_4d();
        let raw = write_nifti(&v).unwrap();
        let (_, back) = parse_nifti(&gzip(&raw).unwrap()).unwrap();
        assert_eq!(back.into_series().unwrap(), v);
    }

    #[test]
    fn multichannel_map_round_trip() {
        let data = (0..2 * 3 * 2 * 4).map(|i| i as f64).collect();
        let m = Volume3D::new([2, 3, 2], 4, data).unwrap();
        let bytes = write_nifti(&m).unwrap();
        let (h, back) = parse_nifti(&bytes).unwrap();
        assert_eq!(h.dim[..5], [4, 2, 3, 2, 4]);
        assert_eq!(h.pixdim[4], 0.0);
        assert_eq!(back.into_map().unwrap(), m);
    }

    #[test]
    fn integer_datatypes_round_trip() {
        let data: Vec<f64> = (0..27).map(|i| (i % 13) as f64).collect();
        let m = Volume3D::new([3, 3, 3], 1, data).unwrap();
        for dt in [Datatype::Uint8, Datatype::Int16, Datatype::Int32, Datatype::Float32] {
            let (h, back) = parse_nifti(&write_nifti_as(&m, dt).unwrap()).unwrap();
            assert_eq!(h.bitpix, dt.bitpix());
            assert_eq!(back.into_map().unwrap(), m);
        }
        let bad = Volume3D::new([1, 1, 1], 1, vec![0.5]).unwrap();
        assert!(write_nifti_as(&bad, Datatype::Int16).is_err());
    }

    /// Byte-swap every field the parser reads plus every float64 sample.
    fn to_big_endian(le: &[u8]) -> Vec<u8> {
        let mut be = le.to_vec();
        let swap = |buf: &mut Vec<u8>, at: usize, width: usize| buf[at..at + width].reverse();
        swap(&mut be, 0, 4);
        for i in 0..8 {
            swap(&mut be, 40 + 2 * i, 2);
        }
        swap(&mut be, 70, 2);
        swap(&mut be, 72, 2);
        for i in 0..8 {
            swap(&mut be, 76 + 4 * i, 4);
        }
        for at in [108, 112, 116] {
            swap(&mut be, at, 4);
        }
        let mut at = 352;
        while at < be.len() {
            swap(&mut be, at, 8);
            at += 8;
        }
        be
    }

    #[test]
    fn big_endian_file_parses() {
        let v = sample_4d();
        let be = to_big_endian(&write_nifti(&v).unwrap());
        assert_eq!(&be[0..4], &[0, 0, 1, 0x5C]);
        let (h, back) = parse_nifti(&be).unwrap();
        assert_eq!(h.endian, Endian::Big);
        assert_eq!(back.into_series().unwrap(), v);
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = write_nifti(&sample_4d()).unwrap();
        bytes[344..348].copy_from_slice(b"XXXX");
        assert!(matches!(parse_nifti(&bytes), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn bad_sizeof_hdr_rejected() {
        let mut bytes = write_nifti(&sample_4d()).unwrap();
        bytes[0] = 0x5D;
        assert!(matches!(parse_nifti(&bytes), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn unsupported_datatype_rejected() {
        let mut bytes = write_nifti(&sample_4d()).unwrap();
        // complex64
        bytes[70..72].copy_from_slice(&32i16.to_le_bytes());
        assert!(matches!(parse_nifti(&bytes), Err(Error::UnsupportedDatatype(32))));
    }

    #[test]
    fn truncation_detected() {
        let bytes = write_nifti(&sample_4d()).unwrap();
        for cut in [0, 100, 347, 352, bytes.len() - 1] {
            assert!(
                matches!(parse_nifti(&bytes[..cut]), Err(Error::TruncatedData { .. })),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn scaling_applied() {
        let m = Volume3D::new([2, 1, 1], 1, vec![3.0, -4.0]).unwrap();
        let mut bytes = write_nifti_as(&m, Datatype::Int16).unwrap();
        bytes[112..116].copy_from_slice(&2.0f32.to_le_bytes());
        bytes[116..120].copy_from_slice(&0.5f32.to_le_bytes());
        let back = parse_nifti(&bytes).unwrap().1.into_map().unwrap();
        assert_eq!(back.data(), &[6.5, -7.5]);
    }

    #[test]
    fn detached_pair() {
        let v = sample_4d();
        let bytes = write_nifti(&v).unwrap();
        let mut hdr = bytes[..348].to_vec();
        hdr[344..348].copy_from_slice(MAGIC_PAIR);
        hdr[108..112].copy_from_slice(&0f32.to_le_bytes());
        assert!(parse_nifti(&hdr).is_err());
        let (_, back) = parse_nifti_pair(&hdr, &bytes[352..]).unwrap();
        assert_eq!(back.into_series().unwrap(), v);
    }
}
