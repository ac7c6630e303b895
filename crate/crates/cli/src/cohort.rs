//! On-disk cohort layout:
//!
//! ```text
//! labels.csv            subject_id,label
//! atlas.nii             int16 ROI labels, 0 = background
//! mask.nii              uint8 brain mask
//! subjects/<id>.nii     4D series (.nii.gz also accepted)
//! synth.json            generator config (synthetic cohorts only)
//! ```

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sto_core::connectome::{AtlasVolume, RoiTimeseries};
use sto_core::nifti::{self, Datatype};
use sto_core::pipeline::{Dataset, PrepConfig};
use sto_core::synth::{self, BlockLayout, SynthConfig};
use sto_core::{Error, MaskVolume, Result, Volume4D};

pub struct Cohort {
    pub root: PathBuf,
    pub ids: Vec<String>,
    pub labels: Vec<u8>,
    pub atlas: AtlasVolume,
    pub mask: MaskVolume,
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub fn write_synthetic(cfg: &SynthConfig, out: &Path, gzip: bool) -> Result<()> {
    cfg.validate()?;
    let layout = BlockLayout::new(cfg.extents, cfg.n_blocks)?;
    std::fs::create_dir_all(out.join("subjects"))?;
    let ext = if gzip { "nii.gz" } else { "nii" };
    (0..cfg.n_subjects()).into_par_iter().try_for_each(|i| {
        let v = synth::generate_subject(cfg, &layout, i)?;
        nifti::write_file(&out.join("subjects").join(format!("{}.{ext}", synth::subject_id(i))), &v, Datatype::Float32)
    })?;
    let mut w = csv::Writer::from_path(out.join("labels.csv"))?;
    w.write_record(["subject_id", "label"])?;
    for i in 0..cfg.n_subjects() {
        w.write_record([synth::subject_id(i), cfg.label_of(i).to_string()])?;
    }
    w.flush()?;
    nifti::write_file(&out.join("atlas.nii"), &layout.atlas().to_volume(), Datatype::Int16)?;
    nifti::write_file(&out.join("mask.nii"), &layout.mask().to_volume(), Datatype::Uint8)?;
    write_json(&out.join("synth.json"), cfg)
}

pub fn read_labels(path: &Path) -> Result<(Vec<String>, Vec<u8>)> {
    let mut r = csv::Reader::from_path(path)?;
    let (mut ids, mut labels) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::Format(format!("{}: expected subject_id,label", path.display())));
        }
        let label: u8 = rec[1].trim().parse().map_err(|_| Error::Format(format!("{}: bad label '{}'", path.display(), &rec[1])))?;
        if label > 1 {
            return Err(Error::InvalidConfig(format!("label {label} for {} is not 0 or 1", &rec[0])));
        }
        ids.push(rec[0].to_string());
        labels.push(label);
    }
    Ok((ids, labels))
}

pub fn read_atlas(path: &Path) -> Result<AtlasVolume> {
    AtlasVolume::from_volume(&nifti::read_file(path)?.into_map()?)
}

pub fn read_mask(path: &Path) -> Result<MaskVolume> {
    MaskVolume::from_volume(&nifti::read_file(path)?.into_map()?)
}

impl Cohort {
    pub fn open(root: &Path) -> Result<Self> {
        let (ids, labels) = read_labels(&root.join("labels.csv"))?;
        Ok(Cohort { root: root.to_path_buf(), ids, labels, atlas: read_atlas(&root.join("atlas.nii"))?, mask: read_mask(&root.join("mask.nii"))? })
    }

    fn subject_path(&self, i: usize) -> Result<PathBuf> {
        let dir = self.root.join("subjects");
        ["nii", "nii.gz"]
            .iter()
            .map(|e| dir.join(format!("{}.{e}", self.ids[i])))
            .find(|p| p.exists())
            .ok_or_else(|| Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, format!("no image for subject {} in {}", self.ids[i], dir.display()))))
    }

    pub fn load_subject(&self, i: usize) -> Result<Volume4D> {
        nifti::read_file(&self.subject_path(i)?)?.into_series()
    }

    pub fn prepare(&self, cfg: &PrepConfig) -> Result<Dataset> {
        Dataset::prepare(self.ids.clone(), self.labels.clone(), &self.atlas, &self.mask, cfg, |i| self.load_subject(i))
    }
}

/// T rows, one column per ROI, header = ROI labels.
pub fn write_timeseries(path: &Path, ts: &RoiTimeseries) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((1..=ts.n_rois()).map(|m| m.to_string()))?;
    for t in 0..ts.n_time() {
        w.write_record((0..ts.n_rois()).map(|m| ts.get(t, m).to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_timeseries(path: &Path) -> Result<RoiTimeseries> {
    let mut r = csv::Reader::from_path(path)?;
    let n_rois = r.headers()?.len();
    let mut data = Vec::new();
    let mut n_time = 0;
    for rec in r.records() {
        let rec = rec?;
        for field in rec.iter() {
            data.push(field.trim().parse::<f64>().map_err(|_| Error::Format(format!("{}: non-numeric value '{field}'", path.display())))?);
        }
        n_time += 1;
    }
    RoiTimeseries::new(n_time, n_rois, data)
}
