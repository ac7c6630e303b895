//! Leakage audit. Every read of subject data during a fold goes through a
//! [`FoldView`], which refuses test-subject reads until evaluation begins and
//! checks that the test inputs still hash to the digest taken at fold start.

use std::cell::{Cell, RefCell};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::volume::Volume3D;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub fold: usize,
    /// SHA-256 over the test subjects' labels and inputs.
    pub test_digest: String,
    pub reads_before_evaluation: usize,
    pub distinct_subjects_before_evaluation: usize,
    pub test_reads_before_evaluation: usize,
    /// True when model selection deliberately used the test fold.
    pub selection_on_test: bool,
}

pub struct FoldView<'a> {
    data: &'a Dataset,
    fold: usize,
    is_test: Vec<bool>,
    digest: String,
    evaluating: Cell<bool>,
    selection_on_test: bool,
    reads: RefCell<Vec<usize>>,
}

/// Digest of the labels and every input of `subjects`, in the given order.
pub fn digest_subjects(data: &Dataset, subjects: &[usize]) -> String {
    let mut h = Sha256::new();
    let put = |h: &mut Sha256, xs: &[f64]| {
        for x in xs {
            h.update(x.to_le_bytes());
        }
    };
    for &i in subjects {
        h.update(data.subject_ids[i].as_bytes());
        h.update([data.labels[i]]);
        if let Some(v) = &data.volumes {
            put(&mut h, v[i].data());
        }
        if let Some(f) = &data.features {
            put(&mut h, &f[i]);
        }
        if let Some(s) = &data.series {
            put(&mut h, &s[i]);
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl<'a> FoldView<'a> {
    pub fn new(data: &'a Dataset, fold: usize, test: &[usize]) -> Self {
        let mut is_test = vec![false; data.len()];
        test.iter().for_each(|&i| is_test[i] = true);
        FoldView {
            data,
            fold,
            is_test,
            digest: digest_subjects(data, test),
            evaluating: Cell::new(false),
            selection_on_test: false,
            reads: RefCell::new(Vec::new()),
        }
    }

    /// Legacy protocol: model selection reads the test fold. Recorded in
    /// the audit rather than refused.
    pub fn allow_selection_on_test(mut self) -> Self {
        self.selection_on_test = true;
        self
    }

    fn touch(&self, i: usize) -> Result<()> {
        if i >= self.data.len() {
            return Err(Error::IndexOutOfBounds(format!("subject {i} of {}", self.data.len())));
        }
        if !self.evaluating.get() {
            if self.is_test[i] && !self.selection_on_test {
                return Err(Error::LeakageViolation(i));
            }
            self.reads.borrow_mut().push(i);
        }
        Ok(())
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn label(&self, i: usize) -> Result<u8> {
        self.touch(i)?;
        Ok(self.data.labels[i])
    }

    pub fn volume(&self, i: usize) -> Result<&'a Volume3D> {
        self.touch(i)?;
        self.data.volumes.as_ref().map(|v| &v[i]).ok_or_else(|| Error::InvalidConfig("dataset has no volumes".into()))
    }

    pub fn features(&self, i: usize) -> Result<&'a [f64]> {
        self.touch(i)?;
        self.data.features.as_ref().map(|f| f[i].as_slice()).ok_or_else(|| Error::InvalidConfig("dataset has no connectome features".into()))
    }

    pub fn series(&self, i: usize) -> Result<&'a [f64]> {
        self.touch(i)?;
        self.data.series.as_ref().map(|s| s[i].as_slice()).ok_or_else(|| Error::InvalidConfig("dataset has no ROI series".into()))
    }

    /// Close the fitting phase: verify the test digest and summarise reads.
    pub fn begin_evaluation(&self) -> Result<AuditRecord> {
        let test: Vec<usize> = (0..self.data.len()).filter(|&i| self.is_test[i]).collect();
        if digest_subjects(self.data, &test) != self.digest {
            return Err(Error::LeakageViolation(test.first().copied().unwrap_or(0)));
        }
        let reads = self.reads.borrow();
        let test_reads = reads.iter().filter(|&&i| self.is_test[i]).count();
        if test_reads > 0 && !self.selection_on_test {
            let first = reads.iter().copied().find(|&i| self.is_test[i]).expect("counted");
            return Err(Error::LeakageViolation(first));
        }
        let mut distinct = reads.clone();
        distinct.sort_unstable();
        distinct.dedup();
        self.evaluating.set(true);
        Ok(AuditRecord {
            fold: self.fold,
            test_digest: self.digest.clone(),
            reads_before_evaluation: reads.len(),
            distinct_subjects_before_evaluation: distinct.len(),
            test_reads_before_evaluation: test_reads,
            selection_on_test: self.selection_on_test,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        Dataset {
            subject_ids: (0..4).map(|i| format!("s{i}")).collect(),
            labels: vec![0, 1, 0, 1],
            channels: Vec::new(),
            volumes: None,
            features: Some((0..4).map(|i| vec![i as f64; 3]).collect()),
            series: None,
            n_rois: 3,
            crop_len: 0,
        }
    }

    #[test]
    fn test_reads_refused_until_evaluation() {
        let d = toy();
        let view = FoldView::new(&d, 0, &[1, 2]);
        assert!(view.features(0).is_ok());
        assert!(matches!(view.features(2), Err(Error::LeakageViolation(2))));
        assert!(matches!(view.label(1), Err(Error::LeakageViolation(1))));
        let audit = view.begin_evaluation().unwrap();
        assert_eq!(audit.test_reads_before_evaluation, 0);
        assert_eq!(audit.distinct_subjects_before_evaluation, 1);
        assert!(view.features(2).is_ok());
    }

    #[test]
    fn digest_tracks_content() {
        let d = toy();
        let mut e = toy();
        e.features.as_mut().unwrap()[2][0] = 9.0;
        assert_eq!(digest_subjects(&d, &[1, 2]), digest_subjects(&toy(), &[1, 2]));
        assert_ne!(digest_subjects(&d, &[1, 2]), digest_subjects(&e, &[1, 2]));
        assert_eq!(digest_subjects(&d, &[0, 3]), digest_subjects(&e, &[0, 3]));
    }

    #[test]
    fn selection_on_test_is_recorded() {
        let d = toy();
        let view = FoldView::new(&d, 1, &[3]).allow_selection_on_test();
        view.features(3).unwrap();
        let audit = view.begin_evaluation().unwrap();
        assert!(audit.selection_on_test);
        assert_eq!(audit.test_reads_before_evaluation, 1);
    }
}
