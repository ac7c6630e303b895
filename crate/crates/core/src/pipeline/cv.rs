//! Stratified splitting: k-fold partitions, training-set subsampling and the
//! validation carve-out.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn by_class(labels: &[u8], indices: impl Iterator<Item = usize>) -> [Vec<usize>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for i in indices {
        out[usize::from(labels[i] != 0)].push(i);
    }
    out
}

/// Shuffle each class with its own seeded stream, then deal members to folds
/// round-robin starting from fold 0. Both lists are returned sorted.
pub fn stratified_kfold(labels: &[u8], k: usize, seed_value: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("k = {k} must be >= 2")));
    }
    let classes = by_class(labels, 0..labels.len());
    for (label, members) in classes.iter().enumerate() {
        if members.len() < k {
            return Err(Error::ClassTooSmall { label: label as u8, count: members.len(), k });
        }
    }
    let mut tests = vec![Vec::new(); k];
    for (label, members) in classes.into_iter().enumerate() {
        let mut shuffled = members;
        shuffled.shuffle(&mut seed::rng(seed_value, "kfold-class", label as u64));
        for (pos, idx) in shuffled.into_iter().enumerate() {
            tests[pos % k].push(idx);
        }
    }
    Ok(tests
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let mut in_test = vec![false; labels.len()];
            test.iter().for_each(|&i| in_test[i] = true);
            Fold { train: (0..labels.len()).filter(|&i| !in_test[i]).collect(), test }
        })
        .collect())
}

/// Keep `round(count * proportion)` members of each class (at least one).
pub fn subsample_train(train: &[usize], labels: &[u8], proportion: f64, seed_value: u64) -> Result<Vec<usize>> {
    if !(proportion > 0.0 && proportion <= 1.0) {
        return Err(Error::InvalidConfig(format!("proportion {proportion} must be in (0, 1]")));
    }
    if proportion == 1.0 {
        return Ok(train.to_vec());
    }
    let mut kept = Vec::new();
    for (label, mut members) in by_class(labels, train.iter().copied()).into_iter().enumerate() {
        let n = ((members.len() as f64 * proportion).round() as usize).clamp(members.len().min(1), members.len());
        members.shuffle(&mut seed::rng(seed_value, "subsample-class", label as u64));
        kept.extend_from_slice(&members[..n]);
    }
    kept.sort_unstable();
    Ok(kept)
}

/// Move `round(fraction * count)` members of each class (at least one, and
/// leaving at least one) into a validation set. Returns `(train, validation)`.
pub fn validation_split(train: &[usize], labels: &[u8], fraction: f64, seed_value: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("validation fraction {fraction} must be in (0, 1)")));
    }
    let (mut fit, mut val) = (Vec::new(), Vec::new());
    for (label, mut members) in by_class(labels, train.iter().copied()).into_iter().enumerate() {
        if members.len() < 2 {
            return Err(Error::ClassTooSmall { label: label as u8, count: members.len(), k: 2 });
        }
        let n_val = ((members.len() as f64 * fraction).round() as usize).clamp(1, members.len() - 1);
        members.shuffle(&mut seed::rng(seed_value, "validation-class", label as u64));
        val.extend_from_slice(&members[..n_val]);
        fit.extend_from_slice(&members[n_val..]);
    }
    fit.sort_unstable();
    val.sort_unstable();
    Ok((fit, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(pos: usize, neg: usize) -> Vec<u8> {
        // interleave so class membership is not contiguous
        let mut l: Vec<u8> = (0..pos.max(neg) * 2)
            .filter_map(|i| {
                let c = (i % 2) as u8;
                let rank = i / 2;
                let lim = if c == 1 { pos } else { neg };
                (rank < lim).then_some(c)
            })
            .collect();
        l.truncate(pos + neg);
        l
    }

    fn count(ix: &[usize], l: &[u8], c: u8) -> usize {
        ix.iter().filter(|&&i| l[i] == c).count()
    }

    #[test]
    fn ten_and_ten_into_five() {
        let l = labels(10, 10);
        for f in stratified_kfold(&l, 5, 1).unwrap() {
            assert_eq!((count(&f.test, &l, 1), count(&f.test, &l, 0)), (2, 2));
            assert_eq!(f.train.len(), 16);
        }
    }

    #[test]
    fn cohort_of_871_with_403_positives() {
        let l = labels(403, 468);
        let folds = stratified_kfold(&l, 5, 7).unwrap();
        let pos: Vec<usize> = folds.iter().map(|f| count(&f.test, &l, 1)).collect();
        let neg: Vec<usize> = folds.iter().map(|f| count(&f.test, &l, 0)).collect();
        // round-robin from fold 0: remainders land in the first folds
        assert_eq!(pos, vec![81, 81, 81, 80, 80]);
        assert_eq!(neg, vec![94, 94, 94, 93, 93]);
        for f in &folds {
            let n = f.test.len() as f64;
            assert!((count(&f.test, &l, 1) as f64 - n * 403.0 / 871.0).abs() < 1.0);
        }
    }

    #[test]
    fn too_small_class_rejected() {
        let l = labels(3, 10);
        assert!(matches!(stratified_kfold(&l, 5, 0), Err(Error::ClassTooSmall { label: 1, count: 3, k: 5 })));
    }

    #[test]
    fn subsample_counts() {
        let l = labels(100, 100);
        let all: Vec<usize> = (0..200).collect();
        assert_eq!(subsample_train(&all, &l, 1.0, 0).unwrap(), all);
        let half = subsample_train(&all, &l, 0.5, 0).unwrap();
        assert_eq!((count(&half, &l, 1), count(&half, &l, 0)), (50, 50));
    }

    #[test]
    fn validation_is_stratified() {
        let l = labels(20, 30);
        let all: Vec<usize> = (0..50).collect();
        let (fit, val) = validation_split(&all, &l, 0.2, 3).unwrap();
        assert_eq!((count(&val, &l, 1), count(&val, &l, 0)), (4, 6));
        assert_eq!(fit.len() + val.len(), 50);
        assert!(fit.iter().all(|i| !val.contains(i)));
    }

    proptest! {
        #[test]
        fn folds_partition_indices(pos in 5usize..60, neg in 5usize..60, k in 2usize..6, seed in any::<u64>()) {
            let l = labels(pos, neg);
            let folds = stratified_kfold(&l, k, seed).unwrap();
            let mut seen = vec![0; l.len()];
            for f in &folds {
                for &i in &f.test { seen[i] += 1; }
                prop_assert_eq!(f.train.len() + f.test.len(), l.len());
                for c in [0u8, 1] {
                    let total = count(&(0..l.len()).collect::<Vec<_>>(), &l, c) as f64;
                    prop_assert!((count(&f.test, &l, c) as f64 - total / k as f64).abs() < 1.0);
                }
            }
            prop_assert!(seen.iter().all(|&s| s == 1));
        }

        #[test]
        fn subsample_preserves_ratio(pos in 1usize..80, neg in 1usize..80, p in 0.05f64..1.0, seed in any::<u64>()) {
            let l = labels(pos, neg);
            let all: Vec<usize> = (0..l.len()).collect();
            let kept = subsample_train(&all, &l, p, seed).unwrap();
            for (c, n) in [(1u8, pos), (0u8, neg)] {
                let expect = ((n as f64 * p).round() as usize).max(1);
                prop_assert_eq!(count(&kept, &l, c), expect);
            }
        }
    }
}
