use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::midranks;

/// Area under the ROC curve as the Mann-Whitney statistic: the fraction of
/// (positive, negative) pairs ranked correctly, ties counting one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch { expected: labels.len(), got: scores.len() });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::DegenerateSeries("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l != 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l != 0).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

pub fn mean_std(xs: &[f64]) -> MeanStd {
    MeanStd { mean: crate::stats::mean(xs), std: crate::stats::std_pop(xs) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn auc_pairs(scores: &[f64], labels: &[u8]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li == 1 && lj == 0 {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn closed_form_cases() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[0, 0, 1, 1]).unwrap(), 0.0);
        assert_eq!(auc(&[0.5; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(Error::SingleClass)));
    }

    #[test]
    fn matches_pair_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let labels: Vec<u8> = (0..30).map(|i| if i < 2 { i as u8 } else { rng.random_range(0..2) }).collect();
            // coarse grid forces ties
            let scores: Vec<f64> = (0..30).map(|_| (rng.random_range(0..8) as f64) / 8.0).collect();
            assert!((auc(&scores, &labels).unwrap() - auc_pairs(&scores, &labels)).abs() < 1e-12);
        }
    }

    #[test]
    fn invariant_under_monotone_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let labels: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
        let scores: Vec<f64> = (0..40).map(|_| rng.random_range(-2.0..2.0)).collect();
        let base = auc(&scores, &labels).unwrap();
        let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let aff: Vec<f64> = scores.iter().map(|s| 3.0 * s + 7.0).collect();
        assert_eq!(auc(&exp, &labels).unwrap(), base);
        assert_eq!(auc(&aff, &labels).unwrap(), base);
    }

    #[test]
    fn aggregation() {
        let m = mean_std(&[0.5, 0.7, 0.9]);
        assert!((m.mean - 0.7).abs() < 1e-15);
        assert!((m.std - (0.08f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
