use crate::error::{Error, Result};
use crate::stats::{midranks, tie_correction};

/// Kendall's coefficient of concordance over `K` series of `n` time points.
///
/// Time points are ranked within each series (midranks for ties) and
/// `W = 12 S / (K^2 (n^3 - n) - K sum_j T_j)`, where `S` is the squared
/// deviation of the per-time-point rank sums and `T_j` the tie correction of
/// series `j`. A zero denominator (every series constant) yields 0.
pub fn kendalls_w<S: AsRef<[f64]>>(series: &[S]) -> Result<f64> {
    let k = series.len();
    if k < 2 {
        return Err(Error::DegenerateSeries(format!("need at least 2 series, got {k}")));
    }
    let n = series[0].as_ref().len();
    if n < 2 {
        return Err(Error::DegenerateSeries(format!("need at least 2 time points, got {n}")));
    }
    let mut rank_sums = vec![0.0; n];
    let mut ties = 0.0;
    for s in series {
        let s = s.as_ref();
        if s.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: s.len() });
        }
        for (acc, r) in rank_sums.iter_mut().zip(midranks(s)) {
            *acc += r;
        }
        ties += tie_correction(s);
    }
    Ok(w_from_rank_sums(&rank_sums, k, ties))
}

pub(crate) fn w_from_rank_sums(rank_sums: &[f64], k: usize, ties: f64) -> f64 {
    let n = rank_sums.len() as f64;
    let k = k as f64;
    let mean = k * (n + 1.0) / 2.0;
    let s: f64 = rank_sums.iter().map(|r| (r - mean) * (r - mean)).sum();
    let denom = k * k * (n * n * n - n) - k * ties;
    if denom <= 0.0 {
        return 0.0;
    }
    (12.0 * s / denom).clamp(0.0, 1.0)
}
