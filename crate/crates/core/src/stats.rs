//! Small statistics helpers shared by the derivative and connectome code.

/// Variance floor below which a series is treated as constant.
pub const DEGENERATE_VARIANCE: f64 = 1e-24;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn std_pop(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len().max(1) as f64).sqrt()
}

/// Centre a series and scale it to unit Euclidean norm, so that the Pearson
/// correlation of two series is the dot product of their normalized forms.
/// Constant series map to all zeros (correlation 0 with everything).
pub fn unit_centered(xs: &[f64]) -> Vec<f64> {
    let m = mean(xs);
    let mut out: Vec<f64> = xs.iter().map(|x| x - m).collect();
    let ss: f64 = out.iter().map(|v| v * v).sum();
    if ss / (xs.len().max(1) as f64) < DEGENERATE_VARIANCE {
        out.iter_mut().for_each(|v| *v = 0.0);
    } else {
        let inv = 1.0 / ss.sqrt();
        out.iter_mut().for_each(|v| *v *= inv);
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pearson correlation; 0 when either series is constant. Clamped to [-1, 1].
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    dot(&unit_centered(a), &unit_centered(b)).clamp(-1.0, 1.0)
}

/// Midranks (1-based) of `xs`; tied values share the mean of their ranks.
pub fn midranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && xs[order[j]] == xs[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) hold ranks i+1..=j
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Sum of `t^3 - t` over tie groups, the Kendall/Friedman tie correction.
pub fn tie_correction(xs: &[f64]) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut total = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        total += t * t * t - t;
        i = j;
    }
    total
}
