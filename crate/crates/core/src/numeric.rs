//! Small deterministic numerical helpers.

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Mean and unbiased variance.
pub fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = compensated_sum(values.iter().copied()) / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
    (mean, ss / (n - 1.0))
}
