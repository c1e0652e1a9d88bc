//! Order statistics over seeds.

/// Median; the mean of the two middle values for even lengths. `NaN` for an
/// empty slice.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median absolute deviation from the median.
pub fn mad(values: &[f64]) -> f64 {
    let med = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    median(&dev)
}

/// True when each median exceeds its predecessor by at most the larger of
/// the two neighbouring MADs.
pub fn nonincreasing_within_mad(medians: &[f64], mads: &[f64]) -> bool {
    medians
        .windows(2)
        .zip(mads.windows(2))
        .all(|(m, d)| m[1] <= m[0] + d[0].max(d[1]))
}
