//! Small numeric helpers: log-space reductions, compensated summation and
//! sample statistics.

/// Stable `ln Σ exp(x_i)`. Returns `-inf` for an empty or all `-inf` input.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + neumaier(xs.iter().map(|&x| (x - max).exp())).ln()
}

/// Neumaier-compensated sum.
pub fn neumaier(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Mean and population variance (divide by `n`).
pub fn mean_and_population_variance(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = neumaier(xs.iter().copied()) / n;
    let var = neumaier(xs.iter().map(|&x| (x - mean) * (x - mean))) / n;
    (mean, var)
}

/// Mean and the standard error of the mean (unbiased sample variance).
/// A single observation has standard error 0.
pub fn mean_and_std_error(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = neumaier(xs.iter().copied()) / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss = neumaier(xs.iter().map(|&x| (x - mean) * (x - mean)));
    (mean, (ss / (n - 1.0) / n).sqrt())
}

/// Unbiased sample variance; 0 for fewer than two observations.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = neumaier(xs.iter().copied()) / n;
    neumaier(xs.iter().map(|&x| (x - mean) * (x - mean))) / (n - 1.0)
}

/// Lower median: element `(n-1)/2` of the sorted values. NaNs are ignored.
pub fn lower_median(xs: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = xs.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    let v: Vec<f64> = xs.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        None
    } else {
        Some(neumaier(v.iter().copied()) / v.len() as f64)
    }
}
