//! Small statistics helpers shared by the experiments.

/// Arithmetic mean in index order. NaN for an empty slice.
pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

pub fn std_dev(x: &[f64]) -> f64 {
    variance(x).sqrt()
}

/// Standard error of the mean.
pub fn std_err(x: &[f64]) -> f64 {
    (variance(x) / x.len() as f64).sqrt()
}

/// Least-squares slope of log(y) against log(x).
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_slope(&lx, &ly)
}

pub fn linear_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let mx = mean(x);
    let my = mean(y);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Jackknife standard error of `g(mean(x))`.
pub fn jackknife_of_mean<G: Fn(f64) -> f64>(x: &[f64], g: G) -> f64 {
    let n = x.len() as f64;
    let total: f64 = x.iter().sum();
    let loo: Vec<f64> = x.iter().map(|v| g((total - v) / (n - 1.0))).collect();
    let m = mean(&loo);
    ((n - 1.0) / n * loo.iter().map(|v| (v - m) * (v - m)).sum::<f64>()).sqrt()
}

/// Standard error of sqrt(mean(x)) by the delta method; x are squared errors.
pub fn rms_std_err(sq: &[f64]) -> f64 {
    let m = mean(sq);
    if m <= 0.0 {
        return 0.0;
    }
    std_err(sq) / (2.0 * m.sqrt())
}
