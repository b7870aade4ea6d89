//! Small-sample statistics used by diagnostics and convergence rules.

/// Arithmetic mean. Returns NaN on empty input.
pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased sample variance (n - 1 denominator).
pub fn variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

/// Sample standard deviation.
pub fn sd(v: &[f64]) -> f64 {
    variance(v).sqrt()
}

/// Standard error of the mean.
pub fn se_mean(v: &[f64]) -> f64 {
    sd(v) / (v.len() as f64).sqrt()
}

/// Median (copies and sorts).
pub fn median(v: &[f64]) -> f64 {
    quantile(v, 0.5)
}

/// Linear-interpolation quantile (type 7), `p` in [0, 1].
pub fn quantile(v: &[f64], p: f64) -> f64 {
    assert!(!v.is_empty(), "quantile of empty slice");
    assert!((0.0..=1.0).contains(&p), "quantile level must be in [0, 1]");
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("NaN in quantile input"));
    let h = p * (s.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

/// Least-squares slope of `y` against indices 0..len, with the residual
/// standard deviation. Used by ELBO convergence checks.
pub fn ls_slope(y: &[f64]) -> (f64, f64) {
    let n = y.len();
    assert!(n >= 3, "slope needs at least 3 points");
    let nf = n as f64;
    let xbar = (nf - 1.0) / 2.0;
    let ybar = mean(y);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let dx = i as f64 - xbar;
        sxy += dx * (yi - ybar);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let mut ss_res = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let fit = intercept + slope * i as f64;
        ss_res += (yi - fit) * (yi - fit);
    }
    let resid_sd = (ss_res / (nf - 2.0)).sqrt();
    (slope, resid_sd)
}

/// Two-sided Kolmogorov-Smirnov statistic of `sample` against a CDF.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("NaN in KS input"));
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in s.iter().enumerate() {
        let f = cdf(x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    d
}
