//! Small numerical helpers shared across modules.

/// Overflow-safe logistic function.
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (divisor `n - 1`); `None` below two values.
pub fn sample_sd(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    Some((ss / (xs.len() as f64 - 1.0)).sqrt())
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Linearly interpolated quantile (the `h = (n - 1) p` rule). Reorders `xs`.
pub fn quantile_type7(xs: &mut [f64], p: f64) -> f64 {
    assert!(!xs.is_empty(), "quantile of empty slice");
    let h = (xs.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let (_, &mut lo_val, upper) = xs.select_nth_unstable_by(lo, f64::total_cmp);
    if frac == 0.0 || upper.is_empty() {
        return lo_val;
    }
    let hi_val = upper.iter().copied().fold(f64::INFINITY, f64::min);
    lo_val + frac * (hi_val - lo_val)
}

/// D'Agostino-Pearson omnibus normality test; returns `(K^2, p-value)`.
/// Needs at least 8 observations.
pub fn dagostino_pearson(xs: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len() as f64;
    if xs.len() < 8 {
        return None;
    }
    let m = mean(xs);
    let moment = |k: i32| xs.iter().map(|x| (x - m).powi(k)).sum::<f64>() / n;
    let m2 = moment(2);
    if m2 <= 0.0 {
        return None;
    }
    let skew = moment(3) / m2.powf(1.5);
    let kurt = moment(4) / (m2 * m2);

    // skewness statistic
    let y = skew * ((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0))).sqrt();
    let beta2 = 3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0)
        / ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
    let w2 = -1.0 + (2.0 * (beta2 - 1.0)).sqrt();
    let delta = 1.0 / (0.5 * w2.ln()).sqrt();
    let alpha = (2.0 / (w2 - 1.0)).sqrt();
    let y = if y == 0.0 { 1.0 } else { y };
    let z_skew = delta * ((y / alpha) + ((y / alpha).powi(2) + 1.0).sqrt()).ln();

    // kurtosis statistic
    let e = 3.0 * (n - 1.0) / (n + 1.0);
    let var_b2 = 24.0 * n * (n - 2.0) * (n - 3.0) / ((n + 1.0).powi(2) * (n + 3.0) * (n + 5.0));
    let x = (kurt - e) / var_b2.sqrt();
    let sqrt_beta1 = 6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0))
        * (6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0))).sqrt();
    let a = 6.0 + 8.0 / sqrt_beta1 * (2.0 / sqrt_beta1 + (1.0 + 4.0 / (sqrt_beta1 * sqrt_beta1)).sqrt());
    let term1 = 1.0 - 2.0 / (9.0 * a);
    let denom = 1.0 + x * (2.0 / (a - 4.0)).sqrt();
    let term2 = if denom == 0.0 {
        1.0
    } else {
        denom.signum() * ((1.0 - 2.0 / a) / denom.abs()).cbrt()
    };
    let z_kurt = (term1 - term2) / (2.0 / (9.0 * a)).sqrt();

    let k2 = z_skew * z_skew + z_kurt * z_kurt;
    Some((k2, (-k2 / 2.0).exp()))
}

/// One-sample Kolmogorov-Smirnov test against a continuous CDF; returns
/// `(D, asymptotic p-value)`.
pub fn ks_one_sample(sample: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let en = n.sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    (d, kolmogorov_q(lambda))
}

fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = sign * (-2.0 * jf * jf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expit_examples() {
        assert_eq!(expit(0.0), 0.5);
        assert!((expit(3f64.ln()) - 0.75).abs() < 1e-15);
        let big = expit(30.0);
        assert!(big < 1.0 && big > 1.0 - 1e-12);
        assert!(expit(-800.0) >= 0.0 && expit(800.0) == 1.0);
    }

    #[test]
    fn quantile_matches_linear_interpolation() {
        let mut xs = vec![5.0, 1.0, 4.0, 2.0, 3.0];
        assert_eq!(quantile_type7(&mut xs, 0.8), 4.2);
        let mut xs = vec![3.0, 1.0, 2.0];
        assert_eq!(quantile_type7(&mut xs, 0.5), 2.0);
        let mut xs = vec![7.0];
        assert_eq!(quantile_type7(&mut xs, 0.8), 7.0);
    }

    #[test]
    fn sd_examples() {
        assert_eq!(sample_sd(&[1.0]), None);
        assert!((sample_sd(&[1.0, 2.0, 3.0, 4.0]).unwrap() - 1.290_994_448_735_805_6).abs() < 1e-15);
    }

    #[test]
    fn normality_test_reference_values() {
        // reference K^2 and p computed with scipy.stats.normaltest
        let xs: Vec<f64> = (1..=30).map(|i| ((i * 37) % 31) as f64 + 0.1 * i as f64).collect();
        let (k2, p) = dagostino_pearson(&xs).unwrap();
        assert!((k2 - K2_REF).abs() < 1e-9, "k2 = {k2}");
        assert!((p - P_REF).abs() < 1e-9, "p = {p}");
    }

    const K2_REF: f64 = 7.073_385_681_224_21;
    const P_REF: f64 = 0.029_109_437_618_062_315;

    #[test]
    fn ks_detects_wrong_distribution() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let (d, p) = ks_one_sample(&xs, |x| x.clamp(0.0, 1.0));
        assert!(d < 0.001 && p > 0.99);
        let (_, p) = ks_one_sample(&xs, |x| (x * x).clamp(0.0, 1.0));
        assert!(p < 1e-6);
    }
}
