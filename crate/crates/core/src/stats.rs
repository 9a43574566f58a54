//! Small statistical toolkit: moments, normal distribution, Kolmogorov-Smirnov
//! tests, autocorrelation and least squares.

use std::f64::consts::{PI, SQRT_2};

use statrs::function::erf::{erfc, erfc_inv};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two points.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Standard error of the sample mean.
pub fn std_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    if xs.len() < 2 {
        return 0.0;
    }
    let (mx, my) = (mean(xs), mean(ys));
    xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Pearson correlation, `None` when either side is constant.
pub fn correlation(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let (vx, vy) = (variance(xs), variance(ys));
    if vx <= 0.0 || vy <= 0.0 {
        return None;
    }
    Some(covariance(xs, ys) / (vx * vy).sqrt())
}

/// Standard normal CDF via the complementary error function (rational
/// approximations with relative error near machine precision).
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile level must be in (0, 1)");
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// Two-sided normal critical value for confidence level `confidence`.
pub fn z_critical(confidence: f64) -> f64 {
    normal_quantile(0.5 + confidence / 2.0)
}

/// Survival function of the Kolmogorov distribution, P(K > x).
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.0 {
        // Small-x series converges fast here.
        let mut cdf = 0.0;
        for k in 1..=50 {
            let j = (2 * k - 1) as f64;
            cdf += (-j * j * PI * PI / (8.0 * x * x)).exp();
        }
        return 1.0 - (2.0 * PI).sqrt() / x * cdf;
    }
    let mut sf = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        sf += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sf).clamp(0.0, 1.0)
}

/// x with P(K > x) = alpha.
pub fn kolmogorov_isf(alpha: f64) -> f64 {
    let (mut lo, mut hi) = (0.2, 5.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_sf(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Stephens' finite-sample scaling of the KS statistic.
fn ks_scale(n_eff: f64) -> f64 {
    let s = n_eff.sqrt();
    s + 0.12 + 0.11 / s
}

/// Critical KS distance at level `alpha` for effective sample size `n_eff`.
pub fn ks_critical(n_eff: f64, alpha: f64) -> f64 {
    kolmogorov_isf(alpha) / ks_scale(n_eff)
}

pub fn ks_p_value(distance: f64, n_eff: f64) -> f64 {
    kolmogorov_sf(distance * ks_scale(n_eff))
}

/// One-sample KS distance of `xs` against a continuous CDF.
pub fn ks_distance<F: Fn(f64) -> f64>(xs: &[f64], cdf: F) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        // Ties move the empirical CDF in one jump.
        let x = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == x {
            j += 1;
        }
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max(j as f64 / n - f);
        i = j;
    }
    d
}

/// Two-sample KS distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

pub fn two_sample_n_eff(na: usize, nb: usize) -> f64 {
    (na as f64 * nb as f64) / (na + nb) as f64
}

/// Sample autocorrelation at `lag`; `None` for a constant series.
pub fn autocorrelation(xs: &[f64], lag: usize) -> Option<f64> {
    let n = xs.len();
    if lag >= n {
        return None;
    }
    let m = mean(xs);
    let denom: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    if denom <= 0.0 {
        return None;
    }
    let num: f64 = (0..n - lag).map(|i| (xs[i] - m) * (xs[i + lag] - m)).sum();
    Some(num / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub se_slope: f64,
    pub se_intercept: f64,
}

/// Ordinary least squares `y = intercept + slope * x` with residual-based
/// standard errors.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2);
    let n = xs.len() as f64;
    let (mx, my) = (mean(xs), mean(ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let (se_slope, se_intercept) = if xs.len() > 2 {
        let rss: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| {
                let r = y - intercept - slope * x;
                r * r
            })
            .sum();
        let s2 = rss / (n - 2.0);
        ((s2 / sxx).sqrt(), (s2 * (1.0 / n + mx * mx / sxx)).sqrt())
    } else {
        (0.0, 0.0)
    };
    LinearFit {
        slope,
        intercept,
        se_slope,
        se_intercept,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_cdf_reference_values() {
        // Reference values from high-precision tables.
        let cases = [
            (0.0, 0.5),
            (1.0, 0.841_344_746_068_542_9),
            (-1.96, 0.024_997_895_148_220_435),
            (2.5758293035489, 0.995),
            (-5.0, 2.866_515_718_791_939e-7),
            (3.0, 0.998_650_101_968_369_9),
        ];
        for (x, want) in cases {
            assert!((normal_cdf(x) - want).abs() < 1e-10, "x={x}");
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        for p in [0.001, 0.01, 0.3, 0.5, 0.9, 0.995] {
            let err = (normal_cdf(normal_quantile(p)) - p).abs();
            assert!(err < 1e-9 * p, "p={p} err={err}");
        }
        assert!((z_critical(0.99) - 2.575_829_303_548_901).abs() < 1e-9);
    }

    #[test]
    fn kolmogorov_known_quantiles() {
        // Classical asymptotic critical values.
        assert!((kolmogorov_isf(0.05) - 1.358_098_8).abs() < 1e-6);
        assert!((kolmogorov_isf(0.01) - 1.627_623_1).abs() < 1e-6);
        // Both series branches agree at the switch point.
        let a = kolmogorov_sf(1.0 - 1e-12);
        let b = kolmogorov_sf(1.0);
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn ks_distance_hand_computed() {
        // Uniform CDF on [0,1], points 0.1, 0.5, 0.9:
        // max(0.1, 1/3-0.1, 0.5-1/3, 2/3-0.5, 0.9-2/3, 1-0.9) = 0.2333...
        let d = ks_distance(&[0.5, 0.1, 0.9], |x| x.clamp(0.0, 1.0));
        assert!((d - (0.9 - 2.0 / 3.0)).abs() < 1e-15);
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[3.0, 4.0]), 1.0);
        assert!((ks_two_sample(&[1.0, 3.0], &[2.0, 4.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn fit_recovers_exact_line() {
        let xs = [1.0, 2.0, 5.0, 10.0, 20.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
        let fit = linear_fit(&xs, &ys);
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!(fit.intercept.abs() < 1e-12);
        assert!(fit.se_slope < 1e-12);
    }

    #[test]
    fn degenerate_autocorrelation() {
        assert_eq!(autocorrelation(&[3.0; 10], 1), None);
        let alt = [1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        assert!(autocorrelation(&alt, 1).unwrap() < -0.8);
        assert_eq!(correlation(&[1.0, 1.0], &[2.0, 3.0]), None);
    }
}
