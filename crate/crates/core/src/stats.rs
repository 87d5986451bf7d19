//! Summary statistics and the Kolmogorov-Smirnov test.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    if xs.len() < 2 {
        return 0.0;
    }
    let (mx, my) = (mean(xs), mean(ys));
    xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Covariance matrix of the columns.
pub fn covariance_matrix(columns: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = columns.len();
    let mut out = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i..k {
            let c = covariance(&columns[i], &columns[j]);
            out[i][j] = c;
            out[j][i] = c;
        }
    }
    out
}

pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    covariance(xs, ys) / (variance(xs) * variance(ys)).sqrt()
}

pub fn mean_of_squares(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64
}

/// Linear-interpolation quantile of sorted data (type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Median and interquartile range; the IQR is absent for a single value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub iqr: Option<f64>,
}

pub fn median_iqr(xs: &[f64]) -> Spread {
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let median = quantile_sorted(&s, 0.5);
    let iqr = if s.len() > 1 {
        Some(quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25))
    } else {
        None
    };
    Spread { median, iqr }
}

pub fn normal_cdf(x: f64, var: f64) -> f64 {
    0.5 * erfc(-x / (2.0 * var).sqrt())
}

/// Asymptotic Kolmogorov distribution tail `P(K > lambda)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        let s: f64 = (1..=8)
            .map(|k| {
                let a = (2 * k - 1) as f64;
                (-a * a * pi2 / (8.0 * lambda * lambda)).exp()
            })
            .sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let mut s = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            s += if k % 2 == 1 { term } else { -term };
            if term < 1e-16 {
                break;
            }
        }
        (2.0 * s).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sided one-sample test against a continuous distribution function.
pub fn ks_test<F: Fn(f64) -> f64>(xs: &[f64], cdf: F) -> KsResult {
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in s.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let sq = n.sqrt();
    let p_value = kolmogorov_q((sq + 0.12 + 0.11 / sq) * d);
    KsResult { statistic: d, p_value }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replicate_stream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn kolmogorov_known_values() {
        // tabulated: Q(1.36) ~ 0.0495, Q(1.63) ~ 0.0098, Q(0.5) ~ 0.9639
        assert!((kolmogorov_q(1.36) - 0.0495).abs() < 5e-4);
        assert!((kolmogorov_q(1.63) - 0.0098).abs() < 3e-4);
        assert!((kolmogorov_q(0.5) - 0.9639).abs() < 5e-4);
        // both series agree at the switch point
        let a = kolmogorov_q(1.1799999);
        let b = kolmogorov_q(1.18);
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn ks_accepts_and_rejects() {
        let mut rng = replicate_stream(8, 0);
        let xs: Vec<f64> = (0..5000)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * 0.5f64.sqrt())
            .collect();
        assert!(ks_test(&xs, |x| normal_cdf(x, 0.5)).p_value > 0.01);
        assert!(ks_test(&xs, |x| normal_cdf(x, 1.0)).p_value < 0.01);
        let us: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
        assert!(ks_test(&us, |x| x.clamp(0.0, 1.0)).p_value > 0.01);
    }

    #[test]
    fn summaries() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert!((variance(&xs) - 5.0 / 3.0).abs() < 1e-15);
        let sp = median_iqr(&xs);
        assert_eq!(sp.median, 2.5);
        assert_eq!(sp.iqr, Some(1.5));
        assert_eq!(median_iqr(&[7.0]).iqr, None);
        let c = covariance_matrix(&[xs.to_vec(), xs.iter().map(|x| 2.0 * x).collect()]);
        assert!((c[0][1] - 10.0 / 3.0).abs() < 1e-12 && c[0][1] == c[1][0]);
        assert!((correlation(&xs, &[2.0, 4.0, 6.0, 8.0]) - 1.0).abs() < 1e-12);
    }
}
