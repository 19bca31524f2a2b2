//! Goodness-of-fit tests and summaries used by the experiment harnesses.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// `Q_KS(lambda) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2)`
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

fn ks_p(d: f64, ne: f64) -> f64 {
    let s = ne.sqrt();
    kolmogorov_q((s + 0.12 + 0.11 / s) * d)
}

/// One-sample Kolmogorov-Smirnov test against a continuous `cdf`.
pub fn ks_one_sample(sample: &[f64], cdf: impl Fn(f64) -> f64) -> TestResult {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let f = cdf(*x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    TestResult { statistic: d, p_value: ks_p(d, n) }
}

/// Two-sample Kolmogorov-Smirnov test; ties are handled by comparing the
/// empirical CDFs only after each distinct value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> TestResult {
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = xs[i].min(ys[j]);
        while i < n && xs[i] <= v {
            i += 1;
        }
        while j < m && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    TestResult { statistic: d, p_value: ks_p(d, ne) }
}

/// Pearson chi-square of observed counts against expected counts.
pub fn chi_square_gof(observed: &[usize], expected: &[f64]) -> TestResult {
    let stat: f64 =
        observed.iter().zip(expected).filter(|(_, e)| **e > 0.0).map(|(o, e)| (*o as f64 - e).powi(2) / e).sum();
    let dof = expected.iter().filter(|e| **e > 0.0).count().saturating_sub(1).max(1);
    TestResult { statistic: stat, p_value: chi_square_sf(stat, dof as f64) }
}

/// Chi-square test of homogeneity between two binned samples.
pub fn chi_square_two_sample(a: &[usize], b: &[usize]) -> TestResult {
    let (na, nb) = (a.iter().sum::<usize>() as f64, b.iter().sum::<usize>() as f64);
    let total = na + nb;
    let mut stat = 0.0;
    let mut bins = 0usize;
    for (x, y) in a.iter().zip(b) {
        let col = (*x + *y) as f64;
        if col == 0.0 {
            continue;
        }
        bins += 1;
        let (ea, eb) = (col * na / total, col * nb / total);
        stat += (*x as f64 - ea).powi(2) / ea + (*y as f64 - eb).powi(2) / eb;
    }
    let dof = bins.saturating_sub(1).max(1);
    TestResult { statistic: stat, p_value: chi_square_sf(stat, dof as f64) }
}

fn chi_square_sf(x: f64, dof: f64) -> f64 {
    1.0 - ChiSquared::new(dof).expect("positive dof").cdf(x)
}

pub fn normal_cdf(x: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return if x < 0.0 { 0.0 } else { 1.0 };
    }
    0.5 * statrs::function::erf::erfc(-x / (sigma * std::f64::consts::SQRT_2))
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let pos = q * (xs.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    xs[lo] + (pos - lo as f64) * (xs[hi] - xs[lo])
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = mean(xs);
    if xs.len() < 2 {
        return (m, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

pub fn summarize(xs: &[f64]) -> Summary {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let (m, se) = mean_se(xs);
    Summary {
        n: xs.len(),
        mean: m,
        sd: se * (xs.len() as f64).sqrt(),
        min: v.first().copied().unwrap_or(f64::NAN),
        q25: quantile_sorted(&v, 0.25),
        median: quantile_sorted(&v, 0.5),
        q75: quantile_sorted(&v, 0.75),
        max: v.last().copied().unwrap_or(f64::NAN),
    }
}
