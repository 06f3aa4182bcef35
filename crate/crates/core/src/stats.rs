//! Normal-reference summaries used by the Monte Carlo harness.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

fn std_normal() -> Normal {
    Normal::standard()
}

pub fn normal_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

pub fn normal_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

/// `P(|Z| ≥ |z|)` without cancellation in the tails.
pub fn two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

/// Sample mean and the variance with divisor `M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub var: f64,
}

pub fn moments(x: &[f64]) -> Result<Moments> {
    if x.is_empty() {
        return Err(Error::param("no samples"));
    }
    let m = x.len() as f64;
    let mean = x.iter().sum::<f64>() / m;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
    Ok(Moments { mean, var })
}

/// Kolmogorov survival function `P(K > λ) = 2 Σ_{k≥1} (-1)^{k-1} exp(-2k²λ²)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let t = (-2.0 * kf * kf * lambda * lambda).exp();
        s += if k % 2 == 1 { t } else { -t };
        if t < 1e-17 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample KS statistic against the standard normal and its asymptotic
/// p-value (with the small-sample scaling `√n + 0.12 + 0.11/√n`).
pub fn ks_normal(x: &[f64]) -> Result<(f64, f64)> {
    if x.is_empty() {
        return Err(Error::param("no samples"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("non-finite sample"));
    }
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d = 0.0f64;
    for (i, &v) in s.iter().enumerate() {
        let f = normal_cdf(v);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sn = n.sqrt();
    Ok((d, kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d)))
}

/// Half-width of the level-`alpha` KS band for `n` samples.
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    let sn = (n as f64).sqrt();
    let (mut lo, mut hi) = (0.2, 5.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_sf(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi) / (sn + 0.12 + 0.11 / sn)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

/// Equal-width bins on `[lo, hi]`; values outside are counted in the edge bins.
pub fn histogram(x: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Vec<Bin>> {
    if bins == 0 || !(lo < hi) {
        return Err(Error::param(format!("bad histogram layout: {bins} bins on [{lo}, {hi}]")));
    }
    let w = (hi - lo) / bins as f64;
    let mut out: Vec<Bin> = (0..bins)
        .map(|i| Bin { left: lo + w * i as f64, right: if i + 1 == bins { hi } else { lo + w * (i + 1) as f64 }, count: 0 })
        .collect();
    for &v in x {
        let k = if v.is_nan() { continue } else { ((v - lo) / w).floor() };
        let k = if k < 0.0 { 0 } else { (k as usize).min(bins - 1) };
        out[k].count += 1;
    }
    Ok(out)
}

/// `(Φ^{-1}((i - 1/2)/M), x_(i))` pairs.
pub fn qq_pairs(x: &[f64]) -> Vec<(f64, f64)> {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() as f64;
    s.iter().enumerate().map(|(i, &v)| (normal_quantile((i as f64 + 0.5) / m), v)).collect()
}

pub fn binomial_se(p: f64, m: usize) -> f64 {
    if m == 0 {
        return f64::NAN;
    }
    (p * (1.0 - p) / m as f64).sqrt()
}
