//! Kernel two-sample statistic used as a sample-quality proxy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gaussian kernel width `σ` in `exp(−‖a − b‖² / 2σ²)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelBandwidth {
    /// Median pairwise distance over the pooled samples.
    #[default]
    Auto,
    Fixed(f64),
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median of the pairwise Euclidean distances between distinct rows.
pub fn median_pairwise_distance(rows: &[&[f64]]) -> f64 {
    let mut d = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(sq_dist(rows[i], rows[j]).sqrt());
        }
    }
    if d.is_empty() {
        return f64::NAN;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len() / 2;
    if d.len() % 2 == 1 {
        d[m]
    } else {
        0.5 * (d[m - 1] + d[m])
    }
}

fn resolve(a: &[&[f64]], b: &[&[f64]], bandwidth: KernelBandwidth) -> Result<f64> {
    let sigma = match bandwidth {
        KernelBandwidth::Fixed(s) => s,
        KernelBandwidth::Auto => {
            let pooled: Vec<&[f64]> = a.iter().chain(b).copied().collect();
            median_pairwise_distance(&pooled)
        }
    };
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("kernel bandwidth must be positive, got {sigma}")));
    }
    Ok(sigma)
}

/// Unbiased estimate of the squared maximum mean discrepancy.
///
/// With equal sample sizes the paired U-statistic is used, which drops the
/// `i = j` terms from all three kernel sums; it is exactly zero when `a == b`.
/// Otherwise the cross term averages over all `m·n` pairs.
pub fn mmd_statistic(a: &[&[f64]], b: &[&[f64]], bandwidth: KernelBandwidth) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "MMD needs at least 2 samples per side, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let dim = a[0].len();
    if a.iter().chain(b).any(|r| r.len() != dim) {
        return Err(Error::InvalidArgument("MMD samples differ in dimension".into()));
    }
    let sigma = resolve(a, b, bandwidth)?;
    let g = -0.5 / (sigma * sigma);
    let k = |x: &[f64], y: &[f64]| (g * sq_dist(x, y)).exp();
    let within = |s: &[&[f64]]| {
        let mut acc = 0.0;
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                acc += k(s[i], s[j]);
            }
        }
        2.0 * acc / (s.len() * (s.len() - 1)) as f64
    };
    let (m, n) = (a.len(), b.len());
    let mut cross = 0.0;
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            if m != n || i != j {
                cross += k(x, y);
            }
        }
    }
    let pairs = if m == n { m * (m - 1) } else { m * n };
    Ok(within(a) + within(b) - 2.0 * cross / pairs as f64)
}

/// Convenience form over owned rows.
pub fn mmd_rows(a: &[Vec<f64>], b: &[Vec<f64>], bandwidth: KernelBandwidth) -> Result<f64> {
    let ra: Vec<&[f64]> = a.iter().map(Vec::as_slice).collect();
    let rb: Vec<&[f64]> = b.iter().map(Vec::as_slice).collect();
    mmd_statistic(&ra, &rb, bandwidth)
}
