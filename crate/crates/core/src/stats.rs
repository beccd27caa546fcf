//! Descriptive statistics shared by the feature extractor, the rankers and
//! the models. Variances use the population (1/n) convention everywhere.

use serde::{Deserialize, Serialize};

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population variance, two-pass.
pub fn variance(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

pub fn std_dev(x: &[f64]) -> f64 {
    variance(x).sqrt()
}

/// Linear-interpolation quantile (the "type 7" rule: h = (n-1)p).
pub fn quantile(x: &[f64], p: f64) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    let mut buf = x.to_vec();
    quantile_in_place(&mut buf, p)
}

/// Same as [`quantile`] but reorders `buf` instead of copying.
pub fn quantile_in_place(buf: &mut [f64], p: f64) -> f64 {
    let n = buf.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let (_, lo_val, upper) = buf.select_nth_unstable_by(lo, f64::total_cmp);
    let lo_val = *lo_val;
    if frac == 0.0 || upper.is_empty() {
        return lo_val;
    }
    let hi_val = upper.iter().copied().fold(f64::INFINITY, f64::min);
    lo_val + frac * (hi_val - lo_val)
}

pub fn median(x: &[f64]) -> f64 {
    quantile(x, 0.5)
}

/// Mean absolute deviation about the mean.
pub fn mean_abs_dev(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).abs()).sum::<f64>() / x.len() as f64
}

/// Median absolute deviation about the median (unscaled).
pub fn median_abs_dev(x: &[f64]) -> f64 {
    let med = median(x);
    let dev: Vec<f64> = x.iter().map(|v| (v - med).abs()).collect();
    median(&dev)
}

/// Biased (population) skewness; 0 for a constant input.
pub fn skewness(x: &[f64]) -> f64 {
    let m = mean(x);
    let var = variance(x);
    if var <= 0.0 {
        return 0.0;
    }
    let m3 = x.iter().map(|v| (v - m).powi(3)).sum::<f64>() / x.len() as f64;
    m3 / var.powf(1.5)
}

/// Biased (population) kurtosis, not excess: a normal sample gives about 3.
/// A constant input gives 0.
pub fn kurtosis(x: &[f64]) -> f64 {
    let m = mean(x);
    let var = variance(x);
    if var <= 0.0 {
        return 0.0;
    }
    let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / x.len() as f64;
    m4 / (var * var)
}

/// Shannon entropy in bits of an equal-width histogram spanning the range of `x`.
pub fn histogram_entropy(x: &[f64], bins: usize) -> f64 {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = hi - lo;
    if !(range > 0.0) || bins == 0 {
        return 0.0;
    }
    let mut counts = vec![0usize; bins];
    for &v in x {
        let b = (((v - lo) / range) * bins as f64) as usize;
        counts[b.min(bins - 1)] += 1;
    }
    let n = x.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Per-column z-scoring learned on one set of rows and applied to others.
///
/// Columns with zero spread keep a unit scale so they map to zero rather
/// than NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let mut mean = vec![0.0; d];
        let mut sd = vec![1.0; d];
        let mut col = Vec::with_capacity(rows.len());
        for j in 0..d {
            col.clear();
            col.extend(rows.iter().map(|r| r[j]));
            mean[j] = self::mean(&col);
            let s = std_dev(&col);
            sd[j] = if s > 1e-12 * mean[j].abs().max(1.0) { s } else { 1.0 };
        }
        Self { mean, sd }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn apply(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.apply_row(r)).collect()
    }
}
