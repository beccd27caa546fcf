//! Generalized regression neural network: a Gaussian-kernel weighted mean
//! of the training targets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrnnParams {
    /// Kernel bandwidth in standardized feature units.
    pub spread: f64,
}

impl Default for GrnnParams {
    fn default() -> Self {
        Self { spread: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrnnState {
    pub spread: f64,
    pub x_train: Vec<Vec<f64>>,
    pub y_train: Vec<f64>,
}

pub fn fit_grnn(params: &GrnnParams, x: &[Vec<f64>], y: &[f64]) -> Result<GrnnState> {
    if !(params.spread > 0.0 && params.spread.is_finite()) {
        return Err(Error::InvalidArgument("GRNN spread must be positive".into()));
    }
    Ok(GrnnState {
        spread: params.spread,
        x_train: x.to_vec(),
        y_train: y.to_vec(),
    })
}

impl GrnnState {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let s2 = 2.0 * self.spread * self.spread;
        let logw: Vec<f64> = self
            .x_train
            .iter()
            .map(|xi| -xi.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / s2)
            .collect();
        let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // offsets from the first target keep constant targets exact
        let y0 = self.y_train[0];
        let (mut num, mut den) = (0.0, 0.0);
        for (lw, yi) in logw.iter().zip(&self.y_train) {
            let w = (lw - top).exp();
            num += w * (yi - y0);
            den += w;
        }
        y0 + num / den
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> (Vec<Vec<f64>>, Vec<f64>) {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64 * 0.61).sin(), i as f64 / 10.0]).collect();
        let y = x.iter().map(|r| 12.0 + 5.0 * r[0] - r[1]).collect();
        (x, y)
    }

    #[test]
    fn tiny_spread_reproduces_training_targets() {
        let (x, y) = data();
        let m = fit_grnn(&GrnnParams { spread: 1e-4 }, &x, &y).unwrap();
        for (r, t) in x.iter().zip(&y) {
            assert!((m.predict(r) - t).abs() < 1e-12);
        }
    }

    #[test]
    fn predictions_stay_in_target_range() {
        let (x, y) = data();
        let m = fit_grnn(&GrnnParams { spread: 0.7 }, &x, &y).unwrap();
        let (lo, hi) = y.iter().fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
        for k in 0..50 {
            let p = m.predict(&[k as f64 * 0.3 - 7.0, 1.0 - k as f64 * 0.1]);
            assert!(p >= lo && p <= hi);
        }
    }
}
