//! One-hidden-layer perceptron (tanh hidden units, linear output) trained
//! on mean squared error by full-batch gradient descent with momentum.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

const MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpParams {
    pub hidden_units: usize,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden_units: 10,
            learning_rate: 0.05,
            epochs: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpState {
    /// Hidden weights, one row per hidden unit; the last entry is the bias.
    pub w1: Vec<Vec<f64>>,
    /// Output weights; the last entry is the bias.
    pub w2: Vec<f64>,
    /// Targets are learned standardized and mapped back with these.
    pub y_mean: f64,
    pub y_sd: f64,
}

impl MlpState {
    fn hidden(&self, row: &[f64]) -> Vec<f64> {
        self.w1
            .iter()
            .map(|w| {
                let (b, ws) = w.split_last().expect("hidden weights carry a bias");
                (ws.iter().zip(row).map(|(a, x)| a * x).sum::<f64>() + b).tanh()
            })
            .collect()
    }

    fn raw(&self, h: &[f64]) -> f64 {
        let (b, ws) = self.w2.split_last().expect("output weights carry a bias");
        ws.iter().zip(h).map(|(a, x)| a * x).sum::<f64>() + b
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        if self.y_sd == 0.0 {
            return self.y_mean;
        }
        self.y_mean + self.y_sd * self.raw(&self.hidden(row))
    }
}

pub fn fit_mlp(params: &MlpParams, x: &[Vec<f64>], y: &[f64], seed: u64) -> Result<MlpState> {
    if params.hidden_units == 0 || params.epochs == 0 || !(params.learning_rate > 0.0) {
        return Err(Error::InvalidArgument("MLP hyperparameters must be positive".into()));
    }
    let n = x.len();
    let d = x.first().map_or(0, Vec::len);
    let h = params.hidden_units;
    let y_mean = stats::mean(y);
    let y_sd = stats::std_dev(y);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n1 = Normal::new(0.0, (1.0 / (d.max(1)) as f64).sqrt()).expect("valid normal");
    let n2 = Normal::new(0.0, (1.0 / h as f64).sqrt()).expect("valid normal");
    let mut state = MlpState {
        w1: (0..h)
            .map(|_| (0..d).map(|_| n1.sample(&mut rng)).chain(std::iter::once(0.0)).collect())
            .collect(),
        w2: (0..h).map(|_| n2.sample(&mut rng)).chain(std::iter::once(0.0)).collect(),
        y_mean,
        y_sd,
    };
    if y_sd == 0.0 {
        return Ok(state);
    }
    let targets: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_sd).collect();

    let mut v1 = vec![vec![0.0; d + 1]; h];
    let mut v2 = vec![0.0; h + 1];
    for _ in 0..params.epochs {
        let mut g1 = vec![vec![0.0; d + 1]; h];
        let mut g2 = vec![0.0; h + 1];
        let mut loss = 0.0;
        for (row, t) in x.iter().zip(&targets) {
            let hid = state.hidden(row);
            let err = state.raw(&hid) - t;
            loss += err * err;
            let scale = 2.0 * err / n as f64;
            for k in 0..h {
                g2[k] += scale * hid[k];
                let back = scale * state.w2[k] * (1.0 - hid[k] * hid[k]);
                for (g, xi) in g1[k].iter_mut().zip(row) {
                    *g += back * xi;
                }
                g1[k][d] += back;
            }
            g2[h] += scale;
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite("MLP training loss".into()));
        }
        for k in 0..h {
            for j in 0..=d {
                v1[k][j] = MOMENTUM * v1[k][j] - params.learning_rate * g1[k][j];
                state.w1[k][j] += v1[k][j];
            }
        }
        for k in 0..=h {
            v2[k] = MOMENTUM * v2[k] - params.learning_rate * g2[k];
            state.w2[k] += v2[k];
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learns_a_smooth_function() {
        let x: Vec<Vec<f64>> = (0..60).map(|i| vec![i as f64 / 30.0 - 1.0]).collect();
        let y: Vec<f64> = x.iter().map(|r| 15.0 + 4.0 * (2.0 * r[0]).sin()).collect();
        let m = fit_mlp(&MlpParams::default(), &x, &y, 1).unwrap();
        let mse = x.iter().zip(&y).map(|(r, t)| (m.predict(r) - t).powi(2)).sum::<f64>() / 60.0;
        assert!(mse < 0.05 * stats::variance(&y), "mse {mse}");
    }

    #[test]
    fn same_seed_same_weights() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 10.0, (i % 3) as f64]).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] + r[1]).collect();
        let p = MlpParams { epochs: 50, ..MlpParams::default() };
        assert_eq!(fit_mlp(&p, &x, &y, 9).unwrap(), fit_mlp(&p, &x, &y, 9).unwrap());
    }
}
