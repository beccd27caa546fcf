//! ε-insensitive support vector regression with an RBF kernel.
//!
//! The dual is written over 2n variables in the usual way (one copy of each
//! sample with label +1 and one with label -1) and solved by SMO with
//! maximal-violating-pair selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvrParams {
    /// Box constraint.
    #[serde(rename = "C")]
    pub c: f64,
    /// Half-width of the insensitive tube, in target units.
    pub epsilon: f64,
    /// RBF kernel `exp(-γ‖a-b‖²)`.
    pub rbf_gamma: f64,
    /// KKT violation tolerance.
    pub tolerance: f64,
}

impl Default for SvrParams {
    fn default() -> Self {
        Self {
            c: 10.0,
            epsilon: 0.5,
            rbf_gamma: 0.05,
            tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrState {
    pub gamma: f64,
    pub support: Vec<Vec<f64>>,
    pub coef: Vec<f64>,
    pub bias: f64,
}

fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

pub fn fit_svr(params: &SvrParams, x: &[Vec<f64>], y: &[f64]) -> Result<SvrState> {
    if !(params.c > 0.0 && params.epsilon >= 0.0 && params.rbf_gamma > 0.0 && params.tolerance > 0.0) {
        return Err(Error::InvalidArgument("SVR hyperparameters must be positive".into()));
    }
    let n = x.len();
    let l = 2 * n;
    let c = params.c;
    let mut kmat = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = rbf(params.rbf_gamma, &x[i], &x[j]);
            kmat[i * n + j] = v;
            kmat[j * n + i] = v;
        }
    }
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let q = |a: usize, b: usize| sign(a) * sign(b) * kmat[(a % n) * n + b % n];

    let mut alpha = vec![0.0; l];
    let mut grad: Vec<f64> = (0..l)
        .map(|t| if t < n { params.epsilon - y[t] } else { params.epsilon + y[t - n] })
        .collect();
    let is_up = |t: usize, a: f64| if sign(t) > 0.0 { a < c } else { a > 0.0 };
    let is_low = |t: usize, a: f64| if sign(t) > 0.0 { a > 0.0 } else { a < c };

    let max_iter = (100 * l).max(10_000_000);
    let mut converged = false;
    for _ in 0..max_iter {
        let mut i = usize::MAX;
        let mut j = usize::MAX;
        let mut g_max = f64::NEG_INFINITY;
        let mut g_min = f64::INFINITY;
        for t in 0..l {
            let v = -sign(t) * grad[t];
            if is_up(t, alpha[t]) && v > g_max {
                g_max = v;
                i = t;
            }
            if is_low(t, alpha[t]) && v < g_min {
                g_min = v;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || g_max - g_min < params.tolerance {
            converged = true;
            break;
        }

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qii = q(i, i);
        let qjj = q(j, j);
        let qij = q(i, j);
        if sign(i) != sign(j) {
            let quad = (qii + qjj + 2.0 * qij).max(1e-12);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (qii + qjj - 2.0 * qij).max(1e-12);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for (t, g) in grad.iter_mut().enumerate() {
            *g += q(t, i) * di + q(t, j) * dj;
        }
    }
    if !converged {
        return Err(Error::NonConvergence("SVR SMO solver".into()));
    }

    // bias from free variables, else midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free_sum, mut free_n) = (0.0, 0usize);
    for t in 0..l {
        let yg = sign(t) * grad[t];
        if alpha[t] >= c {
            if sign(t) < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if sign(t) > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free_sum += yg;
            free_n += 1;
        }
    }
    let rho = if free_n > 0 { free_sum / free_n as f64 } else { 0.5 * (ub + lb) };

    let mut support = Vec::new();
    let mut coef = Vec::new();
    for k in 0..n {
        let b = alpha[k] - alpha[k + n];
        if b != 0.0 {
            support.push(x[k].clone());
            coef.push(b);
        }
    }
    Ok(SvrState {
        gamma: params.rbf_gamma,
        support,
        coef,
        bias: -rho,
    })
}

impl SvrState {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(s, b)| b * rbf(self.gamma, s, row))
            .sum::<f64>()
            + self.bias
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_a_smooth_curve_within_the_tube() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 10.0 - 2.0]).collect();
        let y: Vec<f64> = x.iter().map(|r| (1.5 * r[0]).sin() * 3.0 + 10.0).collect();
        let params = SvrParams { c: 100.0, epsilon: 0.1, rbf_gamma: 1.0, ..SvrParams::default() };
        let m = fit_svr(&params, &x, &y).unwrap();
        for (r, t) in x.iter().zip(&y) {
            assert!((m.predict(r) - t).abs() < 0.1 + 0.05, "{} vs {t}", m.predict(r));
        }
    }

    #[test]
    fn dual_stays_feasible() {
        let x: Vec<Vec<f64>> = (0..25).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.91).cos()]).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] * 4.0 - r[1]).collect();
        let params = SvrParams { c: 1.0, ..SvrParams::default() };
        let m = fit_svr(&params, &x, &y).unwrap();
        assert!(m.coef.iter().all(|b| b.abs() <= 1.0 + 1e-12));
        assert!(m.coef.iter().sum::<f64>().abs() < 1e-9);
    }
}
