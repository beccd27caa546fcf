use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{standardized, FeatureRanking, RankingMethod};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

const GRID_LEN: usize = 100;
const GRID_RATIO: f64 = 1e-4;
const CV_FOLDS: usize = 5;
const MAX_SWEEPS: usize = 100_000;
const TOL: f64 = 1e-14;

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// `GRID_LEN` log-spaced values from `max|Xᵀy|/n` down by a factor 1e4.
pub fn lambda_grid(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let d = x.first().map_or(0, Vec::len);
    let lmax = (0..d)
        .map(|j| x.iter().zip(y).map(|(r, t)| r[j] * t).sum::<f64>().abs() / n)
        .fold(0.0, f64::max);
    if lmax == 0.0 {
        return vec![0.0];
    }
    (0..GRID_LEN)
        .map(|i| lmax * GRID_RATIO.powf(i as f64 / (GRID_LEN - 1) as f64))
        .collect()
}

/// Cyclic coordinate descent for `(1/2n)‖y - Xβ‖² + λ‖β‖₁` starting from
/// `beta` (no intercept; center the data first). Stops when no coordinate
/// update changes the fitted values by more than `TOL` times the mean
/// square of `y`.
pub fn lasso_coordinate_descent(x: &[Vec<f64>], y: &[f64], lambda: f64, beta: &mut [f64]) -> Result<()> {
    let n = x.len() as f64;
    let d = beta.len();
    let col_sq: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j] * r[j]).sum::<f64>() / n).collect();
    let mut resid: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(r, t)| t - r.iter().zip(beta.iter()).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let y_ms = (y.iter().map(|t| t * t).sum::<f64>() / n).max(f64::MIN_POSITIVE);
    let pattern = |b: &[f64]| b.iter().map(|v| v.partial_cmp(&0.0)).collect::<Vec<_>>();
    let mut last_pattern = pattern(beta);
    for _ in 0..MAX_SWEEPS {
        let mut max_step = 0.0f64;
        for j in 0..d {
            if col_sq[j] == 0.0 {
                beta[j] = 0.0;
                continue;
            }
            let old = beta[j];
            let rho = x.iter().zip(&resid).map(|(r, e)| r[j] * e).sum::<f64>() / n + col_sq[j] * old;
            let new = soft_threshold(rho, lambda) / col_sq[j];
            if new != old {
                let delta = new - old;
                for (e, r) in resid.iter_mut().zip(x) {
                    *e -= r[j] * delta;
                }
                beta[j] = new;
                max_step = max_step.max(col_sq[j] * delta * delta);
            }
        }
        if max_step <= TOL * y_ms {
            return Ok(());
        }
        let now = pattern(beta);
        if now == last_pattern {
            let optimal = polish_active_set(x, y, lambda, beta);
            if optimal {
                return Ok(());
            }
            for (e, (r, t)) in resid.iter_mut().zip(x.iter().zip(y)) {
                *e = t - r.iter().zip(beta.iter()).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        last_pattern = pattern(beta);
    }
    Err(Error::NonConvergence(format!("lasso at λ = {lambda:.3e}")))
}

/// Active-set refinement. With the support and signs of `beta` fixed the
/// optimum solves `X_AᵀX_A β_A = X_Aᵀy - nλ·sign`. Moves `beta` toward that
/// point, stopping where a coefficient first reaches zero and dropping it,
/// until the signs hold. Returns true when the result also satisfies
/// `|x_jᵀr|/n ≤ λ` on every inactive coordinate, i.e. is optimal.
fn polish_active_set(x: &[Vec<f64>], y: &[f64], lambda: f64, beta: &mut [f64]) -> bool {
    let n = x.len();
    let yv = DVector::from_column_slice(y);
    loop {
        let active: Vec<usize> = (0..beta.len()).filter(|&j| beta[j] != 0.0).collect();
        if active.is_empty() {
            break;
        }
        let xa = DMatrix::from_fn(n, active.len(), |i, k| x[i][active[k]]);
        let sign = DVector::from_fn(active.len(), |k, _| beta[active[k]].signum());
        let rhs = xa.transpose() * &yv - sign.scale(n as f64 * lambda);
        let Some(ch) = (xa.transpose() * &xa).cholesky() else {
            return false;
        };
        let sol = ch.solve(&rhs);
        if sol.iter().any(|v| !v.is_finite()) {
            return false;
        }
        // first crossing along beta + t (sol - beta)
        let mut t_hit = 1.0;
        let mut hit = None;
        for (k, &j) in active.iter().enumerate() {
            if sol[k] * sign[k] <= 0.0 {
                let t = beta[j] / (beta[j] - sol[k]);
                if t < t_hit {
                    t_hit = t;
                    hit = Some(j);
                }
            }
        }
        for (k, &j) in active.iter().enumerate() {
            beta[j] += t_hit * (sol[k] - beta[j]);
        }
        match hit {
            Some(j) => beta[j] = 0.0,
            None => break,
        }
    }
    let resid: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(r, t)| t - r.iter().zip(beta.iter()).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let slack = lambda * (1.0 + 1e-9);
    (0..beta.len())
        .filter(|&j| beta[j] == 0.0)
        .all(|j| (x.iter().zip(&resid).map(|(r, e)| r[j] * e).sum::<f64>() / n as f64).abs() <= slack)
}

/// Coefficients along `lambdas`, warm-starting each fit from the previous.
pub fn lasso_path(x: &[Vec<f64>], y: &[f64], lambdas: &[f64]) -> Result<Vec<Vec<f64>>> {
    let d = x.first().map_or(0, Vec::len);
    let mut beta = vec![0.0; d];
    lambdas
        .iter()
        .map(|&l| {
            lasso_coordinate_descent(x, y, l, &mut beta)?;
            Ok(beta.clone())
        })
        .collect()
}

/// Lasso ranking: λ picked by 5-fold CV mean squared error, score = |β| at
/// that λ, ties broken by how early a feature entered the path. The default
/// `selected_k` is the support size at the chosen λ.
pub fn rank_lasso(m: &FeatureMatrix, lambda_grid_override: Option<&[f64]>) -> Result<FeatureRanking> {
    let n = m.n_rows();
    if n < 2 * CV_FOLDS {
        return Err(Error::InvalidArgument(format!("lasso ranking needs at least {} rows", 2 * CV_FOLDS)));
    }
    let (x, y) = standardized(m);
    let mut grid = match lambda_grid_override {
        Some(g) => g.to_vec(),
        None => lambda_grid(&x, &y),
    };
    grid.sort_by(|a, b| b.total_cmp(a));

    let cv_err: Vec<Vec<f64>> = (0..CV_FOLDS)
        .into_par_iter()
        .map(|f| {
            let (mut xt, mut yt, mut xv, mut yv) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for i in 0..n {
                if i % CV_FOLDS == f {
                    xv.push(x[i].clone());
                    yv.push(y[i]);
                } else {
                    xt.push(x[i].clone());
                    yt.push(y[i]);
                }
            }
            let path = lasso_path(&xt, &yt, &grid)?;
            Ok(path
                .iter()
                .map(|b| {
                    xv.iter()
                        .zip(&yv)
                        .map(|(r, t)| (t - r.iter().zip(b).map(|(a, c)| a * c).sum::<f64>()).powi(2))
                        .sum::<f64>()
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mse: Vec<f64> = (0..grid.len()).map(|l| cv_err.iter().map(|e| e[l]).sum::<f64>() / n as f64).collect();
    let best = (0..grid.len()).fold(0, |b, l| if mse[l] < mse[b] { l } else { b });

    let path = lasso_path(&x, &y, &grid)?;
    let d = m.n_features();
    let entry: Vec<usize> = (0..d)
        .map(|j| path.iter().position(|b| b[j] != 0.0).unwrap_or(usize::MAX))
        .collect();
    let scores: Vec<f64> = path[best].iter().map(|b| b.abs()).collect();
    let support = scores.iter().filter(|s| **s > 0.0).count();
    log::debug!("lasso: λ = {:.3e} (index {best}), support {support}", grid[best]);
    Ok(FeatureRanking::from_scores(RankingMethod::Lasso, &m.names, scores, true, Some(&entry), support))
}
