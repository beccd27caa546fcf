//! Bayesian optimization over a box with a GP surrogate and expected
//! improvement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::function::erf::erfc;

use super::gpr::{fit_gp, Basis, GpState, GprParams, Kernel};
use crate::error::{Error, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::stats;

#[derive(Debug, Clone, PartialEq)]
pub struct BoOptions {
    /// Total objective evaluations, including the initial design.
    pub iterations: usize,
    pub initial_points: usize,
    /// Random candidates scored by EI per step before local refinement.
    pub candidates: usize,
    pub seed: u64,
}

impl Default for BoOptions {
    fn default() -> Self {
        Self {
            iterations: 60,
            initial_points: 10,
            candidates: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoResult {
    pub best_x: Vec<f64>,
    pub best_value: f64,
    /// Every evaluated point with its objective value, in order.
    pub history: Vec<(Vec<f64>, f64)>,
}

impl BoResult {
    /// Best value seen after the first `k` evaluations.
    pub fn incumbent_after(&self, k: usize) -> f64 {
        self.history.iter().take(k).map(|(_, v)| *v).fold(f64::INFINITY, f64::min)
    }
}

fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected improvement below `best` for a Gaussian prediction.
pub fn expected_improvement(mean: f64, sd: f64, best: f64) -> f64 {
    if sd <= 1e-12 {
        return (best - mean).max(0.0);
    }
    let z = (best - mean) / sd;
    (best - mean) * norm_cdf(z) + sd * norm_pdf(z)
}

struct Surrogate {
    gp: GpState,
    y_mean: f64,
    y_sd: f64,
}

impl Surrogate {
    fn fit(xs: &[Vec<f64>], ys: &[f64]) -> Result<Self> {
        let y_mean = stats::mean(ys);
        let y_sd = stats::std_dev(ys).max(1e-12);
        let z: Vec<f64> = ys.iter().map(|v| (v - y_mean) / y_sd).collect();
        let start = GprParams {
            sigma_noise: 0.05,
            kernel_scale: 0.3,
            signal_variance: 1.0,
            basis: Basis::Constant,
            kernel: Kernel::IsoSquaredExp,
            length_scales: None,
            optimize: true,
        };
        let gp = fit_gp(&start, xs, &z)?;
        Ok(Self { gp, y_mean, y_sd })
    }

    fn ei(&self, u: &[f64], best: f64) -> f64 {
        let (m, v) = self.gp.predict_mean_var(u);
        let var = v + self.gp.params.sigma_noise.powi(2);
        expected_improvement(self.y_mean + self.y_sd * m, self.y_sd * var.sqrt(), best)
    }
}

/// Minimizes `f` over the box `bounds` (inclusive). Points are proposed in
/// the unit cube and mapped affinely onto the box. Non-finite objective
/// values are kept in the history but replaced by the worst finite value
/// when fitting the surrogate.
pub fn minimize<F>(f: F, bounds: &[(f64, f64)], opts: &BoOptions) -> Result<BoResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = bounds.len();
    if d == 0 || bounds.iter().any(|(lo, hi)| !(lo < hi)) {
        return Err(Error::InvalidArgument("empty or inverted optimization box".into()));
    }
    if opts.iterations < opts.initial_points.max(1) {
        return Err(Error::InvalidArgument("iterations must cover the initial design".into()));
    }
    let to_box = |u: &[f64]| -> Vec<f64> {
        u.iter().zip(bounds).map(|(t, (lo, hi))| lo + t.clamp(0.0, 1.0) * (hi - lo)).collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let initial: Vec<Vec<f64>> = (0..opts.initial_points)
        .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
        .collect();
    let values: Vec<f64> = initial.par_iter().map(|u| f(&to_box(u))).collect();
    let mut us: Vec<Vec<f64>> = initial;
    let mut ys: Vec<f64> = values;

    while us.len() < opts.iterations {
        let worst = ys.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
        let next = if worst == f64::NEG_INFINITY {
            (0..d).map(|_| rng.random::<f64>()).collect()
        } else {
            let ys_fit: Vec<f64> = ys.iter().map(|v| if v.is_finite() { *v } else { worst }).collect();
            let best = ys_fit.iter().copied().fold(f64::INFINITY, f64::min);
            match Surrogate::fit(&us, &ys_fit) {
                Ok(s) => propose(&s, best, d, opts.candidates, &mut rng),
                Err(e) => {
                    log::debug!("surrogate fit failed ({e}); sampling at random");
                    (0..d).map(|_| rng.random::<f64>()).collect()
                }
            }
        };
        let v = f(&to_box(&next));
        us.push(next);
        ys.push(v);
    }

    let history: Vec<(Vec<f64>, f64)> = us.iter().map(|u| to_box(u)).zip(ys.iter().copied()).collect();
    let (best_x, best_value) = history
        .iter()
        .filter(|(_, v)| !v.is_nan())
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .unwrap_or_else(|| history[0].clone());
    Ok(BoResult {
        best_x,
        best_value,
        history,
    })
}

fn propose(s: &Surrogate, best: f64, d: usize, candidates: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut top = (Vec::new(), f64::NEG_INFINITY);
    for _ in 0..candidates.max(1) {
        let u: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let e = s.ei(&u, best);
        if e > top.1 {
            top = (u, e);
        }
    }
    let inside = |u: &[f64]| u.iter().all(|t| (0.0..=1.0).contains(t));
    let refined = nelder_mead(
        |u| if inside(u) { -s.ei(u, best) } else { f64::INFINITY },
        &top.0,
        &NelderMeadOptions {
            max_evals: 200,
            f_tol: 1e-12,
            x_tol: 1e-6,
            step: 0.05,
        },
    );
    if -refined.value > top.1 {
        refined.x
    } else {
        top.0
    }
}
