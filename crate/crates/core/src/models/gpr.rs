//! Exact Gaussian process regression.
//!
//! The posterior is computed from the Cholesky factor of `K + σ²I`. An
//! explicit basis (constant or linear) is handled by generalized least
//! squares: `β = (Hᵀ K⁻¹ H)⁻¹ Hᵀ K⁻¹ y`, and the marginal likelihood is the
//! Gaussian likelihood of the residual `y - Hβ`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::stats;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Kernel {
    /// `σf² exp(-‖a-b‖/ℓ)` (Matérn 1/2).
    IsoExponential,
    /// `σf² exp(-‖a-b‖²/(2ℓ²))`.
    IsoSquaredExp,
    /// `σf² exp(-½ Σ (a_d-b_d)²/ℓ_d²)`.
    #[serde(rename = "ARD-SquaredExp")]
    ArdSquaredExp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    None,
    Constant,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GprParams {
    /// Noise standard deviation σ (the noise variance is σ²).
    pub sigma_noise: f64,
    /// Length scale ℓ for the isotropic kernels, and the fallback for ARD.
    pub kernel_scale: f64,
    /// Signal variance σf².
    pub signal_variance: f64,
    pub basis: Basis,
    pub kernel: Kernel,
    /// Per-feature length scales for [`Kernel::ArdSquaredExp`].
    pub length_scales: Option<Vec<f64>>,
    /// Fit σ, ℓ and σf² by maximizing the marginal likelihood before the
    /// final fit, starting from the values above.
    pub optimize: bool,
}

impl Default for GprParams {
    fn default() -> Self {
        Self {
            sigma_noise: 1.2441,
            kernel_scale: 5.9902,
            signal_variance: 1.0,
            basis: Basis::Linear,
            kernel: Kernel::IsoExponential,
            length_scales: None,
            optimize: false,
        }
    }
}

impl GprParams {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let positive = [self.sigma_noise, self.kernel_scale, self.signal_variance];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument("GPR hyperparameters must be positive".into()));
        }
        if let (Kernel::ArdSquaredExp, Some(ls)) = (self.kernel, &self.length_scales) {
            if ls.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: ls.len(),
                });
            }
            if ls.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::InvalidArgument("length scales must be positive".into()));
            }
        }
        Ok(())
    }

    fn scales(&self, dim: usize) -> Vec<f64> {
        match (self.kernel, &self.length_scales) {
            (Kernel::ArdSquaredExp, Some(ls)) => ls.clone(),
            _ => vec![self.kernel_scale; dim],
        }
    }
}

/// Kernel evaluator with the length scales resolved.
#[derive(Debug, Clone)]
pub struct KernelFn {
    kind: Kernel,
    inv_scales: Vec<f64>,
    variance: f64,
}

impl KernelFn {
    pub fn new(params: &GprParams, dim: usize) -> Self {
        Self {
            kind: params.kernel,
            inv_scales: params.scales(dim).iter().map(|l| 1.0 / l).collect(),
            variance: params.signal_variance,
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.inv_scales)
            .map(|((x, y), s)| {
                let d = (x - y) * s;
                d * d
            })
            .sum();
        match self.kind {
            Kernel::IsoExponential => self.variance * (-d2.sqrt()).exp(),
            Kernel::IsoSquaredExp | Kernel::ArdSquaredExp => self.variance * (-0.5 * d2).exp(),
        }
    }

    pub fn matrix(&self, x: &[Vec<f64>]) -> DMatrix<f64> {
        let n = x.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = self.variance;
            for j in 0..i {
                let v = self.eval(&x[i], &x[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }
}

/// Cholesky factorization, adding diagonal jitter on failure: starting at
/// `1e-10 · trace/n` and growing ×10 up to `1e-4 · trace/n`.
pub fn cholesky_with_jitter(k: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let n = k.nrows();
    if let Some(c) = Cholesky::new(k.clone()) {
        return Ok(c);
    }
    let scale = (k.trace() / n.max(1) as f64).abs().max(f64::MIN_POSITIVE);
    let mut jitter = 1e-10 * scale;
    while jitter <= 1e-4 * scale * (1.0 + 1e-9) {
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(kj) {
            return Ok(c);
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite { jitter: 1e-4 * scale })
}

pub fn basis_row(basis: Basis, x: &[f64]) -> Vec<f64> {
    match basis {
        Basis::None => Vec::new(),
        Basis::Constant => vec![1.0],
        Basis::Linear => std::iter::once(1.0).chain(x.iter().copied()).collect(),
    }
}

/// A fitted GP over already-standardized inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpState {
    pub params: GprParams,
    pub x_train: Vec<Vec<f64>>,
    /// Lower Cholesky factor of `K + σ²I` (after any jitter).
    pub chol_lower: DMatrix<f64>,
    /// `(K + σ²I)⁻¹ (y - Hβ)`.
    pub alpha: DVector<f64>,
    pub beta: Vec<f64>,
    pub log_marginal_likelihood: f64,
}

struct Posterior {
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    beta: Vec<f64>,
    lml: f64,
}

fn posterior(params: &GprParams, x: &[Vec<f64>], y: &[f64]) -> Result<Posterior> {
    let n = x.len();
    let dim = x.first().map_or(0, Vec::len);
    params.validate(dim)?;
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    let kf = KernelFn::new(params, dim);
    let mut k = kf.matrix(x);
    let noise = params.sigma_noise * params.sigma_noise;
    for i in 0..n {
        k[(i, i)] += noise;
    }
    let chol = cholesky_with_jitter(k)?;
    let yv = DVector::from_column_slice(y);

    let beta = if params.basis == Basis::None {
        Vec::new()
    } else {
        let p = basis_row(params.basis, &x[0]).len();
        let h = DMatrix::from_fn(n, p, |i, j| basis_row(params.basis, &x[i])[j]);
        let kinv_h = chol.solve(&h);
        let a = h.transpose() * &kinv_h;
        let rhs = kinv_h.transpose() * &yv;
        let ca = cholesky_with_jitter(a)?;
        ca.solve(&rhs).iter().copied().collect()
    };
    let resid = if beta.is_empty() {
        yv
    } else {
        DVector::from_iterator(
            n,
            x.iter().zip(y).map(|(row, yi)| {
                yi - basis_row(params.basis, row).iter().zip(&beta).map(|(h, b)| h * b).sum::<f64>()
            }),
        )
    };
    let alpha = chol.solve(&resid);
    let log_det_half: f64 = chol.l_dirty().diagonal().iter().take(n).map(|v| v.ln()).sum();
    let lml = -0.5 * resid.dot(&alpha) - log_det_half - 0.5 * n as f64 * LN_2PI;
    if !lml.is_finite() {
        return Err(Error::NonFinite("GP log marginal likelihood".into()));
    }
    Ok(Posterior { chol, alpha, beta, lml })
}

/// Log marginal likelihood of `y` under `params` (inputs used as given).
pub fn log_marginal_likelihood(params: &GprParams, x: &[Vec<f64>], y: &[f64]) -> Result<f64> {
    Ok(posterior(params, x, y)?.lml)
}

/// Maximizes the marginal likelihood over log σ, log ℓ and log σf² with a
/// simplex search started from `start`. σ is kept above `1e-4 · sd(y)`.
pub fn optimize_hyperparameters(start: &GprParams, x: &[Vec<f64>], y: &[f64]) -> Result<GprParams> {
    let y_sd = stats::std_dev(y).max(1e-9);
    let floor = (1e-4 * y_sd).ln();
    let make = |v: &[f64]| GprParams {
        sigma_noise: v[0].exp(),
        kernel_scale: v[1].exp(),
        signal_variance: v[2].exp(),
        optimize: false,
        ..start.clone()
    };
    let objective = |v: &[f64]| {
        if v[0] < floor || v.iter().any(|t| t.abs() > 25.0) {
            return f64::INFINITY;
        }
        log_marginal_likelihood(&make(v), x, y).map_or(f64::INFINITY, |l| -l)
    };
    let x0 = [start.sigma_noise.ln(), start.kernel_scale.ln(), start.signal_variance.ln()];
    let opts = NelderMeadOptions {
        max_evals: 400,
        f_tol: 1e-8,
        x_tol: 1e-4,
        step: 0.7,
    };
    let best = nelder_mead(objective, &x0, &opts);
    if !best.value.is_finite() {
        return Err(Error::Optimization("GP hyperparameter search found no finite likelihood".into()));
    }
    Ok(make(&best.x))
}

/// Fits the GP posterior on standardized inputs.
pub fn fit_gp(params: &GprParams, x: &[Vec<f64>], y: &[f64]) -> Result<GpState> {
    let params = if params.optimize {
        optimize_hyperparameters(params, x, y)?
    } else {
        params.clone()
    };
    let post = posterior(&params, x, y)?;
    Ok(GpState {
        params,
        x_train: x.to_vec(),
        chol_lower: post.chol.l(),
        alpha: post.alpha,
        beta: post.beta,
        log_marginal_likelihood: post.lml,
    })
}

impl GpState {
    fn kernel(&self) -> KernelFn {
        KernelFn::new(&self.params, self.x_train.first().map_or(0, Vec::len))
    }

    pub fn predict_mean(&self, row: &[f64]) -> f64 {
        let k = self.kernel();
        let kstar: f64 = self.x_train.iter().zip(self.alpha.iter()).map(|(xi, a)| k.eval(xi, row) * a).sum();
        let trend: f64 = basis_row(self.params.basis, row).iter().zip(&self.beta).map(|(h, b)| h * b).sum();
        kstar + trend
    }

    /// Posterior mean and latent variance (the basis-coefficient
    /// uncertainty is not included).
    pub fn predict_mean_var(&self, row: &[f64]) -> (f64, f64) {
        let k = self.kernel();
        let kstar = DVector::from_iterator(self.x_train.len(), self.x_train.iter().map(|xi| k.eval(xi, row)));
        let v = self
            .chol_lower
            .solve_lower_triangular(&kstar)
            .unwrap_or_else(|| DVector::zeros(kstar.len()));
        let var = (k.eval(row, row) - v.dot(&v)).max(0.0);
        (self.predict_mean(row), var)
    }
}

/// Log marginal likelihood and its gradient for a zero-mean ARD
/// squared-exponential GP in log parameters
/// `[ln ℓ_1 … ln ℓ_d, ln σf, ln σ]`.
pub fn ard_lml_with_gradient(log_params: &[f64], x: &[Vec<f64>], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = x.len();
    let d = log_params.len() - 2;
    let inv_l2: Vec<f64> = log_params[..d].iter().map(|l| (-2.0 * l).exp()).collect();
    let sf2 = (2.0 * log_params[d]).exp();
    let sn2 = (2.0 * log_params[d + 1]).exp();

    let mut kf = DMatrix::zeros(n, n);
    for i in 0..n {
        kf[(i, i)] = sf2;
        for j in 0..i {
            let d2: f64 = x[i].iter().zip(&x[j]).zip(&inv_l2).map(|((a, b), s)| (a - b) * (a - b) * s).sum();
            let v = sf2 * (-0.5 * d2).exp();
            kf[(i, j)] = v;
            kf[(j, i)] = v;
        }
    }
    let mut k = kf.clone();
    for i in 0..n {
        k[(i, i)] += sn2;
    }
    let chol = Cholesky::new(k).ok_or(Error::NotPositiveDefinite { jitter: 0.0 })?;
    let yv = DVector::from_column_slice(y);
    let alpha = chol.solve(&yv);
    let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    let lml = -0.5 * yv.dot(&alpha) - log_det_half - 0.5 * n as f64 * LN_2PI;

    // W = ααᵀ - K⁻¹ ; dL/dθ = ½ tr(W dK/dθ)
    let kinv = chol.inverse();
    let mut w = &alpha * alpha.transpose();
    w -= &kinv;
    let mut grad = vec![0.0; d + 2];
    for i in 0..n {
        for j in 0..i {
            let m = w[(i, j)] * kf[(i, j)];
            if m == 0.0 {
                continue;
            }
            for (dim, g) in grad[..d].iter_mut().enumerate() {
                let diff = x[i][dim] - x[j][dim];
                *g += m * diff * diff * inv_l2[dim];
            }
        }
    }
    // off-diagonal pairs appear twice in the trace; ½ · 2 = 1
    let mut tr_wkf = 0.0;
    for i in 0..n {
        for j in 0..n {
            tr_wkf += w[(i, j)] * kf[(i, j)];
        }
    }
    grad[d] = tr_wkf;
    grad[d + 1] = sn2 * w.trace();
    Ok((lml, grad))
}
