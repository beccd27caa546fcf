//! Regressor families behind one `fit`/`predict` interface.
//!
//! Inputs are z-scored with statistics learned from the training rows only;
//! the standardizer travels with the fitted model.

pub mod bayesopt;
pub mod gpr;
pub mod grnn;
pub mod mlp;
pub mod svr;
pub mod trees;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::stats::Standardizer;

pub use bayesopt::{BoOptions, BoResult};
pub use gpr::{Basis, GpState, GprParams, Kernel};
pub use grnn::{GrnnParams, GrnnState};
pub use mlp::{MlpParams, MlpState};
pub use svr::{SvrParams, SvrState};
pub use trees::{Forest, TreeParams};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MIN_TRAIN_ROWS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "hyperparams")]
pub enum ModelSpec {
    #[serde(rename = "GPR")]
    Gpr(GprParams),
    #[serde(rename = "SVR")]
    Svr(SvrParams),
    BaggedTrees(TreeParams),
    #[serde(rename = "GRNN")]
    Grnn(GrnnParams),
    #[serde(rename = "MLP")]
    Mlp(MlpParams),
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Gpr(GprParams::default())
    }
}

impl ModelSpec {
    pub fn family(&self) -> &'static str {
        match self {
            ModelSpec::Gpr(_) => "GPR",
            ModelSpec::Svr(_) => "SVR",
            ModelSpec::BaggedTrees(_) => "BaggedTrees",
            ModelSpec::Grnn(_) => "GRNN",
            ModelSpec::Mlp(_) => "MLP",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum FittedState {
    #[serde(rename = "GPR")]
    Gpr(GpState),
    #[serde(rename = "SVR")]
    Svr(SvrState),
    BaggedTrees(Forest),
    #[serde(rename = "GRNN")]
    Grnn(GrnnState),
    #[serde(rename = "MLP")]
    Mlp(MlpState),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub standardizer: Standardizer,
    pub state: FittedState,
}

#[derive(Serialize, Deserialize)]
struct Artifact {
    format_version: u32,
    model: TrainedModel,
}

fn check_rows(x: &[Vec<f64>], y: &[f64]) -> Result<()> {
    if x.len() < MIN_TRAIN_ROWS {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_TRAIN_ROWS} training rows, got {}",
            x.len()
        )));
    }
    if y.len() != x.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    let d = x[0].len();
    if let Some(r) = x.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: r.len() });
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training data".into()));
    }
    Ok(())
}

/// Fits `spec` on raw feature rows and targets.
pub fn fit_rows(spec: &ModelSpec, x: &[Vec<f64>], y: &[f64], seed: u64) -> Result<TrainedModel> {
    check_rows(x, y)?;
    let standardizer = Standardizer::fit(x);
    let z = standardizer.apply(x);
    let state = match spec {
        ModelSpec::Gpr(p) => FittedState::Gpr(gpr::fit_gp(p, &z, y)?),
        ModelSpec::Svr(p) => FittedState::Svr(svr::fit_svr(p, &z, y)?),
        ModelSpec::BaggedTrees(p) => FittedState::BaggedTrees(trees::fit_forest(p, &z, y, seed)?),
        ModelSpec::Grnn(p) => FittedState::Grnn(grnn::fit_grnn(p, &z, y)?),
        ModelSpec::Mlp(p) => FittedState::Mlp(mlp::fit_mlp(p, &z, y, seed)?),
    };
    // GPR may have replaced its starting hyperparameters
    let spec = match &state {
        FittedState::Gpr(g) => ModelSpec::Gpr(g.params.clone()),
        _ => spec.clone(),
    };
    Ok(TrainedModel {
        spec,
        standardizer,
        state,
    })
}

pub fn fit(spec: &ModelSpec, m: &FeatureMatrix, seed: u64) -> Result<TrainedModel> {
    fit_rows(spec, &m.rows, &m.targets, seed)
}

impl TrainedModel {
    pub fn dim(&self) -> usize {
        self.standardizer.dim()
    }

    pub fn predict_row(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: row.len(),
            });
        }
        let z = self.standardizer.apply_row(row);
        let v = match &self.state {
            FittedState::Gpr(s) => s.predict_mean(&z),
            FittedState::Svr(s) => s.predict(&z),
            FittedState::BaggedTrees(s) => s.predict(&z),
            FittedState::Grnn(s) => s.predict(&z),
            FittedState::Mlp(s) => s.predict(&z),
        };
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{} prediction", self.spec.family())));
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let art = Artifact {
            format_version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        };
        serde_json::to_writer(std::io::BufWriter::new(file), &art)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let art: Artifact = serde_json::from_reader(std::io::BufReader::new(file))?;
        if art.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "model artifact version {} (expected {MODEL_FORMAT_VERSION})",
                art.format_version
            )));
        }
        Ok(art.model)
    }
}

pub fn predict(model: &TrainedModel, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    rows.iter().map(|r| model.predict_row(r)).collect()
}

/// Exact log marginal likelihood of the targets for a GPR spec, on inputs
/// standardized the same way `fit` would.
pub fn gpr_log_marginal_likelihood(spec: &ModelSpec, m: &FeatureMatrix) -> Result<f64> {
    let ModelSpec::Gpr(p) = spec else {
        return Err(Error::InvalidArgument("marginal likelihood needs a GPR spec".into()));
    };
    let z = Standardizer::fit(&m.rows).apply(&m.rows);
    gpr::log_marginal_likelihood(p, &z, &m.targets)
}

/// Root mean squared error of `spec` under k-fold cross-validation with
/// rows assigned round-robin to folds.
pub fn cv_rmse(spec: &ModelSpec, m: &FeatureMatrix, folds: usize, seed: u64) -> Result<f64> {
    let n = m.n_rows();
    if folds < 2 || n < folds {
        return Err(Error::InvalidArgument(format!("{folds}-fold CV on {n} rows")));
    }
    let sq: Vec<f64> = (0..folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..n).filter(|i| i % folds != f).collect();
            let test: Vec<usize> = (0..n).filter(|i| i % folds == f).collect();
            let tm = m.subset_rows(&train);
            let model = fit(spec, &tm, seed)?;
            test.iter()
                .map(|&i| Ok((model.predict_row(&m.rows[i])? - m.targets[i]).powi(2)))
                .sum::<Result<f64>>()
        })
        .collect::<Result<_>>()?;
    Ok((sq.iter().sum::<f64>() / n as f64).sqrt())
}

/// Log-space search box for GPR tuning, as
/// `[ln σ, ln ℓ, ln σf², kernel switch, basis switch]`.
pub fn gpr_search_box() -> [(f64, f64); 5] {
    [
        (1e-3f64.ln(), 1e2f64.ln()),
        (1e-2f64.ln(), 1e3f64.ln()),
        (1e-2f64.ln(), 1e3f64.ln()),
        (0.0, 1.0),
        (0.0, 1.0),
    ]
}

pub fn gpr_spec_from_point(v: &[f64]) -> ModelSpec {
    ModelSpec::Gpr(GprParams {
        sigma_noise: v[0].exp(),
        kernel_scale: v[1].exp(),
        signal_variance: v[2].exp(),
        kernel: if v[3] < 0.5 { Kernel::IsoExponential } else { Kernel::IsoSquaredExp },
        basis: if v[4] < 0.5 { Basis::Constant } else { Basis::Linear },
        length_scales: None,
        optimize: false,
    })
}

/// Tunes GPR hyperparameters by Bayesian optimization of 5-fold CV RMSE.
/// Failed fits score +∞. Returns the best spec and the search trace.
pub fn bayes_opt_gpr_trace(m: &FeatureMatrix, iterations: usize, seed: u64) -> Result<(ModelSpec, BoResult)> {
    if iterations < 5 {
        return Err(Error::InvalidArgument("Bayesian optimization needs at least 5 iterations".into()));
    }
    let objective = |v: &[f64]| {
        cv_rmse(&gpr_spec_from_point(v), m, 5, seed).unwrap_or_else(|e| {
            log::debug!("BO candidate failed: {e}");
            f64::INFINITY
        })
    };
    let opts = BoOptions {
        iterations,
        initial_points: 10.min(iterations),
        seed,
        ..BoOptions::default()
    };
    let res = bayesopt::minimize(objective, &gpr_search_box(), &opts)?;
    if !res.best_value.is_finite() {
        return Err(Error::Optimization("no GPR candidate could be fitted".into()));
    }
    Ok((gpr_spec_from_point(&res.best_x), res))
}

pub fn bayes_opt_gpr(m: &FeatureMatrix, iterations: usize, seed: u64) -> Result<ModelSpec> {
    Ok(bayes_opt_gpr_trace(m, iterations, seed)?.0)
}
