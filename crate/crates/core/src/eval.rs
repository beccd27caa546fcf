//! Cross-validation and agreement statistics.
//!
//! Error is `prediction - reference`. With `e` the error vector over `n`
//! rows: MAE = mean|e|, RMSE = √mean(e²), SD uses the 1/n convention about
//! the mean error, 2SD = 2·SD, and the limits of agreement are
//! mean(e) ± 1.96·SD. R is `√(1 - MSE/MSE₀)` where MSE₀ is the mean squared
//! deviation of the reference about its own mean; it lies in [0, 1] and is
//! clamped to 0 (with `r_clamped` set) when the model does worse than the
//! mean predictor.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::models::{self, ModelSpec, TrainedModel};
use crate::select::{self, FeatureRanking, RankingMethod};

pub const LOA_Z: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Grouping {
    ByRow,
    BySubject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitPlan {
    pub fold_count: usize,
    pub test_fraction: f64,
    pub val_fraction_of_train: f64,
    pub seed: u64,
    pub grouping: Grouping,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self {
            fold_count: 5,
            test_fraction: 0.20,
            val_fraction_of_train: 0.20,
            seed: 0,
            grouping: Grouping::ByRow,
        }
    }
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        if self.fold_count < 2 {
            return Err(Error::Config("fold_count must be at least 2".into()));
        }
        for (name, v) in [("test_fraction", self.test_fraction), ("val_fraction_of_train", self.val_fraction_of_train)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        // the test part is one fold, so the two settings must agree
        if (self.test_fraction * self.fold_count as f64 - 1.0).abs() > 0.05 {
            return Err(Error::Config(format!(
                "test_fraction {} is inconsistent with {} folds",
                self.test_fraction, self.fold_count
            )));
        }
        Ok(())
    }
}

/// Row indices of one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Fold {
    /// Training and validation rows together, i.e. everything but the test fold.
    pub fn fit_rows(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.train.iter().chain(&self.val).copied().collect();
        v.sort_unstable();
        v
    }
}

/// Partitions rows into `fold_count` folds. Each fold tests on one block of
/// a seeded permutation; the remaining rows are split into validation
/// (the first `⌊val_fraction·rest⌋` of the permutation) and training.
/// Under [`Grouping::BySubject`] the permutation is over subjects.
pub fn make_splits(n_rows: usize, plan: &SplitPlan, groups: &[String]) -> Result<Vec<Fold>> {
    plan.validate()?;
    let k = plan.fold_count;
    if n_rows < 2 * k {
        return Err(Error::InvalidArgument(format!("{n_rows} rows cannot fill {k} folds")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let units: Vec<Vec<usize>> = match plan.grouping {
        Grouping::ByRow => (0..n_rows).map(|i| vec![i]).collect(),
        Grouping::BySubject => {
            if groups.len() != n_rows {
                return Err(Error::DimensionMismatch { expected: n_rows, got: groups.len() });
            }
            let mut by: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, g) in groups.iter().enumerate() {
                by.entry(g.as_str()).or_default().push(i);
            }
            if by.len() < k {
                return Err(Error::InvalidArgument(format!("{} subjects cannot fill {k} folds", by.len())));
            }
            by.into_values().collect()
        }
    };
    let mut perm: Vec<usize> = (0..units.len()).collect();
    perm.shuffle(&mut rng);
    let u = units.len();
    let bounds: Vec<usize> = (0..=k).map(|f| f * u / k).collect();

    let flatten = |ids: &[usize]| -> Vec<usize> {
        let mut v: Vec<usize> = ids.iter().flat_map(|&p| units[p].iter().copied()).collect();
        v.sort_unstable();
        v
    };
    Ok((0..k)
        .map(|f| {
            let test_units = &perm[bounds[f]..bounds[f + 1]];
            let rest: Vec<usize> = perm[..bounds[f]].iter().chain(&perm[bounds[f + 1]..]).copied().collect();
            let n_val = (plan.val_fraction_of_train * rest.len() as f64).floor() as usize;
            Fold {
                train: flatten(&rest[n_val..]),
                val: flatten(&rest[..n_val]),
                test: flatten(test_units),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub mae: f64,
    pub rmse: f64,
    /// Absent when the reference is constant.
    pub r: Option<f64>,
    pub r_clamped: bool,
    pub bias: f64,
    pub sd: f64,
    pub sd2: f64,
    pub loa_low: f64,
    pub loa_high: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_fold: Vec<MetricsReport>,
}

pub fn compute_metrics(pred: &[f64], truth: &[f64]) -> Result<MetricsReport> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), got: pred.len() });
    }
    if pred.is_empty() {
        return Err(Error::Empty("no predictions to score".into()));
    }
    if pred.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("prediction or reference".into()));
    }
    let n = pred.len() as f64;
    let err: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| p - t).collect();
    let mae = err.iter().map(|e| e.abs()).sum::<f64>() / n;
    let mse = err.iter().map(|e| e * e).sum::<f64>() / n;
    let bias = err.iter().sum::<f64>() / n;
    let sd = (err.iter().map(|e| (e - bias) * (e - bias)).sum::<f64>() / n).sqrt();
    let t_mean = truth.iter().sum::<f64>() / n;
    let mse_base = truth.iter().map(|t| (t - t_mean) * (t - t_mean)).sum::<f64>() / n;
    let (r, r_clamped) = if mse_base > 0.0 {
        let q = 1.0 - mse / mse_base;
        (Some(q.max(0.0).sqrt()), q < 0.0)
    } else {
        (None, false)
    };
    Ok(MetricsReport {
        n: pred.len(),
        mae,
        rmse: mse.sqrt(),
        r,
        r_clamped,
        bias,
        sd,
        sd2: 2.0 * sd,
        loa_low: bias - LOA_Z * sd,
        loa_high: bias + LOA_Z * sd,
        per_fold: Vec::new(),
    })
}

/// Which model each fold fits: a fixed spec, or a GPR tuned by Bayesian
/// optimization on that fold's training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelPlan {
    Fixed(ModelSpec),
    TunedGpr { iterations: usize },
}

/// How features are chosen inside each training fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub method: RankingMethod,
    /// Number of columns to keep; the method's own default when absent.
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldArtifact {
    pub fold: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub selected: Vec<String>,
    /// Spec of the fitted model, after any tuning.
    pub spec: ModelSpec,
    pub model_sha256: String,
    pub metrics: MetricsReport,
    #[serde(skip)]
    pub ranking: Option<FeatureRanking>,
    #[serde(skip)]
    pub model: Option<TrainedModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub report: MetricsReport,
    pub folds: Vec<FoldArtifact>,
    /// Pooled test rows as `(reference, prediction)`, fold by fold.
    pub pairs: Vec<(f64, f64)>,
}

impl ExperimentOutput {
    /// Bland–Altman points `(mean of the two, prediction - reference)`.
    pub fn bland_altman(&self) -> Vec<(f64, f64)> {
        self.pairs.iter().map(|(t, p)| (0.5 * (t + p), p - t)).collect()
    }

    pub fn write_artifacts(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let metrics = dir.join("metrics.json");
        let json = serde_json::to_string_pretty(&self.report)?;
        std::fs::write(&metrics, json + "\n").map_err(|e| Error::io(&metrics, e))?;

        let path = dir.join("folds.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record([
            "fold", "n_train", "n_val", "n_test", "mae", "rmse", "r", "sd2", "loa_low", "loa_high", "selected",
            "model_sha256",
        ])?;
        for f in &self.folds {
            let m = &f.metrics;
            w.write_record([
                f.fold.to_string(),
                f.n_train.to_string(),
                f.n_val.to_string(),
                f.n_test.to_string(),
                format!("{:?}", m.mae),
                format!("{:?}", m.rmse),
                m.r.map_or(String::new(), |r| format!("{r:?}")),
                format!("{:?}", m.sd2),
                format!("{:?}", m.loa_low),
                format!("{:?}", m.loa_high),
                f.selected.join(";"),
                f.model_sha256.clone(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        write_pairs(&dir.join("regression.csv"), ["truth", "pred"], &self.pairs)?;
        write_pairs(&dir.join("bland_altman.csv"), ["mean", "diff"], &self.bland_altman())?;
        Ok(())
    }
}

fn write_pairs(path: &Path, header: [&str; 2], rows: &[(f64, f64)]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{},{}", header[0], header[1]).map_err(io)?;
    for (a, b) in rows {
        writeln!(w, "{a:?},{b:?}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn model_hash(model: &TrainedModel) -> Result<String> {
    let bytes = serde_json::to_vec(model)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Row order independent of how the matrix was assembled: by subject, then
/// feature values, then target.
pub fn canonical_order(m: &FeatureMatrix) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..m.n_rows()).collect();
    idx.sort_by(|&a, &b| {
        m.groups[a]
            .cmp(&m.groups[b])
            .then_with(|| {
                m.rows[a]
                    .iter()
                    .zip(&m.rows[b])
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .then(m.targets[a].total_cmp(&m.targets[b]))
    });
    idx
}

/// Cross-validated evaluation. For each fold, ranking (if any), column
/// selection, standardization and fitting see only the fold's training and
/// validation rows; the test rows are predicted and pooled.
pub fn run_experiment(
    m: &FeatureMatrix,
    selection: Option<&SelectionConfig>,
    spec: &ModelSpec,
    plan: &SplitPlan,
) -> Result<ExperimentOutput> {
    run_experiment_with(m, selection, &ModelPlan::Fixed(spec.clone()), plan)
}

pub fn run_experiment_with(
    m: &FeatureMatrix,
    selection: Option<&SelectionConfig>,
    model: &ModelPlan,
    plan: &SplitPlan,
) -> Result<ExperimentOutput> {
    m.validate()?;
    let m = m.subset_rows(&canonical_order(m));
    let folds = make_splits(m.n_rows(), plan, &m.groups)?;

    let results: Vec<(FoldArtifact, Vec<(f64, f64)>)> = folds
        .par_iter()
        .enumerate()
        .map(|(f, fold)| run_fold(&m, f, fold, selection, model, plan.seed.wrapping_add(f as u64)))
        .collect::<Result<_>>()?;

    let pairs: Vec<(f64, f64)> = results.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let (truth, pred): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    let mut report = compute_metrics(&pred, &truth)?;
    report.per_fold = results.iter().map(|(a, _)| a.metrics.clone()).collect();
    Ok(ExperimentOutput {
        report,
        folds: results.into_iter().map(|(a, _)| a).collect(),
        pairs,
    })
}

fn run_fold(
    m: &FeatureMatrix,
    f: usize,
    fold: &Fold,
    selection: Option<&SelectionConfig>,
    model: &ModelPlan,
    seed: u64,
) -> Result<(FoldArtifact, Vec<(f64, f64)>)> {
    let stage = |e: Error, what: &'static str| e.at_stage(what, format!("fold {f}"));
    let train = m.subset_rows(&fold.fit_rows());
    let (ranking, cols) = match selection {
        Some(sel) => {
            let r = select::rank(sel.method, &train, seed).map_err(|e| stage(e, "select"))?;
            let k = sel.k.unwrap_or(r.selected_k).min(r.order.len());
            let cols = r.order[..k.max(1)].to_vec();
            (Some(r), cols)
        }
        None => (None, (0..m.n_features()).collect()),
    };
    let train = train.subset_columns(&cols);
    let spec = match model {
        ModelPlan::Fixed(s) => s.clone(),
        ModelPlan::TunedGpr { iterations } => {
            models::bayes_opt_gpr(&train, *iterations, seed).map_err(|e| stage(e, "tune"))?
        }
    };
    let model = models::fit(&spec, &train, seed).map_err(|e| stage(e, "train"))?;
    let pairs: Vec<(f64, f64)> = fold
        .test
        .iter()
        .map(|&i| {
            let row: Vec<f64> = cols.iter().map(|&j| m.rows[i][j]).collect();
            Ok((m.targets[i], model.predict_row(&row)?))
        })
        .collect::<Result<_>>()
        .map_err(|e| stage(e, "predict"))?;
    let (truth, pred): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    let artifact = FoldArtifact {
        fold: f,
        n_train: fold.train.len(),
        n_val: fold.val.len(),
        n_test: fold.test.len(),
        selected: train.names.clone(),
        spec: model.spec.clone(),
        model_sha256: model_hash(&model)?,
        metrics: compute_metrics(&pred, &truth)?,
        ranking,
        model: Some(model),
    };
    Ok((artifact, pairs))
}
