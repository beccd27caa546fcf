//! Feature ranking and top-k column selection.
//!
//! Every ranker standardizes its input internally, so rankings do not
//! depend on per-feature units.

mod ard;
mod backward;
mod laplacian;
mod lasso;
mod relieff;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

pub use ard::rank_fitrgp_ard;
pub use backward::rank_linear_backward_elim;
pub use laplacian::rank_laplacian;
pub use lasso::{lasso_coordinate_descent, lasso_path, lambda_grid, rank_lasso};
pub use relieff::rank_rrelieff;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RankingMethod {
    FitrgpArd,
    Lasso,
    RReliefF,
    LaplacianScore,
    LinearBackwardElim,
}

impl RankingMethod {
    pub const ALL: [RankingMethod; 5] = [
        RankingMethod::FitrgpArd,
        RankingMethod::Lasso,
        RankingMethod::RReliefF,
        RankingMethod::LaplacianScore,
        RankingMethod::LinearBackwardElim,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RankingMethod::FitrgpArd => "FitrgpArd",
            RankingMethod::Lasso => "Lasso",
            RankingMethod::RReliefF => "RReliefF",
            RankingMethod::LaplacianScore => "LaplacianScore",
            RankingMethod::LinearBackwardElim => "LinearBackwardElim",
        }
    }
}

impl fmt::Display for RankingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RankingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['-', '_'], "");
        Self::ALL
            .into_iter()
            .find(|m| m.name().to_ascii_lowercase() == key)
            .or(match key.as_str() {
                "ard" | "fitrgp" => Some(RankingMethod::FitrgpArd),
                "relieff" => Some(RankingMethod::RReliefF),
                "laplacian" => Some(RankingMethod::LaplacianScore),
                "backward" | "rfe" | "cfs" => Some(RankingMethod::LinearBackwardElim),
                _ => None,
            })
            .ok_or_else(|| Error::InvalidArgument(format!("unknown ranking method `{s}`")))
    }
}

/// Scores and best-first order for every feature of a matrix.
///
/// Score direction depends on the method: the Laplacian score is better
/// when lower, every other method is better when higher. `order` already
/// accounts for this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    pub method: RankingMethod,
    pub names: Vec<String>,
    pub scores: Vec<f64>,
    pub order: Vec<usize>,
    pub selected_k: usize,
}

impl FeatureRanking {
    /// Builds a ranking from scores, breaking ties by `tie` then by index.
    pub(crate) fn from_scores(
        method: RankingMethod,
        names: &[String],
        scores: Vec<f64>,
        higher_is_better: bool,
        tie: Option<&[usize]>,
        selected_k: usize,
    ) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| {
            let c = scores[a].total_cmp(&scores[b]);
            let c = if higher_is_better { c.reverse() } else { c };
            c.then_with(|| tie.map_or(std::cmp::Ordering::Equal, |t| t[a].cmp(&t[b])))
                .then(a.cmp(&b))
        });
        Self {
            method,
            names: names.to_vec(),
            scores,
            order,
            selected_k: selected_k.clamp(1, names.len().max(1)),
        }
    }

    pub fn top_names(&self, k: usize) -> Vec<&str> {
        self.order.iter().take(k).map(|&j| self.names[j].as_str()).collect()
    }
}

pub fn rank(method: RankingMethod, m: &FeatureMatrix, seed: u64) -> Result<FeatureRanking> {
    if m.n_features() == 0 {
        return Err(Error::Empty("feature matrix has no columns".into()));
    }
    match method {
        RankingMethod::FitrgpArd => rank_fitrgp_ard(m, seed),
        RankingMethod::Lasso => rank_lasso(m, None),
        RankingMethod::RReliefF => rank_rrelieff(m, 10, None),
        RankingMethod::LaplacianScore => rank_laplacian(m, 5),
        RankingMethod::LinearBackwardElim => rank_linear_backward_elim(m),
    }
}

/// Keeps the `k` best columns of `m`, in ranking order.
pub fn select_top_k(r: &FeatureRanking, k: usize, m: &FeatureMatrix) -> Result<FeatureMatrix> {
    if r.names != m.names {
        return Err(Error::InvalidArgument("ranking was computed for different columns".into()));
    }
    if k == 0 || k > r.order.len() {
        return Err(Error::InvalidArgument(format!("k = {k} outside [1, {}]", r.order.len())));
    }
    Ok(m.subset_columns(&r.order[..k]))
}

/// Columns of `m` z-scored, with the target centered.
pub(crate) fn standardized(m: &FeatureMatrix) -> (Vec<Vec<f64>>, Vec<f64>) {
    let z = crate::stats::Standardizer::fit(&m.rows).apply(&m.rows);
    let mu = crate::stats::mean(&m.targets);
    (z, m.targets.iter().map(|t| t - mu).collect())
}
