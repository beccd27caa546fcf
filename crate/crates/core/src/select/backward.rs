use nalgebra::{DMatrix, DVector};

use super::{standardized, FeatureRanking, RankingMethod};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::models::gpr::cholesky_with_jitter;

const DEFAULT_K: usize = 15;
/// Ridge penalty relative to the row count, on standardized features.
const RIDGE: f64 = 1e-3;

/// Recursive elimination with a ridge-regularized linear model: refit,
/// drop the feature with the smallest |weight|, repeat. Score is the
/// round in which a feature was dropped, scaled to (0, 1]; the last
/// survivor scores 1.
pub fn rank_linear_backward_elim(m: &FeatureMatrix) -> Result<FeatureRanking> {
    let n = m.n_rows();
    let d = m.n_features();
    if n < 2 {
        return Err(Error::InvalidArgument("backward elimination needs at least 2 rows".into()));
    }
    let (x, y) = standardized(m);
    let xm = DMatrix::from_fn(n, d, |i, j| x[i][j]);
    let gram = xm.transpose() * &xm;
    let xty = xm.transpose() * DVector::from_column_slice(&y);

    let mut alive: Vec<usize> = (0..d).collect();
    let mut dropped_at = vec![0usize; d];
    let mut round = 0;
    while alive.len() > 1 {
        let k = alive.len();
        let mut a = DMatrix::from_fn(k, k, |i, j| gram[(alive[i], alive[j])]);
        for i in 0..k {
            a[(i, i)] += RIDGE * n as f64;
        }
        let b = DVector::from_fn(k, |i, _| xty[alive[i]]);
        let w = cholesky_with_jitter(a)?.solve(&b);
        // smallest |w|; on ties the later column goes first
        let pos = (0..k)
            .min_by(|&p, &q| w[p].abs().total_cmp(&w[q].abs()).then(q.cmp(&p)))
            .expect("at least two features alive");
        dropped_at[alive.remove(pos)] = round;
        round += 1;
    }
    if let Some(&last) = alive.first() {
        dropped_at[last] = round;
    }
    let scores: Vec<f64> = dropped_at.iter().map(|r| (r + 1) as f64 / d as f64).collect();
    Ok(FeatureRanking::from_scores(
        RankingMethod::LinearBackwardElim,
        &m.names,
        scores,
        true,
        None,
        DEFAULT_K.min(d),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_plus(extra: impl Fn(&[f64]) -> Vec<f64>) -> FeatureMatrix {
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|i| {
                let mut r: Vec<f64> = (0..5).map(|j| ((i * (7 + 3 * j) + j * j) % 23) as f64 / 23.0).collect();
                r.extend(extra(&r));
                r
            })
            .collect();
        let names = (0..rows[0].len()).map(|j| format!("f{j}")).collect();
        let targets = rows.iter().map(|r| 10.0 + 6.0 * r[5]).collect();
        FeatureMatrix::new(names, rows, targets, vec!["s".into(); 50]).unwrap()
    }

    #[test]
    fn single_relevant_feature_survives() {
        let m = noise_plus(|r| vec![(r[0] * 3.1 + r[2]).sin()]);
        let r = rank_linear_backward_elim(&m).unwrap();
        assert_eq!(r.order[0], 5);
    }

    #[test]
    fn duplicated_relevant_pair_reaches_top_two() {
        let m = noise_plus(|r| {
            let v = (r[0] * 3.1 + r[2]).sin();
            vec![v, v]
        });
        let r = rank_linear_backward_elim(&m).unwrap();
        assert!(r.order[..2].contains(&5) || r.order[..2].contains(&6));
    }
}
