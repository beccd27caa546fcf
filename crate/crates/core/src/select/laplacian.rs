use super::{FeatureRanking, RankingMethod};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::stats::{self, Standardizer};

const DEFAULT_K: usize = 10;

/// Laplacian score on a symmetric kNN graph with heat-kernel weights
/// `exp(-‖a-b‖²/t)`, `t` = squared median pairwise distance between
/// standardized rows. Lower is better; features with no spread get
/// `f64::MAX` and rank last. Target values are not used.
pub fn rank_laplacian(m: &FeatureMatrix, knn: usize) -> Result<FeatureRanking> {
    let n = m.n_rows();
    let d = m.n_features();
    if knn == 0 || n < knn + 1 {
        return Err(Error::InvalidArgument(format!("Laplacian score with k = {knn} needs more than {n} rows")));
    }
    let z = Standardizer::fit(&m.rows).apply(&m.rows);
    let mut d2 = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let v: f64 = z[i].iter().zip(&z[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d2[i * n + j] = v;
            d2[j * n + i] = v;
        }
    }
    let pair: Vec<f64> = (0..n).flat_map(|i| (0..i).map(move |j| (i, j))).map(|(i, j)| d2[i * n + j].sqrt()).collect();
    let t = stats::median(&pair).powi(2).max(f64::MIN_POSITIVE);

    let mut w = vec![0.0; n * n];
    let mut idx: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        idx.clear();
        idx.extend((0..n).filter(|&j| j != i));
        idx.sort_by(|&a, &b| d2[i * n + a].total_cmp(&d2[i * n + b]).then(a.cmp(&b)));
        for &j in &idx[..knn] {
            let v = (-d2[i * n + j] / t).exp();
            w[i * n + j] = v;
            w[j * n + i] = v;
        }
    }
    let deg: Vec<f64> = (0..n).map(|i| w[i * n..(i + 1) * n].iter().sum()).collect();
    let deg_sum: f64 = deg.iter().sum();

    let scores: Vec<f64> = (0..d)
        .map(|a| {
            let f: Vec<f64> = m.rows.iter().map(|r| r[a]).collect();
            let shift = f.iter().zip(&deg).map(|(v, g)| v * g).sum::<f64>() / deg_sum;
            let ft: Vec<f64> = f.iter().map(|v| v - shift).collect();
            let dvar: f64 = ft.iter().zip(&deg).map(|(v, g)| v * v * g).sum();
            // fᵀLf = ½ Σ w_ij (f_i - f_j)²
            let mut lf = 0.0;
            for i in 0..n {
                for j in 0..i {
                    let wij = w[i * n + j];
                    if wij != 0.0 {
                        lf += wij * (ft[i] - ft[j]).powi(2);
                    }
                }
            }
            let scale = f.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
            if dvar <= 1e-20 * scale * scale * deg_sum {
                f64::MAX
            } else {
                lf / dvar
            }
        })
        .collect();
    Ok(FeatureRanking::from_scores(
        RankingMethod::LaplacianScore,
        &m.names,
        scores,
        false,
        None,
        DEFAULT_K.min(d),
    ))
}
