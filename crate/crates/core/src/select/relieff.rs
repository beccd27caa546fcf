use super::{FeatureRanking, RankingMethod};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Width of the rank-based neighbour weighting `exp(-(rank/σ)²)`.
const RANK_SIGMA: f64 = 50.0;

/// RReliefF weights with `k` nearest neighbours under the Manhattan
/// distance on min-max scaled features. Every row is used as a probe unless
/// `sample_count` limits it to the first rows. The default `selected_k` is
/// the number of positive weights.
pub fn rank_rrelieff(m: &FeatureMatrix, k: usize, sample_count: Option<usize>) -> Result<FeatureRanking> {
    let n = m.n_rows();
    let d = m.n_features();
    if k == 0 || n < k + 1 {
        return Err(Error::InvalidArgument(format!("RReliefF with k = {k} needs more than {n} rows")));
    }
    let probes = sample_count.unwrap_or(n).min(n);

    let scale = |v: &[f64]| {
        let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
        let span = hi - lo;
        v.iter().map(|x| if span > 0.0 { (x - lo) / span } else { 0.0 }).collect::<Vec<f64>>()
    };
    let cols: Vec<Vec<f64>> = (0..d).map(|j| scale(&m.column(j))).collect();
    let y = scale(&m.targets);
    let dist = |a: usize, b: usize| cols.iter().map(|c| (c[a] - c[b]).abs()).sum::<f64>();

    let rank_w: Vec<f64> = (1..=k).map(|r| (-(r as f64 / RANK_SIGMA).powi(2)).exp()).collect();
    let rank_w_sum: f64 = rank_w.iter().sum();

    let mut n_dc = 0.0;
    let mut n_da = vec![0.0; d];
    let mut n_dcda = vec![0.0; d];
    let mut others: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..probes {
        others.clear();
        others.extend((0..n).filter(|&j| j != i).map(|j| (dist(i, j), j)));
        others.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let near = &mut others[..k];
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (&(_, j), w) in near.iter().zip(&rank_w) {
            let w = w / rank_w_sum;
            let dc = (y[i] - y[j]).abs();
            n_dc += dc * w;
            for a in 0..d {
                let da = (cols[a][i] - cols[a][j]).abs();
                n_da[a] += da * w;
                n_dcda[a] += dc * da * w;
            }
        }
    }
    let m_f = probes as f64;
    let weights: Vec<f64> = (0..d)
        .map(|a| {
            if n_dc <= 0.0 || n_dc >= m_f {
                0.0
            } else {
                n_dcda[a] / n_dc - (n_da[a] - n_dcda[a]) / (m_f - n_dc)
            }
        })
        .collect();
    let positive = weights.iter().filter(|w| **w > 0.0).count();
    Ok(FeatureRanking::from_scores(RankingMethod::RReliefF, &m.names, weights, true, None, positive))
}

#[cfg(test)]
mod tests {
    use super::super::testdata;
    use super::*;

    #[test]
    fn target_copy_beats_noise() {
        let rows: Vec<Vec<f64>> = (0..80).map(|i| vec![i as f64, ((i * 37) % 80) as f64]).collect();
        let targets = rows.iter().map(|r| 5.0 + r[0] / 4.0).collect();
        let m = FeatureMatrix::new(vec!["x1".into(), "x2".into()], rows, targets, vec!["s".into(); 80]).unwrap();
        let r = rank_rrelieff(&m, 10, None).unwrap();
        assert!(r.scores[0] > r.scores[1]);
    }

    #[test]
    fn duplicate_columns_get_equal_weights() {
        let mut m = testdata::relevant_three(60, 4, 8);
        for r in m.rows.iter_mut() {
            let v = r[0];
            r.push(v);
        }
        m.names.push("dup".into());
        let r = rank_rrelieff(&m, 10, None).unwrap();
        assert!((r.scores[0] - r.scores[4]).abs() < 1e-12);
    }

    #[test]
    fn order_survives_affine_rescaling() {
        let m = testdata::relevant_three(100, 6, 2);
        let a = rank_rrelieff(&m, 10, None).unwrap();
        let b = rank_rrelieff(&testdata::rescaled(&m), 10, None).unwrap();
        assert_eq!(a.order, b.order);
    }
}
