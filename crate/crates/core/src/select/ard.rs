use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{standardized, FeatureRanking, RankingMethod};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::models::gpr::ard_lml_with_gradient;
use crate::optim::{lbfgs, LbfgsOptions};
use crate::stats;

const RESTARTS: usize = 5;
const LN_SCALE_RANGE: (f64, f64) = (-5.0, 10.0);
const LN_NOISE_FLOOR: f64 = -7.0;

/// Ranks features by the learned length scales of an ARD squared-exponential
/// GP; score = exp(-ℓ), so short length scales rank first.
///
/// The default `selected_k` counts features whose score is within a factor
/// of 100 of the best one.
pub fn rank_fitrgp_ard(m: &FeatureMatrix, seed: u64) -> Result<FeatureRanking> {
    let d = m.n_features();
    let n = m.n_rows();
    if n < 4 {
        return Err(Error::InvalidArgument(format!("ARD ranking needs at least 4 rows, got {n}")));
    }
    if n < 2 * d {
        log::warn!("ARD ranking on {n} rows for {d} features; length scales will be poorly determined");
    }
    let (x, yc) = standardized(m);
    let y_sd = stats::std_dev(&yc);
    if y_sd <= 1e-12 * stats::mean(&m.targets).abs().max(1.0) {
        // nothing to explain: every feature is equally (ir)relevant
        return Ok(FeatureRanking::from_scores(RankingMethod::FitrgpArd, &m.names, vec![(-1.0f64).exp(); d], true, None, d));
    }
    let y: Vec<f64> = yc.iter().map(|v| v / y_sd).collect();

    let within = |p: &[f64]| {
        p[..d].iter().all(|l| (LN_SCALE_RANGE.0..=LN_SCALE_RANGE.1).contains(l))
            && p[d].abs() <= 5.0
            && p[d + 1] >= LN_NOISE_FLOOR
            && p[d + 1] <= 3.0
    };
    let objective = |p: &[f64]| -> (f64, Vec<f64>) {
        if !within(p) {
            return (f64::INFINITY, vec![0.0; p.len()]);
        }
        match ard_lml_with_gradient(p, &x, &y) {
            Ok((l, g)) => (-l, g.iter().map(|v| -v).collect()),
            Err(_) => (f64::INFINITY, vec![0.0; p.len()]),
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base_ls = (d as f64).sqrt().ln();
    let opts = LbfgsOptions {
        max_iters: 300,
        ..LbfgsOptions::default()
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut failures = Vec::new();
    for r in 0..RESTARTS {
        let mut x0: Vec<f64> = (0..d)
            .map(|_| if r == 0 { base_ls } else { base_ls + rng.random_range(-1.0..1.0) })
            .collect();
        x0.push(if r == 0 { 0.0 } else { rng.random_range(-0.5..0.5) });
        x0.push(if r == 0 { 0.5f64.ln() } else { rng.random_range(-3.0..0.0) });
        let res = lbfgs(objective, &x0, &opts);
        if !res.value.is_finite() {
            failures.push(format!("restart {r}: no finite likelihood"));
            continue;
        }
        log::debug!("ARD restart {r}: -lml {:.4} after {} evaluations", res.value, res.evaluations);
        if best.as_ref().map_or(true, |(v, _)| res.value < *v) {
            best = Some((res.value, res.x));
        }
    }
    let Some((_, p)) = best else {
        return Err(Error::Optimization(format!("ARD fit failed: {}", failures.join("; "))));
    };
    let ln_l = &p[..d];
    let scores: Vec<f64> = ln_l.iter().map(|l| (-l.exp()).exp()).collect();
    let l_min = ln_l.iter().copied().fold(f64::INFINITY, f64::min).exp();
    let k = ln_l.iter().filter(|l| l.exp() <= l_min + 100f64.ln()).count();
    // scores underflow for long scales; fall back on ℓ itself for the order
    let ls: Vec<f64> = ln_l.iter().map(|l| -l).collect();
    let mut r = FeatureRanking::from_scores(RankingMethod::FitrgpArd, &m.names, ls, true, None, k);
    r.scores = scores;
    Ok(r)
}
