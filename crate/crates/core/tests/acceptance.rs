//! Acceptance suite. Prints one line per criterion and exits non-zero if
//! any criterion fails. Criterion 7 needs real recordings: point
//! `PPG_RR_DATASET_DIR` at a directory of `t,ppg,rr` CSV files (or
//! `PPG_RR_DATASET_CONFIG` at a pipeline TOML) to enable it.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ppg_rr::models::gpr::{ard_lml_with_gradient, fit_gp, log_marginal_likelihood, Basis, GprParams, Kernel};
use ppg_rr::pipeline::{evaluate_matrix, extract_from_records, run_pipeline, OutputSettings, PipelineConfig};
use ppg_rr::select::{lasso_coordinate_descent, rank_fitrgp_ard, rank_lasso, rank_rrelieff};
use ppg_rr::signal::{butterworth_zero_phase, Record};
use ppg_rr::synth::{generate_cohort, write_recording_csv, CohortSpec};
use ppg_rr::{compute_metrics, FeatureMatrix, FilterSpec, TimeSeries};

enum Outcome {
    Pass(String),
    Fail(String),
    Skipped(String),
}

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

// ---------------------------------------------------------------- 1

/// Brute-force metrics. SD and the baseline MSE come from all ordered pairs,
/// `Σᵢ Σⱼ (aᵢ - aⱼ)² / (2n²)`, which equals the 1/n variance without ever
/// forming a mean.
struct Oracle {
    mae: f64,
    rmse: f64,
    r: Option<f64>,
    sd: f64,
    bias: f64,
}

fn pair_variance(a: &[f64]) -> f64 {
    let n = a.len() as f64;
    let mut s = 0.0;
    for x in a {
        for y in a {
            s += (x - y) * (x - y);
        }
    }
    s / (2.0 * n * n)
}

fn oracle(pred: &[f64], truth: &[f64]) -> Oracle {
    let n = pred.len() as f64;
    let e: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| p - t).collect();
    let mae = e.iter().map(|v| v.abs()).sum::<f64>() / n;
    let mse = e.iter().map(|v| v * v).sum::<f64>() / n;
    let base = pair_variance(truth);
    let r = (base > 0.0).then(|| (1.0 - mse / base).max(0.0).sqrt());
    Oracle {
        mae,
        rmse: mse.sqrt(),
        r,
        sd: pair_variance(&e).sqrt(),
        bias: e.iter().sum::<f64>() / n,
    }
}

fn metrics_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tol = 1e-12;
    for trial in 0..1000 {
        let n = rng.random_range(1..60);
        let truth: Vec<f64> = (0..n).map(|_| rng.random_range(5.0..35.0)).collect();
        let scale = rng.random_range(0.0..4.0);
        let shift = rng.random_range(-2.0..2.0);
        let pred: Vec<f64> = truth.iter().map(|t| t + shift + scale * rng.random_range(-1.0..1.0)).collect();
        let got = compute_metrics(&pred, &truth).map_err(|e| format!("trial {trial}: {e}"))?;
        let want = oracle(&pred, &truth);
        let pairs = [
            ("MAE", got.mae, want.mae),
            ("RMSE", got.rmse, want.rmse),
            ("SD", got.sd, want.sd),
            ("2SD", got.sd2, 2.0 * want.sd),
            ("bias", got.bias, want.bias),
            ("LOA low", got.loa_low, want.bias - 1.96 * want.sd),
            ("LOA high", got.loa_high, want.bias + 1.96 * want.sd),
        ];
        for (name, g, w) in pairs {
            ensure(close(g, w, tol), || format!("trial {trial} {name}: {g} vs {w}"))?;
        }
        match (got.r, want.r) {
            (Some(g), Some(w)) => ensure(close(g, w, tol), || format!("trial {trial} R: {g} vs {w}"))?,
            (None, None) => {}
            (g, w) => return Err(format!("trial {trial} R: {g:?} vs {w:?}")),
        }
    }
    Ok("1000 random pairs agree to 1e-12".into())
}

// ---------------------------------------------------------------- 2

/// Amplitude and phase of the `f` Hz component over the central half of
/// `x`, by least squares on sin/cos.
fn tone(x: &[f64], fs: f64, f: f64) -> (f64, f64) {
    let (lo, hi) = (x.len() / 4, 3 * x.len() / 4);
    let w = 2.0 * std::f64::consts::PI * f / fs;
    let (mut ss, mut sc, mut cc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, v) in x.iter().enumerate().take(hi).skip(lo) {
        let (s, c) = (w * i as f64).sin_cos();
        ss += s * s;
        sc += s * c;
        cc += c * c;
        ys += v * s;
        yc += v * c;
    }
    let det = ss * cc - sc * sc;
    let a = (ys * cc - yc * sc) / det;
    let b = (yc * ss - ys * sc) / det;
    (a.hypot(b), b.atan2(a))
}

/// Squared magnitude of one pass of a bilinear-transformed Butterworth
/// low-pass of the given order.
fn butterworth_power(f: f64, fc: f64, fs: f64, order: i32) -> f64 {
    let pi = std::f64::consts::PI;
    let ratio = (pi * f / fs).tan() / (pi * fc / fs).tan();
    1.0 / (1.0 + ratio.powi(2 * order))
}

fn filter_properties() -> Check {
    let fs = 500.0;
    let spec = FilterSpec::default();
    let run = |f: f64| -> Result<(f64, f64), String> {
        let x: Vec<f64> = (0..(32.0 * fs) as usize)
            .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / fs).sin())
            .collect();
        let ts = TimeSeries::new(x, fs, 0.0).map_err(|e| e.to_string())?;
        let y = butterworth_zero_phase(&ts, &spec).map_err(|e| e.to_string())?;
        Ok(tone(&y.samples, fs, f))
    };
    let (g1, p1) = run(1.0)?;
    ensure((g1 - 1.0).abs() < 0.01, || format!("1 Hz gain {g1}"))?;
    ensure(p1.abs() < 1e-3, || format!("1 Hz phase {p1} rad"))?;

    let (g40, _) = run(40.0)?;
    let att = -20.0 * g40.log10();
    // forward and backward passes square the one-pass power response
    let want = -10.0 * butterworth_power(40.0, spec.cutoff_hz, fs, spec.order as i32).log10() * 2.0;
    ensure(att > 40.0, || format!("40 Hz attenuation {att:.1} dB"))?;
    ensure((att - want).abs() < 1.0, || format!("40 Hz attenuation {att:.2} dB, analytic {want:.2} dB"))?;
    Ok(format!(
        "1 Hz gain error {:.2e}, phase {:.2e} rad; 40 Hz down {att:.1} dB (analytic {want:.1})",
        (g1 - 1.0).abs(),
        p1.abs()
    ))
}

// ---------------------------------------------------------------- 3

fn gpr_inputs(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 * 0.9, rng.random_range(-1.0..1.0)]).collect();
    let y1 = x.iter().map(|r| (0.4 * r[0]).sin() + r[1]).collect();
    let y2 = x.iter().map(|r| 0.1 * r[0] * r[0] - r[1]).collect();
    (x, y1, y2)
}

/// Dense LML for a zero-mean GP: `-½ yᵀK⁻¹y - ½ ln|K| - n/2 ln 2π`, via
/// LU rather than Cholesky.
fn dense_lml(k: &DMatrix<f64>, y: &[f64]) -> f64 {
    let n = y.len();
    let yv = DVector::from_column_slice(y);
    let lu = k.clone().lu();
    let sol = lu.solve(&yv).expect("nonsingular");
    -0.5 * yv.dot(&sol) - 0.5 * lu.determinant().ln() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
}

fn se_kernel(x: &[Vec<f64>], ls: &[f64], sf2: f64, sn2: f64) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| {
        let d2: f64 = x[i].iter().zip(&x[j]).zip(ls).map(|((a, b), l)| ((a - b) / l).powi(2)).sum();
        sf2 * (-0.5 * d2).exp() + if i == j { sn2 } else { 0.0 }
    })
}

fn gpr_correctness() -> Check {
    let (x, y1, y2) = gpr_inputs(25, 3);

    let exact = GprParams {
        sigma_noise: 1e-7,
        kernel_scale: 1.0,
        signal_variance: 1.0,
        basis: Basis::Constant,
        kernel: Kernel::IsoSquaredExp,
        length_scales: None,
        optimize: false,
    };
    let gp = fit_gp(&exact, &x, &y1).map_err(|e| e.to_string())?;
    let interp = x.iter().zip(&y1).map(|(r, t)| (gp.predict_mean(r) - t).abs()).fold(0.0, f64::max);
    ensure(interp < 1e-6, || format!("interpolation error {interp:e}"))?;

    let noisy = GprParams {
        sigma_noise: 0.3,
        basis: Basis::Linear,
        ..exact.clone()
    };
    let combo: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
    let g1 = fit_gp(&noisy, &x, &y1).map_err(|e| e.to_string())?;
    let g2 = fit_gp(&noisy, &x, &y2).map_err(|e| e.to_string())?;
    let gc = fit_gp(&noisy, &x, &combo).map_err(|e| e.to_string())?;
    let probes: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 * 0.55 - 1.0, (i as f64).cos()]).collect();
    let lin = probes
        .iter()
        .map(|p| (gc.predict_mean(p) - (2.0 * g1.predict_mean(p) - 0.5 * g2.predict_mean(p))).abs())
        .fold(0.0, f64::max);
    ensure(lin < 1e-8, || format!("linearity error {lin:e}"))?;

    // value against a dense oracle
    let plain = GprParams {
        basis: Basis::None,
        ..noisy.clone()
    };
    let lml = log_marginal_likelihood(&plain, &x, &y1).map_err(|e| e.to_string())?;
    let want = dense_lml(&se_kernel(&x, &[1.0, 1.0], 1.0, 0.09), &y1);
    ensure(close(lml, want, 1e-9), || format!("LML {lml} vs dense {want}"))?;

    // d LML / d ln σ = σ² tr(ααᵀ - K⁻¹), against central differences
    let k = se_kernel(&x, &[1.0, 1.0], 1.0, 0.09);
    let kinv = k.clone().try_inverse().ok_or("singular kernel")?;
    let alpha = &kinv * DVector::from_column_slice(&y1);
    let analytic = 0.09 * ((&alpha * alpha.transpose()) - &kinv).trace();
    let h = 1e-5;
    let at = |ln_s: f64| {
        let p = GprParams {
            sigma_noise: ln_s.exp(),
            ..plain.clone()
        };
        log_marginal_likelihood(&p, &x, &y1).map_err(|e| e.to_string())
    };
    let fd = (at(0.3f64.ln() + h)? - at(0.3f64.ln() - h)?) / (2.0 * h);
    ensure((fd - analytic).abs() <= 1e-4 * analytic.abs(), || {
        format!("d/dlnσ: finite difference {fd} vs analytic {analytic}")
    })?;

    // full ARD gradient against central differences of its own value
    let p = [0.3, -0.2, 0.1, -1.1];
    let (v, g) = ard_lml_with_gradient(&p, &x, &y1).map_err(|e| e.to_string())?;
    let ls = [p[0].exp(), p[1].exp()];
    let dense = dense_lml(&se_kernel(&x, &ls, (2.0 * p[2]).exp(), (2.0 * p[3]).exp()), &y1);
    ensure(close(v, dense, 1e-9), || format!("ARD LML {v} vs dense {dense}"))?;
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let (mut up, mut dn) = (p, p);
        up[i] += h;
        dn[i] -= h;
        let f_up = ard_lml_with_gradient(&up, &x, &y1).map_err(|e| e.to_string())?.0;
        let f_dn = ard_lml_with_gradient(&dn, &x, &y1).map_err(|e| e.to_string())?.0;
        let fd = (f_up - f_dn) / (2.0 * h);
        let rel = (fd - g[i]).abs() / fd.abs().max(1e-8);
        worst = worst.max(rel);
        ensure(rel <= 1e-4, || format!("ARD gradient {i}: finite difference {fd} vs {}", g[i]))?;
    }
    Ok(format!(
        "interpolation {interp:.1e}, linearity {lin:.1e}, gradient rel. error ≤ {:.1e}",
        worst.max((fd - analytic).abs() / analytic.abs())
    ))
}

// ---------------------------------------------------------------- 4

/// 200 × 20 uniform features; the target uses columns 0 and 1 linearly and
/// column 2 through a sine.
fn three_relevant(seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..200).map(|_| (0..20).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let targets = rows
        .iter()
        .map(|r| 18.0 + 3.0 * r[0] - 2.5 * r[1] + 4.0 * (1.8 * r[2]).sin() + 0.2 * rng.random_range(-1.0..1.0))
        .collect();
    let names = (0..20).map(|j| format!("f{j}")).collect();
    let groups = (0..200).map(|i| format!("s{}", i % 10)).collect();
    FeatureMatrix::new(names, rows, targets, groups).expect("valid matrix")
}

fn selection_sanity() -> Check {
    let m = three_relevant(4);
    let rankings = [
        ("FitrgpArd", rank_fitrgp_ard(&m, 0)),
        ("Lasso", rank_lasso(&m, None)),
        ("RReliefF", rank_rrelieff(&m, 10, None)),
    ];
    let mut notes = Vec::new();
    for (name, r) in rankings {
        let r = r.map_err(|e| format!("{name}: {e}"))?;
        let top = &r.order[..6];
        ensure((0..3).all(|j| top.contains(&j)), || format!("{name} top 6 = {top:?}"))?;
        let worst = (0..3).map(|j| r.order.iter().position(|&o| o == j).unwrap()).max().unwrap();
        notes.push(format!("{name} ≤ {}", worst + 1));
    }
    Ok(format!("relevant ranks: {}", notes.join(", ")))
}

// ---------------------------------------------------------------- 5

fn soft(z: f64, t: f64) -> f64 {
    z.signum() * (z.abs() - t).max(0.0)
}

fn lasso_oracle() -> Check {
    let (n, d) = (64, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
    // columns with XᵀX = n I
    let q = a.qr().q() * (n as f64).sqrt();
    let x: Vec<Vec<f64>> = (0..n).map(|i| (0..d).map(|j| q[(i, j)]).collect()).collect();
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let z: Vec<f64> = (0..d).map(|j| (0..n).map(|i| x[i][j] * y[i]).sum::<f64>() / n as f64).collect();
    let zmax = z.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    for frac in [0.0, 0.05, 0.2, 0.5, 0.8, 1.2] {
        let lambda = frac * zmax;
        let mut beta = vec![0.0; d];
        lasso_coordinate_descent(&x, &y, lambda, &mut beta).map_err(|e| e.to_string())?;
        for j in 0..d {
            let err = (beta[j] - soft(z[j], lambda)).abs();
            worst = worst.max(err);
            ensure(err <= 1e-8, || format!("λ = {lambda}: β{j} = {} vs {}", beta[j], soft(z[j], lambda)))?;
        }
    }
    Ok(format!("max deviation {worst:.1e} over 6 penalties"))
}

// ---------------------------------------------------------------- 6

fn end_to_end() -> Check {
    let cohort = CohortSpec {
        subjects: 10,
        segments_per_subject: 20,
        seed: 6,
        ..CohortSpec::default()
    };
    let records: Vec<(String, Record)> = generate_cohort(&cohort)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|r| {
            let rec = Record {
                ppg: r.ppg,
                reference_rr: Some(r.rr),
            };
            (r.subject_id, rec)
        })
        .collect();
    let cfg = PipelineConfig {
        seed: 6,
        ..PipelineConfig::default()
    };
    let ex = extract_from_records(&records, &cfg).map_err(|e| e.to_string())?;
    let out = evaluate_matrix(&ex.matrix, &cfg).map_err(|e| e.to_string())?;
    let truth: Vec<f64> = out.pairs.iter().map(|p| p.0).collect();
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let baseline = truth.iter().map(|t| (t - mean).abs()).sum::<f64>() / truth.len() as f64;
    let r = &out.report;
    let detail = format!(
        "{} of 200 segments used; MAE {:.2}, RMSE {:.2}, baseline MAE {:.2} (ratio {:.2})",
        r.n,
        r.mae,
        r.rmse,
        baseline,
        r.mae / baseline
    );
    ensure(r.mae <= 0.4 * baseline, || detail.clone())?;
    ensure(r.rmse >= r.mae, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 7

fn dataset_config() -> Option<Result<PipelineConfig, String>> {
    if let Ok(path) = std::env::var("PPG_RR_DATASET_CONFIG") {
        return Some(PipelineConfig::load(Path::new(&path)).map_err(|e| e.to_string()));
    }
    let dir = PathBuf::from(std::env::var("PPG_RR_DATASET_DIR").ok()?);
    if !dir.is_dir() {
        return None;
    }
    let mut cfg = PipelineConfig::default();
    cfg.input.paths = vec![dir];
    Some(Ok(cfg))
}

fn dataset_reproduction() -> Outcome {
    let Some(cfg) = dataset_config() else {
        return Outcome::Skipped("no dataset (set PPG_RR_DATASET_DIR or PPG_RR_DATASET_CONFIG)".into());
    };
    let run = || -> Check {
        let mut cfg = cfg?;
        let out = tempfile::tempdir().map_err(|e| e.to_string())?;
        cfg.tuning.enabled = true;
        cfg.selection.enabled = true;
        cfg.selection.method = ppg_rr::RankingMethod::FitrgpArd;
        cfg.output.out_dir = out.path().to_path_buf();
        let s = run_pipeline(&cfg).map_err(|e| e.to_string())?;
        let r = &s.report;
        let detail = format!("RMSE {:.2}, MAE {:.2}, 2SD {:.2} over {} segments", r.rmse, r.mae, r.sd2, r.n);
        let inside = (2.0..=3.5).contains(&r.rmse) && (1.5..=2.6).contains(&r.mae) && (4.0..=6.5).contains(&r.sd2);
        ensure(inside, || detail.clone())?;
        Ok(detail)
    };
    match run() {
        Ok(d) => Outcome::Pass(d),
        Err(d) => Outcome::Fail(d),
    }
}

// ---------------------------------------------------------------- 8

fn determinism() -> Check {
    let data = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cohort = CohortSpec {
        subjects: 4,
        segments_per_subject: 10,
        seed: 8,
        ..CohortSpec::default()
    };
    for r in generate_cohort(&cohort).map_err(|e| e.to_string())? {
        let f = std::fs::File::create(data.path().join(format!("{}.csv", r.subject_id))).map_err(|e| e.to_string())?;
        write_recording_csv(f, &r.ppg, &r.rr.samples).map_err(|e| e.to_string())?;
    }
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let out = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut cfg = PipelineConfig {
            seed: 8,
            output: OutputSettings {
                out_dir: out.path().to_path_buf(),
                cache_dir: None,
            },
            ..PipelineConfig::default()
        };
        cfg.input.paths = vec![data.path().to_path_buf()];
        run_pipeline(&cfg).map_err(|e| e.to_string())?;
        outputs.push(std::fs::read(out.path().join("metrics.json")).map_err(|e| e.to_string())?);
    }
    ensure(outputs[0] == outputs[1], || "metrics.json differs between runs".into())?;
    Ok(format!("two cold runs wrote identical metrics.json ({} bytes)", outputs[0].len()))
}

// ----------------------------------------------------------------

fn timed(f: impl FnOnce() -> Check + std::panic::UnwindSafe) -> (Outcome, f64) {
    let start = Instant::now();
    let outcome = match std::panic::catch_unwind(f) {
        Ok(Ok(d)) => Outcome::Pass(d),
        Ok(Err(d)) => Outcome::Fail(d),
        Err(_) => Outcome::Fail("panicked".into()),
    };
    (outcome, start.elapsed().as_secs_f64())
}

fn main() -> ExitCode {
    let criteria: Vec<(u32, &str, Box<dyn FnOnce() -> (Outcome, f64)>)> = vec![
        (1, "metric formulas", Box::new(|| timed(metrics_oracle))),
        (2, "filter response", Box::new(|| timed(filter_properties))),
        (3, "GPR correctness", Box::new(|| timed(gpr_correctness))),
        (4, "selection sanity", Box::new(|| timed(selection_sanity))),
        (5, "lasso soft-threshold", Box::new(|| timed(lasso_oracle))),
        (6, "end-to-end synthetic", Box::new(|| timed(end_to_end))),
        (7, "dataset reproduction", Box::new(|| {
            let start = Instant::now();
            (dataset_reproduction(), start.elapsed().as_secs_f64())
        })),
        (8, "determinism", Box::new(|| timed(determinism))),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        let (outcome, secs) = run();
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skipped(d) => ("SKIPPED", d),
        };
        println!("criterion {id} [{name}]: {tag} ({secs:.1} s) {detail}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
