use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use ppg_rr::eval::model_hash;
use ppg_rr::models::{bayes_opt_gpr_trace, fit_rows};
use ppg_rr::pipeline::{extract, load_inputs, process_record, run_pipeline, evaluate_matrix, PipelineConfig};
use ppg_rr::select::rank;
use ppg_rr::synth::{generate_cohort, write_recording_csv, CohortSpec};
use ppg_rr::{compute_metrics, select_top_k, FeatureMatrix, MetricsReport, ModelSpec, Quality, TrainedModel};

use crate::table::{num, Table};
use crate::{Cli, Command, EvaluateArgs, ExtractArgs, Family, FeatureSource, InputArgs, SelectArgs, SynthArgs, TrainArgs, TuneArgs};

pub fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = cli.out_dir {
        cfg.output.out_dir = dir;
    }
    match cli.command {
        Command::Synth(a) => synth(&cfg, &a),
        Command::Ingest(a) => ingest(&with_inputs(cfg, &a)),
        Command::Extract(a) => extract_cmd(&with_inputs(cfg.clone(), &a.input), &a),
        Command::Select(a) => select(&cfg, &a),
        Command::Train(a) => train(&cfg, &a),
        Command::Tune(a) => tune(&cfg, &a),
        Command::Evaluate(a) => evaluate(&cfg, &a),
        Command::Run(a) => run(&with_inputs(cfg, &a)),
    }
}

fn with_inputs(mut cfg: PipelineConfig, a: &InputArgs) -> PipelineConfig {
    if !a.inputs.is_empty() {
        cfg.input.paths = a.inputs.clone();
    }
    cfg
}

fn out_dir(cfg: &PipelineConfig) -> Result<&Path> {
    let dir = cfg.output.out_dir.as_path();
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn load_matrix(cfg: &PipelineConfig, src: &FeatureSource) -> Result<FeatureMatrix> {
    match &src.features {
        Some(p) => {
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            Ok(FeatureMatrix::read_csv(f).with_context(|| format!("reading {}", p.display()))?)
        }
        None => Ok(extract(cfg)?.0.matrix),
    }
}

fn metrics_table(rows: &[(String, &MetricsReport)]) -> Table {
    let mut t = Table::new(["", "n", "MAE", "RMSE", "R", "2SD", "LOA"]);
    for (name, m) in rows {
        t.row([
            name.clone(),
            m.n.to_string(),
            num(m.mae),
            num(m.rmse),
            m.r.map_or("-".into(), num),
            num(m.sd2),
            format!("[{}, {}]", num(m.loa_low), num(m.loa_high)),
        ]);
    }
    t
}

fn synth(cfg: &PipelineConfig, a: &SynthArgs) -> Result<()> {
    if !(a.rr_min < a.rr_max) {
        bail!("--rr-min must be below --rr-max");
    }
    let cohort = CohortSpec {
        subjects: a.subjects,
        segments_per_subject: a.segments,
        snr_db: a.snr_db,
        rr_range: (a.rr_min, a.rr_max),
        seed: cfg.seed,
        ..CohortSpec::default()
    };
    let dir = out_dir(cfg)?;
    let mut files = BTreeMap::new();
    let mut t = Table::new(["subject", "segments", "mean rr", "file"]);
    for r in generate_cohort(&cohort)? {
        let path = dir.join(format!("{}.csv", r.subject_id));
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        write_recording_csv(BufWriter::new(f), &r.ppg, &r.rr.samples)?;
        let mean_rr = r.rr.samples.iter().sum::<f64>() / r.rr.len() as f64;
        t.row([r.subject_id.clone(), a.segments.to_string(), num(mean_rr), path.display().to_string()]);
        files.insert(r.subject_id, path);
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        cohort: &'a CohortSpec,
        files: BTreeMap<String, PathBuf>,
    }
    write_json(dir, "synth.json", &Summary { cohort: &cohort, files })?;
    println!("{}", t.render());
    Ok(())
}

#[derive(Serialize, Default)]
struct SubjectCounts {
    segments: usize,
    accepted: usize,
    rejected: usize,
    rows: usize,
}

fn ingest(cfg: &PipelineConfig) -> Result<()> {
    let (ex, cache_hit, key) = extract(cfg)?;
    let dir = out_dir(cfg)?;
    ex.write_quality_csv(&dir.join("quality.csv"))?;
    let mut per: BTreeMap<String, SubjectCounts> = BTreeMap::new();
    let mut reasons: BTreeMap<String, usize> = BTreeMap::new();
    for s in &ex.segments {
        let c = per.entry(s.subject.clone()).or_default();
        c.segments += 1;
        match &s.quality {
            Quality::Accepted => c.accepted += 1,
            Quality::Rejected { reason } => {
                c.rejected += 1;
                *reasons.entry(reason.to_string()).or_default() += 1;
            }
            Quality::Pending => {}
        }
        c.rows += usize::from(s.used);
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        feature_cache_key: String,
        cache_hit: bool,
        segments: usize,
        accepted: usize,
        subjects: &'a BTreeMap<String, SubjectCounts>,
        rejections: &'a BTreeMap<String, usize>,
    }
    write_json(
        dir,
        "ingest.json",
        &Summary {
            feature_cache_key: key,
            cache_hit,
            segments: ex.segments.len(),
            accepted: ex.accepted(),
            subjects: &per,
            rejections: &reasons,
        },
    )?;
    let mut t = Table::new(["subject", "segments", "accepted", "rejected"]);
    for (s, c) in &per {
        t.row([s.clone(), c.segments.to_string(), c.accepted.to_string(), c.rejected.to_string()]);
    }
    println!("{}", t.render());
    Ok(())
}

fn extract_cmd(cfg: &PipelineConfig, a: &ExtractArgs) -> Result<()> {
    let (ex, cache_hit, key) = extract(cfg)?;
    let dir = out_dir(cfg)?;
    let path = dir.join("features.csv");
    ex.matrix.write_csv(BufWriter::new(File::create(&path)?))?;
    ex.write_quality_csv(&dir.join("quality.csv"))?;
    if a.dump_fiducials {
        dump_fiducials(cfg, &dir.join("fiducials.csv"))?;
    }
    #[derive(Serialize)]
    struct Summary {
        feature_cache_key: String,
        cache_hit: bool,
        segments: usize,
        accepted: usize,
        rows: usize,
        features: usize,
    }
    let s = Summary {
        feature_cache_key: key,
        cache_hit,
        segments: ex.segments.len(),
        accepted: ex.accepted(),
        rows: ex.matrix.n_rows(),
        features: ex.matrix.n_features(),
    };
    write_json(dir, "extract.json", &s)?;
    let mut t = Table::new(["segments", "accepted", "rows", "features", "cache"]);
    t.row([
        s.segments.to_string(),
        s.accepted.to_string(),
        s.rows.to_string(),
        s.features.to_string(),
        if cache_hit { "hit" } else { "miss" }.to_string(),
    ]);
    println!("{}", t.render());
    Ok(())
}

fn dump_fiducials(cfg: &PipelineConfig, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut header_done = false;
    for (subject, rec) in load_inputs(cfg)? {
        for p in process_record(&subject, &rec, cfg)? {
            let id = p.segment.id();
            for (b, beat) in p.fiducials.beats.iter().enumerate() {
                let serde_json::Value::Object(fields) = serde_json::to_value(beat)? else {
                    bail!("beat landmarks did not serialize to an object");
                };
                if !header_done {
                    let mut h = vec!["segment".to_string(), "beat".to_string()];
                    h.extend(fields.keys().cloned());
                    w.write_record(&h)?;
                    header_done = true;
                }
                let mut row = vec![id.clone(), b.to_string()];
                row.extend(fields.values().map(|v| v.to_string()));
                w.write_record(&row)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn select(cfg: &PipelineConfig, a: &SelectArgs) -> Result<()> {
    let m = load_matrix(cfg, &a.source)?;
    let method = a.method.unwrap_or(cfg.selection.method);
    let r = rank(method, &m, cfg.seed)?;
    let k = a.k.or(cfg.selection.k).unwrap_or(r.selected_k);
    if k == 0 || k > m.n_features() {
        bail!("k = {k} outside [1, {}]", m.n_features());
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        k: usize,
        selected: Vec<&'a str>,
        ranking: &'a ppg_rr::FeatureRanking,
    }
    let dir = out_dir(cfg)?;
    write_json(dir, "select.json", &Summary { k, selected: r.top_names(k), ranking: &r })?;
    let mut t = Table::new(["rank", "feature", "score"]);
    for (i, &j) in r.order.iter().take(k).enumerate() {
        t.row([(i + 1).to_string(), r.names[j].clone(), format!("{:.4e}", r.scores[j])]);
    }
    println!("{method}: keeping {k} of {}\n{}", m.n_features(), t.render());
    Ok(())
}

fn family_spec(f: Family) -> ModelSpec {
    match f {
        Family::Gpr => ModelSpec::default(),
        Family::Svr => ModelSpec::Svr(Default::default()),
        Family::Trees => ModelSpec::BaggedTrees(Default::default()),
        Family::Grnn => ModelSpec::Grnn(Default::default()),
        Family::Mlp => ModelSpec::Mlp(Default::default()),
    }
}

#[derive(Serialize, serde::Deserialize)]
struct TrainSummary {
    spec: ModelSpec,
    features: Vec<String>,
    rows: usize,
    model_file: String,
    model_sha256: String,
    /// In-sample fit; optimistic by construction.
    training_metrics: MetricsReport,
}

fn train(cfg: &PipelineConfig, a: &TrainArgs) -> Result<()> {
    let m = load_matrix(cfg, &a.source)?;
    let select = !a.no_select && (cfg.selection.enabled || a.method.is_some());
    let m = if select {
        let method = a.method.unwrap_or(cfg.selection.method);
        let r = rank(method, &m, cfg.seed)?;
        let k = a.k.or(cfg.selection.k).unwrap_or(r.selected_k).min(m.n_features());
        select_top_k(&r, k, &m)?
    } else {
        m
    };
    let spec = a.family.map_or_else(|| cfg.model.clone(), family_spec);
    let model = fit_rows(&spec, &m.rows, &m.targets, cfg.seed)?;
    let pred = ppg_rr::predict(&model, &m.rows)?;
    let dir = out_dir(cfg)?;
    model.save(&dir.join("model.json"))?;
    let summary = TrainSummary {
        spec: model.spec.clone(),
        features: m.names.clone(),
        rows: m.n_rows(),
        model_file: "model.json".into(),
        model_sha256: model_hash(&model)?,
        training_metrics: compute_metrics(&pred, &m.targets)?,
    };
    write_json(dir, "train.json", &summary)?;
    println!(
        "{} on {} rows × {} features\n{}",
        model.spec.family(),
        m.n_rows(),
        m.n_features(),
        metrics_table(&[("training".into(), &summary.training_metrics)]).render()
    );
    Ok(())
}

fn tune(cfg: &PipelineConfig, a: &TuneArgs) -> Result<()> {
    let m = load_matrix(cfg, &a.source)?;
    let iterations = a.iterations.unwrap_or(cfg.tuning.iterations);
    let (spec, trace) = bayes_opt_gpr_trace(&m, iterations, cfg.seed)?;
    #[derive(Serialize)]
    struct Step {
        point: Vec<f64>,
        cv_rmse: Option<f64>,
        best_so_far: Option<f64>,
    }
    let finite = |v: f64| v.is_finite().then_some(v);
    let history: Vec<Step> = trace
        .history
        .iter()
        .enumerate()
        .map(|(i, (x, v))| Step {
            point: x.clone(),
            cv_rmse: finite(*v),
            best_so_far: finite(trace.incumbent_after(i + 1)),
        })
        .collect();
    #[derive(Serialize)]
    struct Summary {
        spec: ModelSpec,
        best_cv_rmse: f64,
        iterations: usize,
        history: Vec<Step>,
    }
    let dir = out_dir(cfg)?;
    write_json(
        dir,
        "tune.json",
        &Summary {
            spec: spec.clone(),
            best_cv_rmse: trace.best_value,
            iterations,
            history,
        },
    )?;
    let mut t = Table::new(["setting", "value"]);
    if let ModelSpec::Gpr(p) = &spec {
        t.row(["kernel".to_string(), format!("{:?}", p.kernel)]);
        t.row(["basis".to_string(), format!("{:?}", p.basis)]);
        t.row(["sigma".to_string(), format!("{:.4}", p.sigma_noise)]);
        t.row(["kernel scale".to_string(), format!("{:.4}", p.kernel_scale)]);
        t.row(["signal variance".to_string(), format!("{:.4}", p.signal_variance)]);
    }
    t.row(["CV RMSE".to_string(), num(trace.best_value)]);
    println!("{}", t.render());
    Ok(())
}

fn evaluate(cfg: &PipelineConfig, a: &EvaluateArgs) -> Result<()> {
    let m = load_matrix(cfg, &a.source)?;
    let dir = out_dir(cfg)?;
    if let Some(trained) = &a.trained {
        let summary: TrainSummary = serde_json::from_slice(
            &std::fs::read(trained.join("train.json")).with_context(|| format!("reading {}/train.json", trained.display()))?,
        )?;
        let model = TrainedModel::load(&trained.join(&summary.model_file))?;
        let cols = summary
            .features
            .iter()
            .map(|n| m.column_index(n).with_context(|| format!("feature {n} missing from the matrix")))
            .collect::<Result<Vec<usize>>>()?;
        let sub = m.subset_columns(&cols);
        let pred = ppg_rr::predict(&model, &sub.rows)?;
        let report = compute_metrics(&pred, &sub.targets)?;
        write_json(dir, "metrics.json", &report)?;
        let mut w = csv::Writer::from_path(dir.join("predictions.csv"))?;
        w.write_record(["subject", "reference", "prediction"])?;
        for ((g, t), p) in sub.groups.iter().zip(&sub.targets).zip(&pred) {
            w.write_record([g.clone(), format!("{t:?}"), format!("{p:?}")])?;
        }
        w.flush()?;
        println!("{}", metrics_table(&[("scored".into(), &report)]).render());
        return Ok(());
    }
    let out = evaluate_matrix(&m, cfg)?;
    out.write_artifacts(dir)?;
    let mut rows: Vec<(String, &MetricsReport)> =
        out.folds.iter().map(|f| (format!("fold {}", f.fold), &f.metrics)).collect();
    rows.push(("pooled".into(), &out.report));
    println!("{}", metrics_table(&rows).render());
    Ok(())
}

fn run(cfg: &PipelineConfig) -> Result<()> {
    let s = run_pipeline(cfg)?;
    let mut rows: Vec<(String, &MetricsReport)> =
        s.output.folds.iter().map(|f| (format!("fold {}", f.fold), &f.metrics)).collect();
    rows.push(("pooled".into(), &s.report));
    println!(
        "{} segments, {} accepted, {} rows (feature cache {})\n{}\nartifacts in {}",
        s.segments_total,
        s.segments_accepted,
        s.rows,
        if s.cache_hit { "hit" } else { "miss" },
        metrics_table(&rows).render(),
        s.out_dir.display()
    );
    Ok(())
}
