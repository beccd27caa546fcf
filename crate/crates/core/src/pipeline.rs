//! End-to-end orchestration: load, segment, filter, detect fiducials,
//! screen, extract features, then cross-validate.
//!
//! Feature extraction results are cached under a key derived from the
//! input contents and every setting that influences them, so changing only
//! selection, model or split settings reuses the cached matrix.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{run_experiment_with, ExperimentOutput, MetricsReport, ModelPlan, SelectionConfig, SplitPlan};
use crate::features::{extract_features, feature_registry, FeatureMatrix, REGISTRY_VERSION};
use crate::fiducials::{analyze, FiducialOutcome};
use crate::models::{GprParams, ModelSpec, MODEL_FORMAT_VERSION};
use crate::select::RankingMethod;
use crate::signal::{
    assess_quality, butterworth_zero_phase, load_record, segment_windows, CsvSchema, FilterSpec, Quality,
    QualityThresholds, Record, Segment,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    /// CSV files, or directories whose `*.csv` files are all read. The file
    /// stem is the subject id.
    pub paths: Vec<PathBuf>,
    pub schema: CsvSchema,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            paths: Vec::new(),
            schema: CsvSchema::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSettings {
    pub enabled: bool,
    pub method: RankingMethod,
    pub k: Option<usize>,
}

impl Default for SelectionSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            method: RankingMethod::FitrgpArd,
            k: None,
        }
    }
}

impl SelectionSettings {
    pub fn config(&self) -> Option<SelectionConfig> {
        self.enabled.then(|| SelectionConfig {
            method: self.method,
            k: self.k,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningSettings {
    /// Tune a GPR per fold by Bayesian optimization instead of using `model`.
    pub enabled: bool,
    pub iterations: usize,
}

impl Default for TuningSettings {
    fn default() -> Self {
        Self {
            enabled: false,
            iterations: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSettings {
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
}

impl Default for OutputSettings {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Drives every random choice; overrides `split.seed`.
    pub seed: u64,
    pub input: InputConfig,
    pub window_s: f64,
    pub stride_s: f64,
    pub filter: FilterSpec,
    pub quality: QualityThresholds,
    pub registry_version: u32,
    pub selection: SelectionSettings,
    pub model: ModelSpec,
    pub tuning: TuningSettings,
    pub split: SplitPlan,
    pub output: OutputSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            input: InputConfig::default(),
            window_s: 32.0,
            stride_s: 32.0,
            filter: FilterSpec::default(),
            quality: QualityThresholds::default(),
            registry_version: REGISTRY_VERSION,
            selection: SelectionSettings::default(),
            model: ModelSpec::Gpr(GprParams {
                optimize: true,
                ..GprParams::default()
            }),
            tuning: TuningSettings::default(),
            split: SplitPlan::default(),
            output: OutputSettings::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative input and output paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(base) = path.parent() {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            cfg.input.paths.iter_mut().for_each(fix);
            fix(&mut cfg.output.out_dir);
            if let Some(c) = cfg.output.cache_dir.as_mut() {
                fix(c);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.window_s > 0.0 && self.stride_s > 0.0) {
            return Err(Error::Config("window_s and stride_s must be positive".into()));
        }
        if self.registry_version != REGISTRY_VERSION {
            return Err(Error::Config(format!(
                "feature registry version {} is not supported (this build has {REGISTRY_VERSION})",
                self.registry_version
            )));
        }
        if self.tuning.enabled && self.tuning.iterations < 5 {
            return Err(Error::Config("tuning.iterations must be at least 5".into()));
        }
        self.split_plan().validate()
    }

    pub fn split_plan(&self) -> SplitPlan {
        SplitPlan {
            seed: self.seed,
            ..self.split.clone()
        }
    }

    pub fn model_plan(&self) -> ModelPlan {
        if self.tuning.enabled {
            ModelPlan::TunedGpr {
                iterations: self.tuning.iterations,
            }
        } else {
            ModelPlan::Fixed(self.model.clone())
        }
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.output.cache_dir.clone().unwrap_or_else(|| self.output.out_dir.join("cache"))
    }

    pub fn sha256(&self) -> Result<String> {
        Ok(hex(&Sha256::digest(serde_json::to_vec(self)?)))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Input CSV files in a stable order.
pub fn input_files(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in &cfg.input.paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
                .collect();
            found.sort();
            files.extend(found);
        } else if p.is_file() {
            files.push(p.clone());
        } else {
            return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "input not found")).at_stage(
                "load",
                p.display().to_string(),
            ));
        }
    }
    if files.is_empty() {
        return Err(Error::Empty("no input CSV files configured".into()).at_stage("load", "config"));
    }
    Ok(files)
}

fn subject_of(path: &Path) -> String {
    path.file_stem().map_or_else(|| "unknown".into(), |s| s.to_string_lossy().into_owned())
}

/// One analysed window.
#[derive(Debug, Clone)]
pub struct ProcessedSegment {
    /// Holds the filtered signal and the quality verdict.
    pub segment: Segment,
    pub fiducials: FiducialOutcome,
    /// Present for accepted segments.
    pub features: Option<Vec<f64>>,
}

/// Segment → filter → fiducials → quality → features for one recording.
pub fn process_record(subject: &str, record: &Record, cfg: &PipelineConfig) -> Result<Vec<ProcessedSegment>> {
    cfg.filter.validate(record.ppg.fs).map_err(|e| e.at_stage("filter", subject))?;
    let segments = segment_windows(&record.ppg, record.reference_rr.as_ref(), cfg.window_s, cfg.stride_s, subject)
        .map_err(|e| e.at_stage("segment", subject))?;
    segments
        .into_par_iter()
        .map(|mut seg| {
            let id = seg.id();
            seg.signal = butterworth_zero_phase(&seg.signal, &cfg.filter).map_err(|e| e.at_stage("filter", &id))?;
            let fid = analyze(&seg.signal).map_err(|e| e.at_stage("fiducials", &id))?;
            let seg = assess_quality(seg, &fid, &cfg.quality);
            let features = if seg.is_accepted() {
                Some(extract_features(&fid.beats, &seg).map_err(|e| e.at_stage("features", &id))?.values)
            } else {
                None
            };
            Ok(ProcessedSegment {
                segment: seg,
                fiducials: fid,
                features,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub id: String,
    pub subject: String,
    pub index: usize,
    pub reference_rr: Option<f64>,
    pub quality: Quality,
    pub beats: usize,
    /// Whether the segment became a feature-matrix row.
    pub used: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub matrix: FeatureMatrix,
    pub segments: Vec<SegmentSummary>,
}

impl Extraction {
    pub fn accepted(&self) -> usize {
        self.segments.iter().filter(|s| s.quality == Quality::Accepted).count()
    }

    pub fn write_quality_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["id", "subject", "index", "reference_rr", "verdict", "reason", "beats", "used"])?;
        for s in &self.segments {
            let (verdict, reason) = match &s.quality {
                Quality::Pending => ("pending", String::new()),
                Quality::Accepted => ("accepted", String::new()),
                Quality::Rejected { reason } => ("rejected", reason.to_string()),
            };
            w.write_record([
                s.id.clone(),
                s.subject.clone(),
                s.index.to_string(),
                s.reference_rr.map_or(String::new(), |v| format!("{v:?}")),
                verdict.to_string(),
                reason,
                s.beats.to_string(),
                s.used.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Builds the feature matrix from in-memory recordings. Accepted segments
/// without a reference rate are reported but not used.
pub fn extract_from_records(records: &[(String, Record)], cfg: &PipelineConfig) -> Result<Extraction> {
    let processed: Vec<Vec<ProcessedSegment>> = records
        .par_iter()
        .map(|(subject, rec)| process_record(subject, rec, cfg))
        .collect::<Result<_>>()?;
    let mut matrix = FeatureMatrix::empty(feature_registry().to_vec());
    let mut segments = Vec::new();
    for p in processed.into_iter().flatten() {
        let s = &p.segment;
        let used = matches!((&p.features, s.reference_rr), (Some(_), Some(_)));
        if let (Some(f), Some(rr)) = (p.features, s.reference_rr) {
            matrix.push(f, rr, s.subject_id.clone());
        } else if s.is_accepted() {
            log::warn!("segment {} has no reference rate; left out of the matrix", s.id());
        }
        segments.push(SegmentSummary {
            id: s.id(),
            subject: s.subject_id.clone(),
            index: s.index,
            reference_rr: s.reference_rr,
            quality: s.quality.clone(),
            beats: p.fiducials.peaks.len(),
            used,
        });
    }
    matrix.validate().map_err(|e| e.at_stage("features", "matrix"))?;
    Ok(Extraction { matrix, segments })
}

/// Cache key over input contents and every extraction setting.
pub fn feature_cache_key(files: &[PathBuf], cfg: &PipelineConfig) -> Result<String> {
    let mut h = Sha256::new();
    for f in files {
        let bytes = std::fs::read(f).map_err(|e| Error::io(f, e))?;
        h.update(subject_of(f).as_bytes());
        h.update([0]);
        h.update(Sha256::digest(&bytes));
    }
    #[derive(Serialize)]
    struct Settings<'a> {
        schema: &'a CsvSchema,
        window_s: f64,
        stride_s: f64,
        filter: &'a FilterSpec,
        quality: &'a QualityThresholds,
        registry_version: u32,
        tool_version: &'a str,
    }
    h.update(serde_json::to_vec(&Settings {
        schema: &cfg.input.schema,
        window_s: cfg.window_s,
        stride_s: cfg.stride_s,
        filter: &cfg.filter,
        quality: &cfg.quality,
        registry_version: cfg.registry_version,
        tool_version: TOOL_VERSION,
    })?);
    Ok(hex(&h.finalize()))
}

pub fn load_inputs(cfg: &PipelineConfig) -> Result<Vec<(String, Record)>> {
    input_files(cfg)?
        .par_iter()
        .map(|f| {
            let rec = load_record(f, &cfg.input.schema).map_err(|e| e.at_stage("load", f.display().to_string()))?;
            Ok((subject_of(f), rec))
        })
        .collect()
}

/// Feature extraction with the on-disk cache. Returns the extraction and
/// whether it came from the cache.
pub fn extract(cfg: &PipelineConfig) -> Result<(Extraction, bool, String)> {
    let files = input_files(cfg)?;
    let key = feature_cache_key(&files, cfg)?;
    let cache = cfg.cache_dir().join(format!("features-{key}.json"));
    if let Ok(bytes) = std::fs::read(&cache) {
        match serde_json::from_slice::<Extraction>(&bytes) {
            Ok(ex) => {
                log::info!("feature cache hit {}", cache.display());
                return Ok((ex, true, key));
            }
            Err(e) => log::warn!("ignoring unreadable cache {}: {e}", cache.display()),
        }
    }
    let records = load_inputs(cfg)?;
    let ex = extract_from_records(&records, cfg)?;
    let dir = cfg.cache_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    std::fs::write(&cache, serde_json::to_vec(&ex)?).map_err(|e| Error::io(&cache, e))?;
    Ok((ex, false, key))
}

/// Cross-validates the configured selection and model on a matrix.
pub fn evaluate_matrix(m: &FeatureMatrix, cfg: &PipelineConfig) -> Result<ExperimentOutput> {
    if m.n_rows() == 0 {
        return Err(Error::Empty("no usable segments".into()).at_stage("evaluate", "matrix"));
    }
    run_experiment_with(m, cfg.selection.config().as_ref(), &cfg.model_plan(), &cfg.split_plan())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub feature_registry_version: u32,
    pub model_format_version: u32,
    pub config_sha256: String,
    pub feature_cache_key: Option<String>,
    /// Artifact file name → SHA-256 of its contents.
    pub artifacts: BTreeMap<String, String>,
}

/// Writes `manifest.json` covering the named files in `dir`.
pub fn write_manifest(dir: &Path, cfg: &PipelineConfig, cache_key: Option<String>, files: &[&str]) -> Result<Manifest> {
    let mut artifacts = BTreeMap::new();
    for f in files {
        let p = dir.join(f);
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        artifacts.insert(f.to_string(), hex(&Sha256::digest(&bytes)));
    }
    let manifest = Manifest {
        tool_version: TOOL_VERSION.into(),
        feature_registry_version: REGISTRY_VERSION,
        model_format_version: MODEL_FORMAT_VERSION,
        config_sha256: cfg.sha256()?,
        feature_cache_key: cache_key,
        artifacts,
    };
    let p = dir.join("manifest.json");
    std::fs::write(&p, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&p, e))?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSummary {
    pub segments_total: usize,
    pub segments_accepted: usize,
    pub rows: usize,
    pub cache_hit: bool,
    pub report: MetricsReport,
    pub output: ExperimentOutput,
    pub out_dir: PathBuf,
}

/// Runs every stage and writes the artifacts into `cfg.output.out_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineSummary> {
    cfg.validate()?;
    let (ex, cache_hit, key) = extract(cfg)?;
    log::info!(
        "{} segments, {} accepted, {} rows",
        ex.segments.len(),
        ex.accepted(),
        ex.matrix.n_rows()
    );
    let out = evaluate_matrix(&ex.matrix, cfg)?;

    let dir = &cfg.output.out_dir;
    out.write_artifacts(dir)?;
    let features = dir.join("features.csv");
    let file = std::fs::File::create(&features).map_err(|e| Error::io(&features, e))?;
    ex.matrix.write_csv(std::io::BufWriter::new(file))?;
    ex.write_quality_csv(&dir.join("quality.csv"))?;
    let cfg_path = dir.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml_string()?).map_err(|e| Error::io(&cfg_path, e))?;
    write_manifest(
        dir,
        cfg,
        Some(key),
        &[
            "metrics.json",
            "folds.csv",
            "regression.csv",
            "bland_altman.csv",
            "features.csv",
            "quality.csv",
            "config.toml",
        ],
    )?;
    Ok(PipelineSummary {
        segments_total: ex.segments.len(),
        segments_accepted: ex.accepted(),
        rows: ex.matrix.n_rows(),
        cache_hit,
        report: out.report.clone(),
        output: out,
        out_dir: dir.clone(),
    })
}
