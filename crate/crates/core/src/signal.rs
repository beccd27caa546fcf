//! Loading, windowing, filtering, differentiation and quality screening of
//! PPG recordings.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fiducials::FiducialOutcome;
use crate::stats;

/// Uniformly sampled real-valued signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub samples: Vec<f64>,
    /// Sampling rate in Hz.
    pub fs: f64,
    /// Time of the first sample in seconds.
    pub t0: f64,
}

impl TimeSeries {
    pub fn new(samples: Vec<f64>, fs: f64, t0: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("time series has no samples".into()));
        }
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::InvalidArgument(format!("sampling rate must be positive, got {fs}")));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sample {i}")));
        }
        Ok(Self { samples, fs, t0 })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }

    pub fn time_at(&self, i: usize) -> f64 {
        self.t0 + i as f64 / self.fs
    }

    fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self {
            samples,
            fs: self.fs,
            t0: self.t0,
        }
    }
}

/// Column layout of an input CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub time_col: String,
    pub value_col: String,
    pub rr_col: Option<String>,
    /// Declared sampling rate. Inferred from the median time step when absent.
    pub fs: Option<f64>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            time_col: "t".into(),
            value_col: "ppg".into(),
            rr_col: Some("rr".into()),
            fs: None,
        }
    }
}

/// A loaded recording: the PPG plus the reference respiration-rate series
/// when the file carries one.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub ppg: TimeSeries,
    pub reference_rr: Option<TimeSeries>,
}

pub fn load_record(path: &Path, schema: &CsvSchema) -> Result<Record> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_record_from_reader(file, schema)
}

/// Parses a recording from any CSV source. Timestamps whose step deviates
/// from `1/fs` by more than a tenth of a sample period are linearly
/// resampled onto a uniform grid.
pub fn load_record_from_reader<R: Read>(reader: R, schema: &CsvSchema) -> Result<Record> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let t_idx = col(&schema.time_col)?;
    let v_idx = col(&schema.value_col)?;
    // The rr column is optional even when the schema names one.
    let rr_idx = schema
        .rr_col
        .as_deref()
        .and_then(|name| headers.iter().position(|h| h == name));

    let mut t = Vec::new();
    let mut v = Vec::new();
    let mut rr = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |idx: usize| -> Result<f64> {
            let field = rec.get(idx).unwrap_or("");
            field
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("row {}: cannot parse `{field}`", row + 1)))
        };
        t.push(parse(t_idx)?);
        v.push(parse(v_idx)?);
        if let Some(i) = rr_idx {
            rr.push(parse(i)?);
        }
    }
    if t.is_empty() {
        return Err(Error::Empty("csv has no data rows".into()));
    }
    if let Some(row) = t.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::NonMonotonicTime { row: row + 2 });
    }

    let fs = match schema.fs {
        Some(fs) => fs,
        None if t.len() >= 2 => {
            let dt: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
            1.0 / stats::median(&dt)
        }
        None => return Err(Error::InvalidArgument("cannot infer fs from a single sample".into())),
    };
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid sampling rate {fs}")));
    }

    let period = 1.0 / fs;
    let uniform = t.windows(2).all(|w| ((w[1] - w[0]) - period).abs() < 0.1 * period);
    let (samples, rr) = if uniform {
        (v, rr)
    } else {
        let n = ((t[t.len() - 1] - t[0]) * fs).floor() as usize + 1;
        let grid: Vec<f64> = (0..n).map(|k| t[0] + k as f64 * period).collect();
        let rr = if rr.is_empty() { rr } else { interp_linear(&t, &rr, &grid) };
        (interp_linear(&t, &v, &grid), rr)
    };
    let ppg = TimeSeries::new(samples, fs, t[0])?;
    let reference_rr = if rr.is_empty() {
        None
    } else {
        Some(TimeSeries::new(rr, fs, t[0])?)
    };
    Ok(Record { ppg, reference_rr })
}

/// Piecewise-linear interpolation of (xs, ys) at sorted query points, with
/// constant extrapolation outside the data.
fn interp_linear(xs: &[f64], ys: &[f64], query: &[f64]) -> Vec<f64> {
    let mut j = 0;
    query
        .iter()
        .map(|&q| {
            while j + 1 < xs.len() && xs[j + 1] < q {
                j += 1;
            }
            if q <= xs[0] {
                ys[0]
            } else if j + 1 >= xs.len() {
                ys[xs.len() - 1]
            } else {
                let w = (q - xs[j]) / (xs[j + 1] - xs[j]);
                ys[j] + w * (ys[j + 1] - ys[j])
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RejectReason {
    BeatCount { count: usize },
    Spike { robust_z: f64 },
    BeatInterval { interval_s: f64 },
    FiducialFailures { failed: usize, attempted: usize },
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RejectReason::BeatCount { count } => write!(f, "implausible beat count {count}"),
            RejectReason::Spike { robust_z } => write!(f, "spike (robust z {robust_z:.1})"),
            RejectReason::BeatInterval { interval_s } => {
                write!(f, "inter-beat interval {interval_s:.3} s out of range")
            }
            RejectReason::FiducialFailures { failed, attempted } => {
                write!(f, "fiducial detection failed on {failed}/{attempted} beats")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Quality {
    /// Not screened yet.
    Pending,
    Accepted,
    Rejected { reason: RejectReason },
}

/// One analysis window of a recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub signal: TimeSeries,
    /// Mean reference respiration rate over the window, breaths/min.
    pub reference_rr: Option<f64>,
    pub quality: Quality,
    pub subject_id: String,
    /// Position of the window within its recording.
    pub index: usize,
}

impl Segment {
    pub fn id(&self) -> String {
        format!("{}#{}", self.subject_id, self.index)
    }

    pub fn is_accepted(&self) -> bool {
        self.quality == Quality::Accepted
    }
}

/// Cuts `x` into windows of `round(window_s * fs)` samples every
/// `round(stride_s * fs)` samples. A trailing partial window is dropped.
pub fn segment_windows(
    x: &TimeSeries,
    reference_rr: Option<&TimeSeries>,
    window_s: f64,
    stride_s: f64,
    subject_id: &str,
) -> Result<Vec<Segment>> {
    if !(window_s > 0.0 && stride_s > 0.0) {
        return Err(Error::InvalidArgument("window and stride must be positive".into()));
    }
    let win = (window_s * x.fs).round() as usize;
    let stride = ((stride_s * x.fs).round() as usize).max(1);
    if win == 0 || x.len() < win {
        return Err(Error::TooShort {
            duration_s: x.duration_s(),
            window_s,
        });
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + win <= x.len() {
        let signal = TimeSeries {
            samples: x.samples[start..start + win].to_vec(),
            fs: x.fs,
            t0: x.time_at(start),
        };
        let t_start = signal.t0;
        let t_end = t_start + window_s;
        let reference_rr = reference_rr.and_then(|r| window_mean(r, t_start, t_end));
        if let Some(rr) = reference_rr {
            if !(0.0..=100.0).contains(&rr) {
                return Err(Error::InvalidArgument(format!(
                    "reference rate {rr} outside [0, 100] in window {}",
                    out.len()
                )));
            }
        }
        out.push(Segment {
            signal,
            reference_rr,
            quality: Quality::Pending,
            subject_id: subject_id.to_string(),
            index: out.len(),
        });
        start += stride;
    }
    Ok(out)
}

fn window_mean(r: &TimeSeries, t_start: f64, t_end: f64) -> Option<f64> {
    let eps = 0.5 / r.fs;
    let vals: Vec<f64> = (0..r.len())
        .filter(|&i| {
            let t = r.time_at(i);
            t >= t_start - eps && t < t_end - eps
        })
        .map(|i| r.samples[i])
        .collect();
    if vals.is_empty() {
        None
    } else {
        Some(stats::mean(&vals))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum FilterKind {
    #[default]
    LowPassButterworth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSpec {
    pub order: usize,
    pub cutoff_hz: f64,
    pub kind: FilterKind,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            order: 6,
            cutoff_hz: 25.0,
            kind: FilterKind::LowPassButterworth,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self, fs: f64) -> Result<()> {
        if self.order < 2 || self.order % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "filter order must be even and at least 2, got {}",
                self.order
            )));
        }
        if !(self.cutoff_hz > 0.0) {
            return Err(Error::InvalidArgument("cutoff must be positive".into()));
        }
        if self.cutoff_hz >= fs / 2.0 {
            return Err(Error::CutoffAboveNyquist {
                cutoff_hz: self.cutoff_hz,
                fs,
            });
        }
        Ok(())
    }
}

/// Normalized second-order section (a0 = 1), run in transposed direct form II.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Filters `x` in place, starting from the steady state for a constant
    /// input equal to `x[0]`.
    fn run(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let dc = (b0 + b1 + b2) / (1.0 + a1 + a2);
        let y0 = dc * x0;
        let mut z1 = y0 - b0 * x0;
        let mut z2 = b2 * x0 - a2 * y0;
        for v in x.iter_mut() {
            let input = *v;
            let out = b0 * input + z1;
            z1 = b1 * input - a1 * out + z2;
            z2 = b2 * input - a2 * out;
            *v = out;
        }
    }
}

/// Digital Butterworth low-pass as a cascade of `order/2` biquads
/// (bilinear transform with frequency prewarping).
pub fn butterworth_sections(spec: &FilterSpec, fs: f64) -> Result<Vec<Biquad>> {
    spec.validate(fs)?;
    let n = spec.order;
    let w0 = 2.0 * std::f64::consts::PI * spec.cutoff_hz / fs;
    let (sin_w0, cos_w0) = w0.sin_cos();
    Ok((0..n / 2)
        .map(|k| {
            let theta = std::f64::consts::PI * (2 * k + 1) as f64 / (2 * n) as f64;
            let q = 1.0 / (2.0 * theta.sin());
            let alpha = sin_w0 / (2.0 * q);
            let a0 = 1.0 + alpha;
            let b1 = (1.0 - cos_w0) / a0;
            Biquad {
                b: [b1 / 2.0, b1, b1 / 2.0],
                a: [-2.0 * cos_w0 / a0, (1.0 - alpha) / a0],
            }
        })
        .collect())
}

/// Zero-phase low-pass: forward then time-reversed pass of the same cascade,
/// with odd reflective padding of `3 * order * (fs / cutoff)` samples on
/// both ends (capped at `len - 1`) that is trimmed afterwards.
pub fn butterworth_zero_phase(x: &TimeSeries, spec: &FilterSpec) -> Result<TimeSeries> {
    let sections = butterworth_sections(spec, x.fs)?;
    let n = x.len();
    let per_period = (x.fs / spec.cutoff_hz).round() as usize;
    let pad = (3 * spec.order * per_period).min(n.saturating_sub(1));
    let s = &x.samples;

    let mut buf = Vec::with_capacity(n + 2 * pad);
    buf.extend((1..=pad).rev().map(|i| 2.0 * s[0] - s[i]));
    buf.extend_from_slice(s);
    buf.extend((1..=pad).map(|i| 2.0 * s[n - 1] - s[n - 1 - i]));

    for sec in &sections {
        sec.run(&mut buf);
    }
    buf.reverse();
    for sec in &sections {
        sec.run(&mut buf);
    }
    buf.reverse();

    Ok(x.with_samples(buf[pad..pad + n].to_vec()))
}

/// First or second time derivative by central differences scaled by `fs`;
/// the end samples use one-sided differences.
pub fn derivative(x: &TimeSeries, order: u8) -> Result<TimeSeries> {
    let s = &x.samples;
    let n = s.len();
    if n < 3 {
        return Err(Error::InvalidArgument("derivative needs at least 3 samples".into()));
    }
    let fs = x.fs;
    let out = match order {
        1 => {
            let mut d = vec![0.0; n];
            d[0] = (s[1] - s[0]) * fs;
            d[n - 1] = (s[n - 1] - s[n - 2]) * fs;
            for i in 1..n - 1 {
                d[i] = (s[i + 1] - s[i - 1]) * fs * 0.5;
            }
            d
        }
        2 => {
            let fs2 = fs * fs;
            let mut d = vec![0.0; n];
            for i in 1..n - 1 {
                d[i] = (s[i + 1] - 2.0 * s[i] + s[i - 1]) * fs2;
            }
            d[0] = d[1];
            d[n - 1] = d[n - 2];
            d
        }
        _ => {
            return Err(Error::InvalidArgument(format!(
                "derivative order must be 1 or 2, got {order}"
            )))
        }
    };
    Ok(x.with_samples(out))
}

/// Thresholds for segment screening.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualityThresholds {
    pub min_hr_bpm: f64,
    pub max_hr_bpm: f64,
    /// Robust z-score (about the median, MAD scaled by 1.4826) above which
    /// a sample counts as a spike.
    pub spike_z: f64,
    pub min_ibi_s: f64,
    pub max_ibi_s: f64,
    pub max_fiducial_failure_fraction: f64,
}

impl Default for QualityThresholds {
    fn default() -> Self {
        Self {
            min_hr_bpm: 30.0,
            max_hr_bpm: 220.0,
            spike_z: 8.0,
            min_ibi_s: 0.27,
            max_ibi_s: 2.0,
            max_fiducial_failure_fraction: 0.10,
        }
    }
}

/// Sets the quality verdict of `segment` from its fiducial detection
/// outcome. Rules are checked in order: beat count, spikes, inter-beat
/// intervals, fiducial failures.
pub fn assess_quality(
    mut segment: Segment,
    fiducials: &FiducialOutcome,
    thresholds: &QualityThresholds,
) -> Segment {
    segment.quality = match screen(&segment, fiducials, thresholds) {
        Some(reason) => Quality::Rejected { reason },
        None => Quality::Accepted,
    };
    segment
}

fn screen(segment: &Segment, fid: &FiducialOutcome, th: &QualityThresholds) -> Option<RejectReason> {
    let x = &segment.signal;
    let window_s = x.duration_s();
    let count = fid.peaks.len();
    let lo = window_s * th.min_hr_bpm / 60.0;
    let hi = window_s * th.max_hr_bpm / 60.0;
    if (count as f64) < lo || (count as f64) > hi {
        return Some(RejectReason::BeatCount { count });
    }

    let med = stats::median(&x.samples);
    let mad = 1.4826 * stats::median_abs_dev(&x.samples);
    let worst = x.samples.iter().map(|v| (v - med).abs()).fold(0.0, f64::max);
    if worst > 0.0 {
        let robust_z = if mad > 0.0 { worst / mad } else { f64::INFINITY };
        if robust_z > th.spike_z {
            return Some(RejectReason::Spike { robust_z });
        }
    }

    if let Some(interval_s) = fid
        .peaks
        .windows(2)
        .map(|w| (w[1] - w[0]) as f64 / x.fs)
        .find(|&ibi| ibi < th.min_ibi_s || ibi > th.max_ibi_s)
    {
        return Some(RejectReason::BeatInterval { interval_s });
    }

    let attempted = fid.attempted();
    if attempted == 0 || fid.failures as f64 > th.max_fiducial_failure_fraction * attempted as f64 {
        return Some(RejectReason::FiducialFailures {
            failed: fid.failures,
            attempted,
        });
    }
    None
}
