//! The 107-entry feature registry and the per-segment extractor.
//!
//! Layout, in registry order:
//!
//! * 15 pulse quantities × {mean, std, var} = 45
//! * 16 derivative quantities × {mean, std, var} = 48
//! * 14 whole-segment statistics of the filtered signal
//!
//! The whole-segment statistics are a reconstruction: iqr, mad, std,
//! quantiles, entropy, spectral entropy, maxfreq, maxratio and median,
//! completed with mean, var, skewness and kurtosis.
//!
//! Conventions: variances are population (1/n) variances; `mad(sig)` is the
//! mean absolute deviation about the mean; quantiles interpolate linearly
//! (h = (n-1)p); `entropy(sig)` is the Shannon entropy in bits of a 64-bin
//! equal-width histogram; the PSD is a Welch estimate with 8-s Hann windows,
//! 50% overlap, per-window mean removal and 4× zero padding;
//! `spectral-entropy` is normalised to [0, 1]. A ratio whose denominator is
//! zero on some beat skips that beat; a per-beat statistic with no usable
//! beats is reported as 0.

use std::io::{Read, Write};
use std::sync::OnceLock;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fiducials::BeatFiducials;
use crate::signal::{Segment, TimeSeries};
use crate::stats;

pub const FEATURE_COUNT: usize = 107;
/// Bumped whenever the registry order or a feature definition changes.
pub const REGISTRY_VERSION: u32 = 1;

type Quantity = (&'static str, fn(&BeatFiducials) -> Option<f64>);

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den != 0.0).then(|| num / den).filter(|v| v.is_finite())
}

const PULSE_QUANTITIES: [Quantity; 15] = [
    ("sys", |b| Some(b.sys)),
    ("foot amp", |b| Some(b.amp_foot)),
    ("x", |b| Some(b.height)),
    ("t1", |b| Some(b.t1)),
    ("tpi", |b| Some(b.tpi)),
    ("tpp", |b| Some(b.tpp)),
    ("t1/x", |b| ratio(b.t1, b.height)),
    ("t1/tpi", |b| ratio(b.t1, b.tpi)),
    ("x/(tpi-t1)", |b| ratio(b.height, b.tpi - b.t1)),
    ("A1", |b| Some(b.area_rise)),
    ("A2", |b| Some(b.area_decay)),
    ("A1/A2", |b| ratio(b.area_rise, b.area_decay)),
    ("w_25", |b| Some(b.w25)),
    ("w_50", |b| Some(b.w50)),
    ("w_75", |b| Some(b.w75)),
];

const DERIVATIVE_QUANTITIES: [Quantity; 16] = [
    ("v1", |b| Some(b.v1)),
    ("tv1", |b| Some(b.tv1)),
    ("v2", |b| Some(b.v2)),
    ("tv2", |b| Some(b.tv2)),
    ("a1", |b| Some(b.a1)),
    ("ta1", |b| Some(b.ta1)),
    ("a2", |b| Some(b.a2)),
    ("ta2", |b| Some(b.ta2)),
    ("v2/v1", |b| ratio(b.v2, b.v1)),
    ("a2/a1", |b| ratio(b.a2, b.a1)),
    ("tv1/tv2", |b| ratio(b.tv1, b.tv2)),
    ("ta1/ta2", |b| ratio(b.ta1, b.ta2)),
    ("tv1/ta1", |b| ratio(b.tv1, b.ta1)),
    ("tv1/ta2", |b| ratio(b.tv1, b.ta2)),
    ("tv2/ta1", |b| ratio(b.tv2, b.ta1)),
    ("tv2/ta2", |b| ratio(b.tv2, b.ta2)),
];

const SIGNAL_FEATURES: [&str; 14] = [
    "mean(sig)",
    "median(sig)",
    "std(sig)",
    "var(sig)",
    "mad(sig)",
    "iqr(sig)",
    "25% quantile",
    "75% quantile",
    "skewness(sig)",
    "kurtosis(sig)",
    "entropy(sig)",
    "spectral-entropy",
    "maxfreq",
    "maxratio",
];

/// Canonical feature names in registry order.
pub fn feature_registry() -> &'static [String] {
    static REGISTRY: OnceLock<Vec<String>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut names = Vec::with_capacity(FEATURE_COUNT);
        for (q, _) in PULSE_QUANTITIES.iter().chain(&DERIVATIVE_QUANTITIES) {
            for stat in ["mean", "std", "var"] {
                names.push(format!("{stat}({q})"));
            }
        }
        names.extend(SIGNAL_FEATURES.iter().map(|s| s.to_string()));
        debug_assert_eq!(names.len(), FEATURE_COUNT);
        names
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub names: &'static [String],
    pub values: Vec<f64>,
}

/// Features of `segment` (which should hold the filtered signal) from its
/// measured beats.
pub fn extract_features(beats: &[BeatFiducials], segment: &Segment) -> Result<FeatureVector> {
    if beats.len() < 3 {
        return Err(Error::TooFewBeats {
            found: beats.len(),
            needed: 3,
        });
    }
    let mut values = Vec::with_capacity(FEATURE_COUNT);
    let mut buf = Vec::with_capacity(beats.len());
    for (_, get) in PULSE_QUANTITIES.iter().chain(&DERIVATIVE_QUANTITIES) {
        buf.clear();
        buf.extend(beats.iter().filter_map(get));
        if buf.is_empty() {
            values.extend([0.0; 3]);
        } else {
            let var = stats::variance(&buf);
            values.extend([stats::mean(&buf), var.sqrt(), var]);
        }
    }
    values.extend(signal_statistics(&segment.signal));
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("feature `{}`", feature_registry()[i])));
    }
    Ok(FeatureVector {
        names: feature_registry(),
        values,
    })
}

fn signal_statistics(x: &TimeSeries) -> [f64; 14] {
    let s = &x.samples;
    let var = stats::variance(s);
    let q25 = stats::quantile(s, 0.25);
    let q75 = stats::quantile(s, 0.75);
    let psd = welch_psd(x, 8.0);
    let (maxfreq, maxratio) = dominant_low_frequency(&psd, 0.05, 1.0);
    [
        stats::mean(s),
        stats::median(s),
        var.sqrt(),
        var,
        stats::mean_abs_dev(s),
        q75 - q25,
        q25,
        q75,
        stats::skewness(s),
        stats::kurtosis(s),
        stats::histogram_entropy(s, 64),
        spectral_entropy(&psd),
        maxfreq,
        maxratio,
    ]
}

/// One-sided power spectral density estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Psd {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
}

/// Welch estimate with Hann windows of `window_s` seconds (the whole signal
/// if shorter), 50% overlap, per-window mean removal and zero padding to a
/// power of two at least four times the window.
pub fn welch_psd(x: &TimeSeries, window_s: f64) -> Psd {
    let s = &x.samples;
    let seg = ((window_s * x.fs).round() as usize).clamp(2, s.len().max(2)).min(s.len());
    let step = (seg / 2).max(1);
    let nfft = (4 * seg).next_power_of_two();
    let hann: Vec<f64> = (0..seg)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / seg as f64).cos())
        .collect();
    let norm = x.fs * hann.iter().map(|w| w * w).sum::<f64>();
    let fft = FftPlanner::new().plan_fft_forward(nfft);
    let bins = nfft / 2 + 1;
    let mut power = vec![0.0; bins];
    let mut count = 0usize;
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    let mut start = 0;
    while start + seg <= s.len() {
        let chunk = &s[start..start + seg];
        let m = stats::mean(chunk);
        for (slot, (v, w)) in buf.iter_mut().zip(chunk.iter().zip(&hann)) {
            *slot = Complex::new((v - m) * w, 0.0);
        }
        buf[seg..].fill(Complex::new(0.0, 0.0));
        fft.process(&mut buf);
        for (k, p) in power.iter_mut().enumerate() {
            let scale = if k == 0 || k == nfft / 2 { 1.0 } else { 2.0 };
            *p += scale * buf[k].norm_sqr() / norm;
        }
        count += 1;
        start += step;
    }
    if count > 0 {
        power.iter_mut().for_each(|p| *p /= count as f64);
    }
    let freqs = (0..bins).map(|k| k as f64 * x.fs / nfft as f64).collect();
    Psd { freqs, power }
}

/// Shannon entropy of the normalised PSD, divided by log2 of the bin count.
pub fn spectral_entropy(psd: &Psd) -> f64 {
    let total: f64 = psd.power.iter().sum();
    if !(total > 0.0) || psd.power.len() < 2 {
        return 0.0;
    }
    let h: f64 = psd
        .power
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| {
            let q = p / total;
            -q * q.log2()
        })
        .sum();
    h / (psd.power.len() as f64).log2()
}

/// Frequency of the PSD maximum within `[lo, hi]` Hz and that maximum's
/// share of the in-band power.
pub fn dominant_low_frequency(psd: &Psd, lo: f64, hi: f64) -> (f64, f64) {
    let band: Vec<usize> = (0..psd.freqs.len())
        .filter(|&k| psd.freqs[k] >= lo && psd.freqs[k] <= hi)
        .collect();
    let total: f64 = band.iter().map(|&k| psd.power[k]).sum();
    match band.iter().copied().max_by(|&a, &b| psd.power[a].total_cmp(&psd.power[b]).then(b.cmp(&a))) {
        Some(k) if total > 0.0 => (psd.freqs[k], psd.power[k] / total),
        _ => (0.0, 0.0),
    }
}

/// Feature rows with their reference rates and subject ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Reference respiration rate per row, breaths/min.
    pub targets: Vec<f64>,
    /// Subject id per row.
    pub groups: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>, rows: Vec<Vec<f64>>, targets: Vec<f64>, groups: Vec<String>) -> Result<Self> {
        let m = Self {
            names,
            rows,
            targets,
            groups,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn empty(names: Vec<String>) -> Self {
        Self {
            names,
            rows: Vec::new(),
            targets: Vec::new(),
            groups: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.rows.len();
        if self.targets.len() != n || self.groups.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.targets.len().min(self.groups.len()),
            });
        }
        let d = self.names.len();
        if let Some(r) = self.rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: r.len() });
        }
        if self.rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix entry".into()));
        }
        if let Some(t) = self.targets.iter().find(|t| !(0.0..=100.0).contains(*t)) {
            return Err(Error::InvalidArgument(format!("target {t} outside [0, 100]")));
        }
        Ok(())
    }

    pub fn push(&mut self, row: Vec<f64>, target: f64, group: impl Into<String>) {
        self.rows.push(row);
        self.targets.push(target);
        self.groups.push(group.into());
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    pub fn subset_rows(&self, idx: &[usize]) -> Self {
        Self {
            names: self.names.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
            groups: idx.iter().map(|&i| self.groups[i].clone()).collect(),
        }
    }

    pub fn subset_columns(&self, cols: &[usize]) -> Self {
        Self {
            names: cols.iter().map(|&j| self.names[j].clone()).collect(),
            rows: self.rows.iter().map(|r| cols.iter().map(|&j| r[j]).collect()).collect(),
            targets: self.targets.clone(),
            groups: self.groups.clone(),
        }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// CSV with the feature names, then `rr`, then `subject` as header.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<&str> = self.names.iter().map(String::as_str).collect();
        header.extend(["rr", "subject"]);
        wtr.write_record(&header)?;
        for ((row, t), g) in self.rows.iter().zip(&self.targets).zip(&self.groups) {
            let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            rec.push(format!("{t:?}"));
            rec.push(g.clone());
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io("<feature csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let cols: Vec<String> = header.iter().map(str::to_string).collect();
        let rr = cols.iter().position(|c| c == "rr").ok_or_else(|| Error::MissingColumn("rr".into()))?;
        let subject = cols
            .iter()
            .position(|c| c == "subject")
            .ok_or_else(|| Error::MissingColumn("subject".into()))?;
        let feature_cols: Vec<usize> = (0..cols.len()).filter(|&j| j != rr && j != subject).collect();
        let mut m = Self::empty(feature_cols.iter().map(|&j| cols[j].clone()).collect());
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let num = |j: usize| -> Result<f64> {
                rec[j]
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("row {}: bad number `{}`", line + 1, &rec[j])))
            };
            let row = feature_cols.iter().map(|&j| num(j)).collect::<Result<Vec<_>>>()?;
            m.push(row, num(rr)?, rec[subject].to_string());
        }
        m.validate()?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fiducials::analyze;
    use crate::signal::Quality;
    use crate::synth::{generate_ppg, SynthSpec};

    fn segment_of(x: TimeSeries) -> Segment {
        Segment {
            signal: x,
            reference_rr: Some(15.0),
            quality: Quality::Accepted,
            subject_id: "s".into(),
            index: 0,
        }
    }

    fn features_for(spec: &SynthSpec) -> Vec<f64> {
        let (x, _) = generate_ppg(spec).unwrap();
        let out = analyze(&x).unwrap();
        extract_features(&out.beats, &segment_of(x)).unwrap().values
    }

    fn idx(name: &str) -> usize {
        feature_registry().iter().position(|n| n == name).unwrap_or_else(|| panic!("{name}"))
    }

    #[test]
    fn registry_shape() {
        let reg = feature_registry();
        assert_eq!(reg.len(), 107);
        let unique: std::collections::HashSet<_> = reg.iter().collect();
        assert_eq!(unique.len(), 107);
        assert_eq!(idx("mean(tv1)"), 3 * 15 + 3);
        assert_eq!(feature_registry().as_ptr(), reg.as_ptr());
    }

    #[test]
    fn registry_covers_reference_ranking_names() {
        // names from reference top-k lists, in registry spelling
        let expected = [
            "mean(tv1)", "mean(tv2/ta1)", "mean(v2/v1)", "mean(tpp)", "mean(ta1/ta2)", "std(tpi)",
            "mean(x/(tpi-t1))", "mean(ta1)", "mean(v1)", "mean(sys)", "iqr(sig)", "mean(A2)", "std(A2)",
            "mad(sig)", "mean(foot amp)", "mean(t1)", "mean(x)", "mean(A1)", "var(w_25)", "mean(a1)",
            "mean(tpi)", "mean(w_25)", "mean(a2)", "std(sig)", "mean(ta2)", "mean(tv1/ta2)",
            "25% quantile", "75% quantile", "std(A1)", "mean(t1/tpi)", "std(t1)", "maxratio", "mean(tv2)",
            "var(t1/x)", "mean(t1/x)", "std(t1/x)", "mean(v2)", "mean(tv1/tv2)", "std(w_50)", "std(a2)",
            "var(A2)", "std(x)", "entropy(sig)", "mean(w_50)", "var(w_50)", "var(tv2)", "maxfreq",
            "std(w_25)", "mean(w_75)", "var(w_75)", "spectral-entropy", "mean(a2/a1)", "std(t1/tpi)",
            "std(w_75)", "mean(tv2/ta2)", "var(sys)", "var(a2)", "var(ta1/ta2)", "std(tpp)", "var(v2)",
            "median(sig)", "var(a2/a1)", "std(tv1)",
        ];
        for name in expected {
            assert!(feature_registry().iter().any(|n| n == name), "missing {name}");
        }
    }

    #[test]
    fn periodic_beats_have_zero_spread() {
        // 60 bpm keeps every beat on the same sample grid
        let v = features_for(&SynthSpec { hr_bpm: 60.0, ..SynthSpec::default() });
        for (name, value) in feature_registry().iter().zip(&v).take(93) {
            if name.starts_with("std(") || name.starts_with("var(") {
                assert!(value.abs() < 1e-9, "{name} = {value}");
            }
        }
        assert!((v[idx("mean(tpi)")] - 1.0).abs() <= 1.0 / 500.0);
    }

    #[test]
    fn triangle_train_tpi_is_base() {
        let fs = 100.0;
        let samples: Vec<f64> = (0..801)
            .map(|i| 1.0 - (2.0 * (i as f64 / fs).fract() - 1.0).abs())
            .collect();
        let x = TimeSeries::new(samples, fs, 0.0).unwrap();
        let out = analyze(&x).unwrap();
        let f = extract_features(&out.beats, &segment_of(x)).unwrap();
        assert!((f.values[idx("mean(tpi)")] - 1.0).abs() < 1e-12);
        assert!(f.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn quantiles_match_sorting_oracle() {
        let spec = SynthSpec { noise_sd: 0.02, mod_depth_amp: 0.1, seed: 3, ..SynthSpec::default() };
        let (x, _) = generate_ppg(&spec).unwrap();
        let mut sorted = x.samples.clone();
        sorted.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = (sorted.len() - 1) as f64 * p;
            let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        };
        let out = analyze(&x).unwrap();
        let v = extract_features(&out.beats, &segment_of(x)).unwrap().values;
        assert!((v[idx("25% quantile")] - q(0.25)).abs() < 1e-12);
        assert!((v[idx("75% quantile")] - q(0.75)).abs() < 1e-12);
        assert!((v[idx("iqr(sig)")] - (q(0.75) - q(0.25))).abs() < 1e-12);
    }

    #[test]
    fn per_beat_statistics_match_two_pass_oracle() {
        let spec = SynthSpec { mod_depth_amp: 0.2, mod_depth_freq: 0.05, seed: 1, ..SynthSpec::default() };
        let (x, _) = generate_ppg(&spec).unwrap();
        let out = analyze(&x).unwrap();
        let v = extract_features(&out.beats, &segment_of(x)).unwrap().values;
        let t1: Vec<f64> = out.beats.iter().map(|b| b.t1).collect();
        let n = t1.len() as f64;
        let m = t1.iter().sum::<f64>() / n;
        let var = t1.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n;
        assert!((v[idx("mean(t1)")] - m).abs() < 1e-12);
        assert!((v[idx("var(t1)")] - var).abs() < 1e-12);
        assert!((v[idx("std(t1)")] - var.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn time_features_invariant_to_amplitude_scale() {
        let spec = SynthSpec { mod_depth_amp: 0.2, mod_depth_freq: 0.05, baseline_amp: 0.1, seed: 4, ..SynthSpec::default() };
        let (x, _) = generate_ppg(&spec).unwrap();
        let xs = TimeSeries::new(x.samples.iter().map(|v| 2.5 * v).collect(), x.fs, 0.0).unwrap();
        let a = extract_features(&analyze(&x).unwrap().beats, &segment_of(x)).unwrap().values;
        let b = extract_features(&analyze(&xs).unwrap().beats, &segment_of(xs)).unwrap().values;
        let time_q = [
            "t1", "tpi", "tpp", "tv1", "tv2", "ta1", "ta2", "w_25", "w_50", "w_75", "t1/tpi", "tv1/tv2",
            "ta1/ta2", "tv1/ta1", "tv1/ta2", "tv2/ta1", "tv2/ta2",
        ];
        for q in time_q {
            for s in ["mean", "std", "var"] {
                let i = idx(&format!("{s}({q})"));
                assert!((a[i] - b[i]).abs() < 1e-9, "{s}({q})");
            }
        }
    }

    #[test]
    fn maxfreq_tracks_baseline_rate() {
        let spec = SynthSpec { baseline_amp: 0.2, rr_bpm: 18.0, hr_bpm: 80.0, ..SynthSpec::default() };
        let v = features_for(&spec);
        assert!((v[idx("maxfreq")] - 0.3).abs() < 0.02, "{}", v[idx("maxfreq")]);
        assert!(v[idx("maxratio")] > 0.0 && v[idx("maxratio")] <= 1.0);
        let se = v[idx("spectral-entropy")];
        assert!((0.0..=1.0).contains(&se));
    }

    #[test]
    fn too_few_beats_is_an_error() {
        let (x, _) = generate_ppg(&SynthSpec::default()).unwrap();
        let out = analyze(&x).unwrap();
        assert!(matches!(
            extract_features(&out.beats[..2], &segment_of(x)),
            Err(Error::TooFewBeats { found: 2, .. })
        ));
    }

    #[test]
    fn deterministic() {
        let spec = SynthSpec { noise_sd: 0.03, seed: 5, ..SynthSpec::default() };
        assert_eq!(features_for(&spec), features_for(&spec));
    }

    #[test]
    fn csv_round_trip() {
        let mut m = FeatureMatrix::empty(vec!["a".into(), "mean(x/(tpi-t1))".into()]);
        m.push(vec![0.1, 1.0 / 3.0], 12.5, "s1");
        m.push(vec![-2.0, 1e-300], 20.0, "s2");
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(FeatureMatrix::read_csv(buf.as_slice()).unwrap(), m);
    }
}
