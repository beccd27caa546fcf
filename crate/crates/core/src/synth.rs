//! Synthetic PPG with a known respiration rate.
//!
//! Each beat is a fixed two-Gaussian template (systolic wave at 30% of the
//! period with width 12%, reflected wave at 65% with width 18% and relative
//! amplitude 0.35). Respiration enters three ways: the heart period is
//! modulated in frequency, each beat's amplitude is modulated, and a
//! baseline sinusoid is added. White noise goes on top.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::TimeSeries;

const SYSTOLIC_CENTER: f64 = 0.30;
const SYSTOLIC_WIDTH: f64 = 0.12;
const REFLECTED_CENTER: f64 = 0.65;
const REFLECTED_WIDTH: f64 = 0.18;
const REFLECTED_RATIO: f64 = 0.35;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub fs: f64,
    pub duration_s: f64,
    pub hr_bpm: f64,
    /// Respiration rate, breaths/min.
    pub rr_bpm: f64,
    pub mod_depth_amp: f64,
    pub mod_depth_freq: f64,
    pub baseline_amp: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            fs: 500.0,
            duration_s: 32.0,
            hr_bpm: 70.0,
            rr_bpm: 15.0,
            mod_depth_amp: 0.0,
            mod_depth_freq: 0.0,
            baseline_amp: 0.0,
            noise_sd: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.fs > 0.0) || !(self.duration_s > 0.0) {
            return bad("fs and duration must be positive".into());
        }
        if !(4.0..=60.0).contains(&self.rr_bpm) {
            return bad(format!("rr_bpm {} outside [4, 60]", self.rr_bpm));
        }
        if !(40.0..=180.0).contains(&self.hr_bpm) {
            return bad(format!("hr_bpm {} outside [40, 180]", self.hr_bpm));
        }
        if self.hr_bpm <= 2.0 * self.rr_bpm {
            return bad("heart rate must exceed twice the respiration rate".into());
        }
        if !(0.0..1.0).contains(&self.mod_depth_amp) {
            return bad("mod_depth_amp must lie in [0, 1)".into());
        }
        if !(0.0..0.5).contains(&self.mod_depth_freq) {
            return bad("mod_depth_freq must lie in [0, 0.5)".into());
        }
        if !(self.baseline_amp >= 0.0) || !(self.noise_sd >= 0.0) {
            return bad("baseline_amp and noise_sd must be non-negative".into());
        }
        Ok(())
    }
}

/// Beat onset times and periods for the modulated heart rhythm.
pub fn beat_onsets(spec: &SynthSpec) -> Vec<(f64, f64)> {
    let base = 60.0 / spec.hr_bpm;
    let resp = 2.0 * std::f64::consts::PI * spec.rr_bpm / 60.0;
    let mut beats = Vec::new();
    // start one beat early so the first window sample sees a full rhythm
    let mut t = -base;
    while t < spec.duration_s + base {
        let period = base * (1.0 + spec.mod_depth_freq * (resp * t).sin());
        beats.push((t, period));
        t += period;
    }
    beats
}

/// Noise-free template value of one beat at phase `tau` (in periods from onset).
pub fn beat_template(tau: f64) -> f64 {
    let g = |c: f64, w: f64| (-(tau - c) * (tau - c) / (2.0 * w * w)).exp();
    g(SYSTOLIC_CENTER, SYSTOLIC_WIDTH) + REFLECTED_RATIO * g(REFLECTED_CENTER, REFLECTED_WIDTH)
}

/// Generates the synthetic PPG and returns it with its true respiration rate.
pub fn generate_ppg(spec: &SynthSpec) -> Result<(TimeSeries, f64)> {
    spec.validate()?;
    let n = (spec.duration_s * spec.fs).round() as usize;
    let resp = 2.0 * std::f64::consts::PI * spec.rr_bpm / 60.0;
    let beats = beat_onsets(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sd.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let mut samples = Vec::with_capacity(n);
    let mut first = 0;
    for i in 0..n {
        let t = i as f64 / spec.fs;
        // template tails are negligible beyond ±2 periods
        while first < beats.len() && beats[first].0 + 3.0 * beats[first].1 < t {
            first += 1;
        }
        let mut v = 0.0;
        for &(onset, period) in &beats[first..] {
            if onset - 2.0 * period > t {
                break;
            }
            let amp = 1.0 + spec.mod_depth_amp * (resp * onset).sin();
            v += amp * beat_template((t - onset) / period);
        }
        v += spec.baseline_amp * (resp * t).sin();
        if spec.noise_sd > 0.0 {
            v += noise.sample(&mut rng);
        }
        samples.push(v);
    }
    Ok((TimeSeries::new(samples, spec.fs, 0.0)?, spec.rr_bpm))
}

/// Root-mean-square of the zero-mean, unmodulated pulse train; used to set
/// the noise level for a target SNR.
pub fn pulse_rms() -> f64 {
    let steps = 2000;
    let vals: Vec<f64> = (0..steps)
        .map(|k| {
            let tau = k as f64 / steps as f64;
            (-3..=3).map(|j| beat_template(tau - j as f64)).sum::<f64>()
        })
        .collect();
    crate::stats::std_dev(&vals)
}

/// A set of synthetic subjects, each a run of 32-s segments with its own
/// heart and respiration rate drawn uniformly from the given ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub subjects: usize,
    pub segments_per_subject: usize,
    pub segment_s: f64,
    pub fs: f64,
    pub hr_range: (f64, f64),
    pub rr_range: (f64, f64),
    pub mod_depth_amp: f64,
    pub mod_depth_freq: f64,
    pub baseline_amp: f64,
    /// Pulse-to-noise power ratio in dB.
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            subjects: 10,
            segments_per_subject: 20,
            segment_s: 32.0,
            fs: 500.0,
            hr_range: (75.0, 110.0),
            rr_range: (8.0, 30.0),
            mod_depth_amp: 0.1,
            mod_depth_freq: 0.05,
            baseline_amp: 0.1,
            snr_db: 20.0,
            seed: 0,
        }
    }
}

/// One recording of the cohort: its segments laid end to end, with the
/// true rate of each segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRecording {
    pub subject_id: String,
    pub ppg: TimeSeries,
    /// Reference rate sampled alongside `ppg`, constant within a segment.
    pub rr: TimeSeries,
}

pub fn cohort_specs(c: &CohortSpec) -> Vec<(String, Vec<SynthSpec>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let noise_sd = pulse_rms() * 10f64.powf(-c.snr_db / 20.0);
    (0..c.subjects)
        .map(|s| {
            let specs = (0..c.segments_per_subject)
                .map(|_| SynthSpec {
                    fs: c.fs,
                    duration_s: c.segment_s,
                    hr_bpm: rng.random_range(c.hr_range.0..=c.hr_range.1),
                    rr_bpm: rng.random_range(c.rr_range.0..=c.rr_range.1),
                    mod_depth_amp: c.mod_depth_amp,
                    mod_depth_freq: c.mod_depth_freq,
                    baseline_amp: c.baseline_amp,
                    noise_sd,
                    seed: rng.random(),
                })
                .collect();
            (format!("synth{s:03}"), specs)
        })
        .collect()
}

pub fn generate_cohort(c: &CohortSpec) -> Result<Vec<SyntheticRecording>> {
    cohort_specs(c)
        .into_par_iter()
        .map(|(subject_id, specs)| {
            let mut ppg = Vec::new();
            let mut rr = Vec::new();
            for spec in &specs {
                let (x, true_rr) = generate_ppg(spec)?;
                rr.extend(std::iter::repeat(true_rr).take(x.len()));
                ppg.extend(x.samples);
            }
            Ok(SyntheticRecording {
                subject_id,
                ppg: TimeSeries::new(ppg, c.fs, 0.0)?,
                rr: TimeSeries::new(rr, c.fs, 0.0)?,
            })
        })
        .collect()
}

/// Writes `t,ppg,rr` rows in the standard input layout.
pub fn write_recording_csv<W: std::io::Write>(w: W, ppg: &TimeSeries, rr: &[f64]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "ppg", "rr"])?;
    for (i, (v, r)) in ppg.samples.iter().zip(rr).enumerate() {
        out.write_record([format!("{:.6}", ppg.time_at(i)), format!("{v:?}"), format!("{r:?}")])?;
    }
    out.flush().map_err(|e| Error::io("<csv output>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn spectrum(x: &[f64]) -> Vec<f64> {
        let m = crate::stats::mean(x);
        let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - m, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        buf[..x.len() / 2].iter().map(|c| c.norm()).collect()
    }

    #[test]
    fn cohort_is_seeded_and_labelled() {
        let c = CohortSpec { subjects: 2, segments_per_subject: 3, segment_s: 10.0, ..CohortSpec::default() };
        let a = generate_cohort(&c).unwrap();
        assert_eq!(a, generate_cohort(&c).unwrap());
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].ppg.len(), 15000);
        let specs = cohort_specs(&c);
        assert_eq!(a[1].rr.samples[5000 * 2 + 1], specs[1].1[2].rr_bpm);
        assert!(specs.iter().flat_map(|(_, s)| s).all(|s| (8.0..=30.0).contains(&s.rr_bpm)));
    }

    #[test]
    fn unmodulated_signal_peaks_at_heart_rate() {
        let spec = SynthSpec { duration_s: 60.0, ..SynthSpec::default() };
        let (x, rr) = generate_ppg(&spec).unwrap();
        assert_eq!(rr, 15.0);
        let sp = spectrum(&x.samples);
        let df = spec.fs / x.len() as f64;
        let k = (1..sp.len()).max_by(|&a, &b| sp[a].total_cmp(&sp[b])).unwrap();
        assert!((k as f64 * df - 70.0 / 60.0).abs() <= df);
    }

    #[test]
    fn unmodulated_signal_is_periodic() {
        // 60 bpm at 500 Hz gives an integer period of 500 samples
        let spec = SynthSpec { hr_bpm: 60.0, duration_s: 10.0, ..SynthSpec::default() };
        let (x, _) = generate_ppg(&spec).unwrap();
        let p = 500;
        for i in 0..x.len() - p {
            assert!((x.samples[i] - x.samples[i + p]).abs() < 1e-9);
        }
    }

    #[test]
    fn baseline_shows_in_low_band() {
        let spec = SynthSpec {
            duration_s: 64.0,
            baseline_amp: 0.3,
            ..SynthSpec::default()
        };
        let (x, _) = generate_ppg(&spec).unwrap();
        let sp = spectrum(&x.samples);
        let df = spec.fs / x.len() as f64;
        let hi = (0.5 / df) as usize;
        let k = (1..=hi).max_by(|&a, &b| sp[a].total_cmp(&sp[b])).unwrap();
        assert!((k as f64 * df - 0.25).abs() <= df, "peak at {} Hz", k as f64 * df);
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = SynthSpec { noise_sd: 0.05, mod_depth_amp: 0.2, seed: 9, ..SynthSpec::default() };
        let a = generate_ppg(&spec).unwrap().0;
        let b = generate_ppg(&spec).unwrap().0;
        assert_eq!(a.samples, b.samples);
        let c = generate_ppg(&SynthSpec { seed: 10, ..spec }).unwrap().0;
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn mean_beat_interval_matches_heart_rate() {
        let spec = SynthSpec { mod_depth_freq: 0.1, rr_bpm: 12.0, duration_s: 60.0, ..SynthSpec::default() };
        let beats: Vec<_> = beat_onsets(&spec).into_iter().filter(|b| b.0 >= 0.0 && b.0 < 60.0).collect();
        let mean_ibi = (beats.last().unwrap().0 - beats[0].0) / (beats.len() - 1) as f64;
        assert!((mean_ibi / (60.0 / 70.0) - 1.0).abs() < 0.01);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(generate_ppg(&SynthSpec { rr_bpm: 2.0, ..SynthSpec::default() }).is_err());
        assert!(generate_ppg(&SynthSpec { hr_bpm: 50.0, rr_bpm: 30.0, ..SynthSpec::default() }).is_err());
        assert!(generate_ppg(&SynthSpec { mod_depth_freq: 0.5, ..SynthSpec::default() }).is_err());
    }
}
