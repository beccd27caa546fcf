//! Beat detection and per-beat landmarks on the filtered PPG and its
//! first and second derivatives.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{derivative, TimeSeries};
use crate::stats;

/// Minimum distance between systolic peaks, seconds (220 bpm).
pub const MIN_PEAK_DISTANCE_S: f64 = 0.27;
/// Length of the rolling window for the adaptive peak threshold, seconds.
pub const THRESHOLD_WINDOW_S: f64 = 2.0;
pub const THRESHOLD_PERCENTILE: f64 = 0.75;

/// Landmarks of one beat. Indices are sample positions in the analysed
/// segment; times are seconds measured from the beat's foot unless noted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatFiducials {
    pub i_sys: usize,
    pub i_foot: usize,
    pub i_foot_next: usize,
    /// Systolic peak amplitude (`sys`).
    pub sys: f64,
    /// Amplitude at the foot (`amp foot`).
    pub amp_foot: f64,
    /// Peak height above the foot (`x = sys - amp foot`).
    pub height: f64,
    /// Foot to systolic peak.
    pub t1: f64,
    /// Foot to next foot.
    pub tpi: f64,
    /// Systolic peak to next systolic peak.
    pub tpp: f64,
    /// Area above the foot level from foot to peak (`A1`), signal·s.
    pub area_rise: f64,
    /// Area above the next-foot level from peak to next foot (`A2`).
    pub area_decay: f64,
    /// Pulse widths at 25/50/75% of `height`, seconds.
    pub w25: f64,
    pub w50: f64,
    pub w75: f64,
    pub v1: f64,
    pub tv1: f64,
    pub v2: f64,
    pub tv2: f64,
    pub a1: f64,
    pub ta1: f64,
    pub a2: f64,
    pub ta2: f64,
}

/// Everything fiducial detection produced for one segment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FiducialOutcome {
    pub peaks: Vec<usize>,
    pub beats: Vec<BeatFiducials>,
    /// Beats dropped because a landmark was undefined.
    pub failures: usize,
}

impl FiducialOutcome {
    pub fn attempted(&self) -> usize {
        self.beats.len() + self.failures
    }
}

/// Runs peak detection and landmark extraction on a filtered segment.
/// Detection failure yields an empty outcome rather than an error so that
/// quality screening can record it.
pub fn analyze(x: &TimeSeries) -> Result<FiducialOutcome> {
    let peaks = match detect_beats(x) {
        Ok(p) => p,
        Err(Error::TooFewBeats { .. }) => return Ok(FiducialOutcome::default()),
        Err(e) => return Err(e),
    };
    let d1 = derivative(x, 1)?;
    let d2 = derivative(x, 2)?;
    let (beats, failures) = extract_beat_fiducials(x, &d1, &d2, &peaks)?;
    Ok(FiducialOutcome {
        peaks,
        beats,
        failures,
    })
}

/// Systolic peak indices, ascending.
///
/// A peak is a local maximum above the 75th percentile of the surrounding
/// 2-s window. Peaks closer than 0.27 s are resolved in favour of the
/// taller one.
pub fn detect_beats(x: &TimeSeries) -> Result<Vec<usize>> {
    let s = &x.samples;
    let n = s.len();
    let half = ((THRESHOLD_WINDOW_S * x.fs) / 2.0).round() as usize;
    let min_dist = (MIN_PEAK_DISTANCE_S * x.fs).round() as usize;

    let mut scratch = Vec::with_capacity(2 * half + 1);
    let mut candidates: Vec<usize> = (1..n.saturating_sub(1))
        .filter(|&i| s[i] > s[i - 1] && s[i] >= s[i + 1])
        .filter(|&i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            scratch.clear();
            scratch.extend_from_slice(&s[lo..hi]);
            s[i] > stats::quantile_in_place(&mut scratch, THRESHOLD_PERCENTILE)
        })
        .collect();

    candidates.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let mut kept = BTreeSet::new();
    for i in candidates {
        let lo = i.saturating_sub(min_dist.saturating_sub(1));
        if kept.range(lo..i + min_dist).next().is_none() {
            kept.insert(i);
        }
    }
    let peaks: Vec<usize> = kept.into_iter().collect();
    if peaks.len() < 3 {
        return Err(Error::TooFewBeats {
            found: peaks.len(),
            needed: 3,
        });
    }
    Ok(peaks)
}

/// Landmarks for every beat framed by three consecutive peaks. Returns the
/// beats that could be measured and the number that could not.
pub fn extract_beat_fiducials(
    x: &TimeSeries,
    d1: &TimeSeries,
    d2: &TimeSeries,
    peaks: &[usize],
) -> Result<(Vec<BeatFiducials>, usize)> {
    if d1.len() != x.len() || d2.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: d1.len().min(d2.len()),
        });
    }
    if let Some(&p) = peaks.iter().find(|&&p| p >= x.len()) {
        return Err(Error::InvalidArgument(format!("peak index {p} out of range")));
    }
    let mut beats = Vec::new();
    let mut failures = 0;
    for w in peaks.windows(3) {
        match beat_landmarks(x, d1, d2, w[0], w[1], w[2]) {
            Some(b) => beats.push(b),
            None => failures += 1,
        }
    }
    Ok((beats, failures))
}

fn argmin(s: &[f64], lo: usize, hi: usize) -> Option<usize> {
    (lo..hi).min_by(|&a, &b| s[a].total_cmp(&s[b]).then(a.cmp(&b)))
}

fn beat_landmarks(
    x: &TimeSeries,
    d1: &TimeSeries,
    d2: &TimeSeries,
    prev: usize,
    peak: usize,
    next: usize,
) -> Option<BeatFiducials> {
    let s = &x.samples;
    let fs = x.fs;
    let foot = argmin(s, prev + 1, peak)?;
    let foot_next = argmin(s, peak + 1, next)?;
    let sys = s[peak];
    let amp_foot = s[foot];
    let height = sys - amp_foot;
    if !(height > 0.0) {
        return None;
    }

    let area_rise = trapezoid(&s[foot..=peak], amp_foot) / fs;
    let area_decay = trapezoid(&s[peak..=foot_next], s[foot_next]) / fs;

    let width = |q: f64| -> Option<f64> {
        let level = amp_foot + q * height;
        let left = (foot..peak).rev().find(|&i| s[i] < level)?;
        let t_left = left as f64 + (level - s[left]) / (s[left + 1] - s[left]);
        let right = (peak + 1..=foot_next).find(|&j| s[j] < level)?;
        let t_right = (right - 1) as f64 + (s[right - 1] - level) / (s[right - 1] - s[right]);
        Some((t_right - t_left) / fs)
    };
    let (w25, w50, w75) = (width(0.25)?, width(0.5)?, width(0.75)?);

    let i_v1 = first_extremum(&d1.samples, foot, foot_next, foot, Extremum::Max)?;
    let i_v2 = first_extremum(&d1.samples, foot, foot_next, i_v1 + 1, Extremum::Min)?;
    let i_a1 = first_extremum(&d2.samples, foot, foot_next, foot, Extremum::Max)?;
    let i_a2 = first_extremum(&d2.samples, foot, foot_next, i_a1 + 1, Extremum::Min)?;
    let rel = |i: usize| (i - foot) as f64 / fs;

    Some(BeatFiducials {
        i_sys: peak,
        i_foot: foot,
        i_foot_next: foot_next,
        sys,
        amp_foot,
        height,
        t1: rel(peak),
        tpi: rel(foot_next),
        tpp: (next - peak) as f64 / fs,
        area_rise,
        area_decay,
        w25,
        w50,
        w75,
        v1: d1.samples[i_v1],
        tv1: rel(i_v1),
        v2: d1.samples[i_v2],
        tv2: rel(i_v2),
        a1: d2.samples[i_a1],
        ta1: rel(i_a1),
        a2: d2.samples[i_a2],
        ta2: rel(i_a2),
    })
}

/// Trapezoidal sum of `s - base` with unit spacing.
fn trapezoid(s: &[f64], base: f64) -> f64 {
    s.windows(2).map(|w| 0.5 * (w[0] + w[1]) - base).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Extremum {
    Max,
    Min,
}

/// First local extremum of `d` inside the closed window `[lo, hi]` that
/// starts at or after `from`. Runs of equal values count as one extremum
/// located at the run's midpoint; a run touching the window edge is judged
/// on its in-window neighbour only.
fn first_extremum(d: &[f64], lo: usize, hi: usize, from: usize, kind: Extremum) -> Option<usize> {
    let beyond = |v: f64, neighbour: f64| match kind {
        Extremum::Max => neighbour < v,
        Extremum::Min => neighbour > v,
    };
    let mut s = lo;
    while s <= hi {
        let v = d[s];
        let mut e = s;
        while e < hi && d[e + 1] == v {
            e += 1;
        }
        if s >= from || e >= from {
            let left = (s > lo).then(|| d[s - 1]);
            let right = (e < hi).then(|| d[e + 1]);
            let is_ext = (left.is_some() || right.is_some())
                && left.map_or(true, |l| beyond(v, l))
                && right.map_or(true, |r| beyond(v, r));
            let mid = (s + e) / 2;
            if is_ext && mid >= from {
                return Some(mid);
            }
        }
        e += 1;
        s = e;
    }
    None
}
