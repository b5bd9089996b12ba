//! Signal loading contracts and the preprocessing pipeline: baseline-wander
//! removal, R-peak detection, ectopic-beat flagging, and amplitude
//! normalization.
//!
//! The canonical order is the one [`preprocess`] applies: detrend the raw
//! record, detect peaks on the detrended signal, flag ectopic beats, then
//! normalize so the median non-ectopic peak amplitude becomes 1. Every
//! function is a pure function of its inputs, so records can be processed
//! per patient in parallel.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::stats;

/// Short running-median window (seconds) of the baseline estimator.
pub const BASELINE_SHORT_WINDOW_S: f64 = 0.2;
/// Long running-median window (seconds) of the baseline estimator.
pub const BASELINE_LONG_WINDOW_S: f64 = 0.6;
/// Minimum spacing between detected peaks (seconds).
pub const PEAK_REFRACTORY_S: f64 = 0.2;

/// Moving-average window (seconds) applied to the squared derivative.
const INTEGRATION_WINDOW_S: f64 = 0.15;
/// Detected peaks are refined to the signal maximum within this radius (seconds).
const REFINE_RADIUS_S: f64 = 0.1;
/// Detection threshold as a fraction of the running mean of peak heights.
const THRESHOLD_RATIO: f64 = 0.5;
/// Weight of a new peak height in the running-mean update.
const PEAK_HEIGHT_WEIGHT: f64 = 0.125;
/// Seconds of signal used to initialize the detection threshold.
const THRESHOLD_INIT_S: f64 = 2.0;
/// Relative deviation of an inter-peak interval that marks a beat ectopic.
const ECTOPIC_DEVIATION: f64 = 0.2;
/// Inter-peak intervals consulted on each side of the one under test.
const ECTOPIC_HALF_NEIGHBORHOOD: usize = 5;

/// One patient's sampled waveform in millivolts.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalRecord {
    pub patient_id: String,
    pub sample_rate_hz: u32,
    pub samples: Vec<f64>,
}

/// Detected beats: sample indices of R peaks, the detrended amplitude at
/// each peak, and per-beat ectopic flags. The three vectors are congruent
/// and peaks are strictly ascending with at least refractory spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatAnnotations {
    pub peak_indices: Vec<usize>,
    pub peak_amplitudes: Vec<f64>,
    pub ectopic_flags: Vec<bool>,
}

/// A detrended, amplitude-normalized signal ready for instance extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanSignal {
    pub patient_id: String,
    pub sample_rate_hz: u32,
    pub samples: Vec<f64>,
    /// Median non-ectopic peak amplitude the samples were divided by.
    pub normalization_divisor: f64,
}

/// Failure modes of signal validation and preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub enum SignalError {
    EmptySignal,
    ZeroSampleRate,
    NonFiniteSample { index: usize },
    SignalTooShort { needed: usize, got: usize },
    NoPeaksFound,
    NoUsableBeats,
    DegenerateAmplitude { median: f64 },
}

impl fmt::Display for SignalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptySignal => write!(f, "signal contains no samples"),
            Self::ZeroSampleRate => write!(f, "sample rate must be positive"),
            Self::NonFiniteSample { index } => {
                write!(f, "sample {index} is not finite")
            }
            Self::SignalTooShort { needed, got } => {
                write!(f, "signal too short: need {needed} samples, got {got}")
            }
            Self::NoPeaksFound => write!(f, "no peaks found"),
            Self::NoUsableBeats => write!(f, "no non-ectopic beats available"),
            Self::DegenerateAmplitude { median } => {
                write!(f, "median peak amplitude {median} is too small to normalize by")
            }
        }
    }
}

impl core::error::Error for SignalError {}

impl SignalRecord {
    /// Builds a record, validating the invariants every pipeline stage
    /// assumes: positive sample rate, at least one sample, all finite.
    pub fn new(
        patient_id: String,
        sample_rate_hz: u32,
        samples: Vec<f64>,
    ) -> Result<Self, SignalError> {
        if sample_rate_hz == 0 {
            return Err(SignalError::ZeroSampleRate);
        }
        if samples.is_empty() {
            return Err(SignalError::EmptySignal);
        }
        if let Some(index) = samples.iter().position(|s| !s.is_finite()) {
            return Err(SignalError::NonFiniteSample { index });
        }
        Ok(Self { patient_id, sample_rate_hz, samples })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }
}

impl BeatAnnotations {
    pub fn len(&self) -> usize {
        self.peak_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peak_indices.is_empty()
    }
}

/// Window length in samples for `seconds` at `rate`, forced odd so centered
/// medians sit on a single sample.
fn odd_window(rate: f64, seconds: f64) -> usize {
    let w = libm::round(rate * seconds) as usize;
    (if w % 2 == 0 { w + 1 } else { w }).max(1)
}

/// Centered running median with windows truncated at the array edges.
fn running_median(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = values.len();
    let mut out = Vec::with_capacity(n);
    let mut buf: Vec<f64> = Vec::with_capacity(window);
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        buf.clear();
        buf.extend_from_slice(&values[lo..hi]);
        out.push(stats::median_in_place(&mut buf));
    }
    out
}

/// Centered moving mean with windows truncated at the array edges.
fn moving_mean(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = values.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for &v in values {
        let last = *prefix.last().expect("prefix is never empty");
        prefix.push(last + v);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Subtracts a two-stage running-median baseline estimate (short window,
/// then long window) from the signal. Output has the same length.
pub fn remove_baseline_wander(signal: &SignalRecord) -> Result<SignalRecord, SignalError> {
    if signal.sample_rate_hz == 0 {
        return Err(SignalError::ZeroSampleRate);
    }
    let rate = f64::from(signal.sample_rate_hz);
    let short = odd_window(rate, BASELINE_SHORT_WINDOW_S);
    let long = odd_window(rate, BASELINE_LONG_WINDOW_S);
    if signal.samples.len() < long {
        return Err(SignalError::SignalTooShort {
            needed: long,
            got: signal.samples.len(),
        });
    }
    let stage_one = running_median(&signal.samples, short);
    let baseline = running_median(&stage_one, long);
    let samples = signal
        .samples
        .iter()
        .zip(&baseline)
        .map(|(s, b)| s - b)
        .collect();
    Ok(SignalRecord {
        patient_id: signal.patient_id.clone(),
        sample_rate_hz: signal.sample_rate_hz,
        samples,
    })
}

/// Detects R peaks: differentiate, square, integrate over a 0.15 s moving
/// window, threshold adaptively at half the running mean of accepted peak
/// heights with a 0.2 s refractory period, then refine each detection to
/// the local signal maximum within ±0.1 s.
///
/// Run this on the baseline-removed signal; the refinement step assumes the
/// R peak is a local maximum of the samples themselves.
pub fn detect_r_peaks(signal: &SignalRecord) -> Result<BeatAnnotations, SignalError> {
    if signal.sample_rate_hz == 0 {
        return Err(SignalError::ZeroSampleRate);
    }
    let rate = f64::from(signal.sample_rate_hz);
    let n = signal.samples.len();
    let min_len = (THRESHOLD_INIT_S * rate) as usize;
    if n < min_len {
        return Err(SignalError::SignalTooShort { needed: min_len, got: n });
    }

    let energy: Vec<f64> = signal
        .samples
        .windows(2)
        .map(|w| {
            let d = w[1] - w[0];
            d * d
        })
        .collect();
    let integrated = moving_mean(&energy, odd_window(rate, INTEGRATION_WINDOW_S));

    let global_max = integrated.iter().copied().fold(f64::MIN, f64::max);
    if global_max <= 0.0 {
        return Err(SignalError::NoPeaksFound);
    }
    let init_region = min_len.min(integrated.len());
    let lead_in_max = integrated[..init_region]
        .iter()
        .copied()
        .fold(f64::MIN, f64::max);
    // A silent lead-in gives no threshold to start from; fall back to the
    // strongest peak anywhere in the record.
    let mut running_height = if lead_in_max > 0.0 { lead_in_max } else { global_max };

    let refractory = libm::round(PEAK_REFRACTORY_S * rate) as usize;
    let mut rough: Vec<usize> = Vec::new();
    for i in 1..integrated.len().saturating_sub(1) {
        if !(integrated[i] >= integrated[i - 1] && integrated[i] > integrated[i + 1]) {
            continue;
        }
        if integrated[i] <= THRESHOLD_RATIO * running_height {
            continue;
        }
        match rough.last().copied() {
            Some(last) if i - last < refractory => {
                if integrated[i] > integrated[last] {
                    *rough.last_mut().expect("rough is nonempty") = i;
                    running_height = (1.0 - PEAK_HEIGHT_WEIGHT) * running_height
                        + PEAK_HEIGHT_WEIGHT * integrated[i];
                }
            }
            _ => {
                rough.push(i);
                running_height = (1.0 - PEAK_HEIGHT_WEIGHT) * running_height
                    + PEAK_HEIGHT_WEIGHT * integrated[i];
            }
        }
    }
    if rough.is_empty() {
        return Err(SignalError::NoPeaksFound);
    }

    let radius = libm::round(REFINE_RADIUS_S * rate) as usize;
    let mut refined: Vec<usize> = rough
        .iter()
        .map(|&i| {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius + 1).min(n);
            let mut best = lo;
            for j in lo..hi {
                if signal.samples[j] > signal.samples[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    refined.sort_unstable();

    let mut peaks: Vec<usize> = Vec::with_capacity(refined.len());
    for p in refined {
        match peaks.last().copied() {
            Some(last) if p - last < refractory => {
                if signal.samples[p] > signal.samples[last] {
                    *peaks.last_mut().expect("peaks is nonempty") = p;
                }
            }
            _ => peaks.push(p),
        }
    }

    let peak_amplitudes = peaks.iter().map(|&p| signal.samples[p]).collect();
    let ectopic_flags = vec![false; peaks.len()];
    Ok(BeatAnnotations { peak_indices: peaks, peak_amplitudes, ectopic_flags })
}

/// Flags ectopic beats. A beat is flagged when the interval that terminates
/// at it deviates more than 20% from the median of the 10 surrounding
/// intervals, or when its one-second instance window would run past either
/// end of the signal. Fewer than 3 peaks pass through unchanged.
pub fn flag_ectopic_beats(
    annotations: &BeatAnnotations,
    signal: &SignalRecord,
) -> BeatAnnotations {
    let mut result = annotations.clone();
    let n = annotations.len();
    if n < 3 {
        return result;
    }

    let intervals: Vec<f64> = annotations
        .peak_indices
        .windows(2)
        .map(|w| (w[1] - w[0]) as f64)
        .collect();
    let mut buf: Vec<f64> = Vec::with_capacity(2 * ECTOPIC_HALF_NEIGHBORHOOD);
    for t in 0..intervals.len() {
        let lo = t.saturating_sub(ECTOPIC_HALF_NEIGHBORHOOD);
        let hi = (t + ECTOPIC_HALF_NEIGHBORHOOD + 1).min(intervals.len());
        buf.clear();
        buf.extend(
            intervals[lo..hi]
                .iter()
                .enumerate()
                .filter(|(j, _)| lo + j != t)
                .map(|(_, &v)| v),
        );
        if buf.is_empty() {
            continue;
        }
        let local_median = stats::median_in_place(&mut buf);
        if libm::fabs(intervals[t] - local_median) > ECTOPIC_DEVIATION * local_median {
            result.ectopic_flags[t + 1] = true;
        }
    }

    // Beats too close to either boundary cannot host a full peak-centered
    // window; excluding them here avoids padding artifacts downstream.
    let half_window = signal.sample_rate_hz as usize / 2;
    let len = signal.samples.len();
    for (b, &p) in annotations.peak_indices.iter().enumerate() {
        if p < half_window || p + half_window > len {
            result.ectopic_flags[b] = true;
        }
    }
    result
}

/// Divides every sample by the median non-ectopic peak amplitude and
/// records the divisor.
pub fn normalize_amplitude(
    signal: &SignalRecord,
    annotations: &BeatAnnotations,
) -> Result<CleanSignal, SignalError> {
    let kept: Vec<f64> = annotations
        .peak_amplitudes
        .iter()
        .zip(&annotations.ectopic_flags)
        .filter(|(_, &ectopic)| !ectopic)
        .map(|(&a, _)| a)
        .collect();
    if kept.is_empty() {
        return Err(SignalError::NoUsableBeats);
    }
    let divisor = stats::median(&kept);
    if !(divisor > 1e-12) {
        return Err(SignalError::DegenerateAmplitude { median: divisor });
    }
    let samples = signal.samples.iter().map(|s| s / divisor).collect();
    Ok(CleanSignal {
        patient_id: signal.patient_id.clone(),
        sample_rate_hz: signal.sample_rate_hz,
        samples,
        normalization_divisor: divisor,
    })
}

/// Runs the full pipeline: detrend, detect peaks, flag ectopic beats,
/// normalize. Annotation amplitudes refer to the detrended (pre-division)
/// signal; peak indices are valid for both.
pub fn preprocess(signal: &SignalRecord) -> Result<(CleanSignal, BeatAnnotations), SignalError> {
    let detrended = remove_baseline_wander(signal)?;
    let annotations = detect_r_peaks(&detrended)?;
    let annotations = flag_ectopic_beats(&annotations, &detrended);
    let clean = normalize_amplitude(&detrended, &annotations)?;
    Ok((clean, annotations))
}
