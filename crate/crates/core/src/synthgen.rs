//! Deterministic synthetic corpus generator.
//!
//! Each patient is a train of template beats at jittered intervals with
//! optional white noise and sinusoidal baseline wander. A configurable
//! fraction of beats swaps in a morphologically abnormal template
//! (inverted T wave, widened R wave); positive patients carry a higher
//! fraction than negatives, so bag labels are predictable from beat
//! morphology but no single beat is decisive.
//!
//! Generation is a pure function of [`CohortSpec`]: per-patient seeds are
//! derived from the corpus seed with [`crate::rng::child_seed`], and every
//! random draw happens in a fixed documented order.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::instances::{build_bag, InstanceBag, InstanceError, Outcome, OutcomeRecord};
use crate::rng;
use crate::signal::{preprocess, SignalError, SignalRecord};
use crate::stats;

/// First and last beats sit this many seconds inside the record so every
/// template fits without truncation.
const BEAT_MARGIN_S: f64 = 0.5;
/// Event days for positive patients are drawn from 1..=EVENT_DAY_MAX, at or
/// under the shortest evaluation horizon.
const EVENT_DAY_MAX: u64 = 30;
/// Censor day assigned to negatives, beyond the longest horizon.
const CENSOR_DAY: u32 = 400;

/// Index of the R bump in a template's component list (P, Q, R, S, T).
const R_COMPONENT: usize = 2;
/// Index of the T bump.
const T_COMPONENT: usize = 4;
/// Fraction of patients whose resting T wave is inverted (at full
/// morphology variation).
const INVERTED_RESTING_T_RATE: f64 = 0.22;
/// Half-range in seconds of the per-beat latency jitter applied to the
/// abnormal T wave (at full morphology variation).
const ABNORMAL_T_JITTER_S: f64 = 0.06;

/// One Gaussian bump of a beat template.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussComponent {
    pub center_s: f64,
    pub width_s: f64,
    pub amplitude_mv: f64,
}

/// A beat as a sum of Gaussian bumps over a one-second window, the R bump
/// centered. The R component is the global maximum of the rendered window,
/// attained at the center sample.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatTemplate {
    pub components: Vec<GaussComponent>,
}

impl BeatTemplate {
    /// The normal beat: P, Q, R, S, T bumps.
    pub fn normal() -> Self {
        Self {
            components: vec![
                GaussComponent { center_s: -0.20, width_s: 0.025, amplitude_mv: 0.15 },
                GaussComponent { center_s: -0.035, width_s: 0.008, amplitude_mv: -0.12 },
                GaussComponent { center_s: 0.0, width_s: 0.010, amplitude_mv: 1.0 },
                GaussComponent { center_s: 0.035, width_s: 0.008, amplitude_mv: -0.25 },
                GaussComponent { center_s: 0.28, width_s: 0.025, amplitude_mv: 0.30 },
            ],
        }
    }

    /// The abnormal beat: the normal beat with R widened and T inverted.
    pub fn abnormal() -> Self {
        Self::normal().abnormal_of()
    }

    /// Derives the abnormal variant of this beat: R widened, T driven
    /// negative regardless of this beat's resting polarity, sharpened,
    /// and deepened. The fixed sign makes every patient's abnormal beats
    /// share one signature even when resting T polarity differs, and the
    /// sharpening keeps the wave's area close to the resting wave's, so
    /// area-style summaries of the T region separate the classes far
    /// less cleanly than local shape does.
    pub fn abnormal_of(&self) -> Self {
        let mut components = self.components.clone();
        components[R_COMPONENT].width_s *= 1.3;
        components[T_COMPONENT].amplitude_mv =
            -1.8 * libm::fabs(components[T_COMPONENT].amplitude_mv);
        components[T_COMPONENT].width_s *= 0.6;
        Self { components }
    }

    /// Draws a patient-specific normal beat. Component timings, widths,
    /// and amplitudes vary around [`BeatTemplate::normal`] by uniform
    /// draws whose half-ranges scale with `variation`; 0 reproduces the
    /// base template exactly. Consumes a fixed number of draws from
    /// `rng` regardless of `variation`.
    pub fn with_variation<R: Rng>(variation: f64, rng: &mut R) -> Self {
        let shift = |rng: &mut R, half: f64| variation * half * (2.0 * rng.gen::<f64>() - 1.0);
        let scale =
            |rng: &mut R, half: f64| 1.0 + variation * half * (2.0 * rng.gen::<f64>() - 1.0);
        let mut base = Self::normal();
        base.components[0].center_s += shift(rng, 0.03);
        base.components[0].width_s *= scale(rng, 0.2);
        base.components[0].amplitude_mv *= scale(rng, 0.4);
        base.components[1].amplitude_mv *= scale(rng, 0.3);
        base.components[3].amplitude_mv *= scale(rng, 0.3);
        // R height stays 1.0: it anchors peak detection and amplitude
        // normalization. Only its width wanders.
        base.components[R_COMPONENT].width_s *= scale(rng, 0.15);
        base.components[T_COMPONENT].center_s += shift(rng, 0.045);
        base.components[T_COMPONENT].width_s *= scale(rng, 0.22);
        base.components[T_COMPONENT].amplitude_mv *= scale(rng, 0.25);
        // A minority of patients rest with a shallowly inverted T, so no
        // single fixed template tells resting polarity apart across
        // patients; the shallow depth keeps resting inversion separable
        // from the abnormal beats' deep narrow inversion.
        if rng.gen::<f64>() < variation * INVERTED_RESTING_T_RATE {
            base.components[T_COMPONENT].amplitude_mv *= -0.85;
        }
        base
    }

    /// Evaluates the template over one second at `sample_rate_hz`, the R
    /// center at sample W/2.
    pub fn render(&self, sample_rate_hz: u32) -> Vec<f64> {
        let window = sample_rate_hz as usize;
        let rate = f64::from(sample_rate_hz);
        let half = (window / 2) as f64;
        (0..window)
            .map(|i| {
                let t = (i as f64 - half) / rate;
                self.components
                    .iter()
                    .map(|c| {
                        let z = (t - c.center_s) / c.width_s;
                        c.amplitude_mv * libm::exp(-0.5 * z * z)
                    })
                    .sum()
            })
            .collect()
    }
}

/// Everything that determines a synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortSpec {
    pub n_patients: usize,
    /// Fraction of patients with a positive outcome.
    pub prevalence: f64,
    /// Per-beat abnormality probability for positive patients.
    pub abnormal_rate_positive: f64,
    /// Per-beat abnormality probability for negative patients.
    pub abnormal_rate_negative: f64,
    pub bpm_min: f64,
    pub bpm_max: f64,
    pub duration_s: f64,
    pub noise_sigma_mv: f64,
    pub wander_amplitude_mv: f64,
    pub wander_freq_hz: f64,
    /// Relative half-range of the inter-beat interval jitter.
    pub interval_jitter: f64,
    /// Scale of per-patient beat morphology variation in [0, 1]; 0 gives
    /// every patient the same base template.
    pub morph_variation: f64,
    pub sample_rate_hz: u32,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_patients: 200,
            prevalence: 0.10,
            abnormal_rate_positive: 0.30,
            abnormal_rate_negative: 0.02,
            bpm_min: 55.0,
            bpm_max: 95.0,
            duration_s: 60.0,
            noise_sigma_mv: 0.05,
            wander_amplitude_mv: 0.25,
            wander_freq_hz: 0.3,
            interval_jitter: 0.03,
            morph_variation: 1.0,
            sample_rate_hz: 128,
            seed: 42,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |reason| Err(SynthError::InvalidSpec { reason });
        if self.n_patients == 0 {
            return err("n_patients must be at least 1");
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return err("prevalence must lie strictly between 0 and 1");
        }
        for rate in [self.abnormal_rate_positive, self.abnormal_rate_negative] {
            if !(0.0..=1.0).contains(&rate) {
                return err("abnormal rates must lie in [0, 1]");
            }
        }
        if self.abnormal_rate_positive <= self.abnormal_rate_negative {
            return err("abnormal_rate_positive must exceed abnormal_rate_negative");
        }
        if !(self.bpm_min > 0.0 && self.bpm_max >= self.bpm_min) {
            return err("bpm range must be positive with bpm_min <= bpm_max");
        }
        if !(self.duration_s >= 2.0 * BEAT_MARGIN_S + 1.0) {
            return err("duration_s must leave room for at least one beat");
        }
        if !(self.noise_sigma_mv >= 0.0) {
            return err("noise_sigma_mv must be nonnegative");
        }
        if !(self.wander_amplitude_mv >= 0.0 && self.wander_freq_hz >= 0.0) {
            return err("wander amplitude and frequency must be nonnegative");
        }
        if !(0.0..0.5).contains(&self.interval_jitter) {
            return err("interval_jitter must lie in [0, 0.5)");
        }
        if !(0.0..=1.0).contains(&self.morph_variation) {
            return err("morph_variation must lie in [0, 1]");
        }
        if self.sample_rate_hz == 0 {
            return err("sample_rate_hz must be positive");
        }
        Ok(())
    }
}

/// One generated patient: the raw signal plus ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPatient {
    pub record: SignalRecord,
    /// Sample index of each placed beat's R center, ascending.
    pub true_peaks: Vec<usize>,
    /// Whether each placed beat used the abnormal template.
    pub abnormal_beats: Vec<bool>,
    pub outcome: OutcomeRecord,
}

/// A whole generated cohort, positives first.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub spec: CohortSpec,
    pub n_positive: usize,
    pub patients: Vec<SyntheticPatient>,
}

/// Failure modes of corpus generation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SynthError {
    InvalidSpec { reason: &'static str },
}

impl fmt::Display for SynthError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidSpec { reason } => write!(f, "invalid cohort spec: {reason}"),
        }
    }
}

impl core::error::Error for SynthError {}

/// Failure modes of turning a corpus into instance bags.
#[derive(Debug, Clone, PartialEq)]
pub enum CorpusError {
    Signal { patient_id: String, error: SignalError },
    Instance { patient_id: String, error: InstanceError },
}

impl fmt::Display for CorpusError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Signal { patient_id, error } => {
                write!(f, "patient {patient_id}: {error}")
            }
            Self::Instance { patient_id, error } => {
                write!(f, "patient {patient_id}: {error}")
            }
        }
    }
}

impl core::error::Error for CorpusError {}

/// Generates one patient from a validated spec.
///
/// Draw order from the seeded stream is fixed: bpm, wander phase, one
/// interval draw per placed beat, one abnormality draw per beat, one noise
/// draw per sample (skipped entirely when noise_sigma_mv = 0), then the
/// event day for positive patients.
pub fn generate_patient(
    spec: &CohortSpec,
    patient_id: &str,
    is_positive: bool,
    seed: u64,
) -> Result<SyntheticPatient, SynthError> {
    spec.validate()?;
    let mut rng = rng::stream(seed);
    let rate = f64::from(spec.sample_rate_hz);
    let n_samples = libm::round(spec.duration_s * rate) as usize;

    let bpm = spec.bpm_min + (spec.bpm_max - spec.bpm_min) * rng.gen::<f64>();
    let wander_phase = 2.0 * core::f64::consts::PI * rng.gen::<f64>();
    let morphology = BeatTemplate::with_variation(spec.morph_variation, &mut rng);

    let mut beat_times: Vec<f64> = Vec::new();
    let mut t = BEAT_MARGIN_S;
    while t <= spec.duration_s - BEAT_MARGIN_S + 1e-9 {
        beat_times.push(t);
        let u = rng.gen::<f64>();
        t += 60.0 / bpm * (1.0 + spec.interval_jitter * (2.0 * u - 1.0));
    }

    let abnormal_beats: Vec<bool> = {
        let rate = if is_positive {
            spec.abnormal_rate_positive
        } else {
            spec.abnormal_rate_negative
        };
        // Abnormal beats appear as isolated ectopy: a first-order chain
        // that suppresses back-to-back abnormal beats while keeping the
        // per-beat marginal rate exact (classic bigeminy-like spacing).
        // after_normal saturates at 1 when rate > 0.5, where adjacent
        // abnormals become unavoidable; after_abnormal then picks up the
        // remainder so the marginal still holds.
        let after_normal = if rate < 0.5 { rate / (1.0 - rate) } else { 1.0 };
        let after_abnormal = if rate < 0.5 { 0.0 } else { (2.0 * rate - 1.0) / rate };
        let mut prev = false;
        beat_times
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let p = if i == 0 {
                    rate
                } else if prev {
                    after_abnormal
                } else {
                    after_normal
                };
                prev = rng.gen::<f64>() < p;
                prev
            })
            .collect()
    };

    let normal = morphology.render(spec.sample_rate_hz);
    let abnormal_template = morphology.abnormal_of();
    let window = spec.sample_rate_hz as usize;
    let half = window / 2;

    let mut samples = vec![0.0f64; n_samples];
    let mut true_peaks = Vec::with_capacity(beat_times.len());
    for (&bt, &is_abnormal) in beat_times.iter().zip(&abnormal_beats) {
        let center = libm::round(bt * rate) as usize;
        // The abnormal T drifts in latency from beat to beat, so its
        // evidence is never phase locked to the R peak.
        let jittered = is_abnormal.then(|| {
            let dt =
                spec.morph_variation * ABNORMAL_T_JITTER_S * (2.0 * rng.gen::<f64>() - 1.0);
            let mut shifted = abnormal_template.clone();
            shifted.components[T_COMPONENT].center_s += dt;
            shifted.render(spec.sample_rate_hz)
        });
        let template = jittered.as_deref().unwrap_or(&normal);
        for (offset, &v) in template.iter().enumerate() {
            samples[center - half + offset] += v;
        }
        true_peaks.push(center);
    }

    if spec.wander_amplitude_mv > 0.0 {
        let omega = 2.0 * core::f64::consts::PI * spec.wander_freq_hz;
        for (i, s) in samples.iter_mut().enumerate() {
            *s += spec.wander_amplitude_mv * libm::sin(omega * i as f64 / rate + wander_phase);
        }
    }
    if spec.noise_sigma_mv > 0.0 {
        for s in samples.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *s += spec.noise_sigma_mv * z;
        }
    }

    let outcome = if is_positive {
        let day = rng.gen_range(1..=EVENT_DAY_MAX) as u32;
        Outcome::Event { day }
    } else {
        Outcome::Censored { day: CENSOR_DAY }
    };

    Ok(SyntheticPatient {
        record: SignalRecord {
            patient_id: String::from(patient_id),
            sample_rate_hz: spec.sample_rate_hz,
            samples,
        },
        true_peaks,
        abnormal_beats,
        outcome: OutcomeRecord {
            patient_id: String::from(patient_id),
            outcome,
        },
    })
}

/// Generates the full cohort: round(prevalence·n) positive patients first,
/// then negatives, with per-patient child seeds.
pub fn generate_corpus(spec: &CohortSpec) -> Result<SyntheticCorpus, SynthError> {
    spec.validate()?;
    let n_positive = stats::round_half_up(spec.prevalence * spec.n_patients as f64);
    let patients = (0..spec.n_patients)
        .map(|i| {
            let patient_id = format!("p{i:04}");
            let child = rng::child_seed(spec.seed, "patient", i as u64);
            generate_patient(spec, &patient_id, i < n_positive, child)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SyntheticCorpus {
        spec: spec.clone(),
        n_positive,
        patients,
    })
}

/// Preprocesses every patient and extracts instance bags.
pub fn corpus_to_bags(
    corpus: &SyntheticCorpus,
    beats_per_instance: usize,
    cap: usize,
    horizons: &[u32],
) -> Result<Vec<InstanceBag>, CorpusError> {
    corpus
        .patients
        .iter()
        .map(|p| {
            let (clean, annotations) = preprocess(&p.record).map_err(|error| {
                CorpusError::Signal {
                    patient_id: p.record.patient_id.clone(),
                    error,
                }
            })?;
            build_bag(&clean, &annotations, &p.outcome, beats_per_instance, cap, horizons)
                .map_err(|error| CorpusError::Instance {
                    patient_id: p.record.patient_id.clone(),
                    error,
                })
        })
        .collect()
}
