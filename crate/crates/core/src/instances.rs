//! Instance extraction and label derivation.
//!
//! An instance is k consecutive non-ectopic beats, each contributing one
//! peak-centered window of W samples (W = one second), concatenated into a
//! single vector of k·W values. A patient's instances form a bag that
//! carries the patient's outcome label per prediction horizon.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::signal::{BeatAnnotations, CleanSignal};

/// Most instances kept per patient, temporally first.
pub const DEFAULT_INSTANCE_CAP: usize = 1000;
/// Prediction horizons (days) used throughout evaluation.
pub const DEFAULT_HORIZONS: [u32; 4] = [30, 60, 90, 365];

/// One fixed-length training/scoring example.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub patient_id: String,
    pub beats_per_instance: usize,
    /// Index of the first beat of this instance in the annotation list.
    pub start_beat_ordinal: usize,
    /// k·W concatenated window samples.
    pub values: Vec<f64>,
}

/// Outcome of one patient's follow-up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// The event occurred `day` days after admission.
    Event { day: u32 },
    /// The patient left the study event-free after `day` days.
    Censored { day: u32 },
}

/// A patient's outcome, used to derive per-horizon labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutcomeRecord {
    pub patient_id: String,
    pub outcome: Outcome,
}

/// Label of a patient at one horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HorizonLabel {
    Positive,
    Negative,
    /// Censored before the horizon: unusable for training or evaluation.
    Excluded,
}

/// A patient's ordered instances plus labels per horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceBag {
    pub patient_id: String,
    pub instances: Vec<Instance>,
    pub labels: BTreeMap<u32, HorizonLabel>,
}

/// Failure modes of instance extraction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InstanceError {
    BeatsPerInstanceOutOfRange { got: usize },
    ZeroCap,
    NoInstances,
}

impl fmt::Display for InstanceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BeatsPerInstanceOutOfRange { got } => {
                write!(f, "beats per instance must be in 1..=4, got {got}")
            }
            Self::ZeroCap => write!(f, "instance cap must be at least 1"),
            Self::NoInstances => write!(f, "no usable run of consecutive beats"),
        }
    }
}

impl core::error::Error for InstanceError {}

/// Derives the label of `rec` at `horizon_days`.
pub fn derive_label(rec: &OutcomeRecord, horizon_days: u32) -> HorizonLabel {
    match rec.outcome {
        Outcome::Event { day } if day <= horizon_days => HorizonLabel::Positive,
        Outcome::Event { .. } => HorizonLabel::Negative,
        Outcome::Censored { day } if day >= horizon_days => HorizonLabel::Negative,
        Outcome::Censored { .. } => HorizonLabel::Excluded,
    }
}

/// Extracts up to `cap` instances of `beats_per_instance` consecutive
/// non-ectopic beats. Runs slide by one beat; a flagged beat breaks the
/// run; beats whose window would cross a signal boundary are skipped.
/// Instances are emitted in temporal order.
pub fn extract_instances(
    clean: &CleanSignal,
    annotations: &BeatAnnotations,
    beats_per_instance: usize,
    cap: usize,
) -> Result<Vec<Instance>, InstanceError> {
    if !(1..=4).contains(&beats_per_instance) {
        return Err(InstanceError::BeatsPerInstanceOutOfRange { got: beats_per_instance });
    }
    if cap == 0 {
        return Err(InstanceError::ZeroCap);
    }

    let window = clean.sample_rate_hz as usize;
    let half = window / 2;
    let len = clean.samples.len();
    let usable: Vec<bool> = annotations
        .peak_indices
        .iter()
        .zip(&annotations.ectopic_flags)
        .map(|(&p, &ectopic)| !ectopic && p >= half && p + half <= len)
        .collect();

    let n_beats = annotations.len();
    let mut instances = Vec::new();
    if n_beats >= beats_per_instance {
        for start in 0..=(n_beats - beats_per_instance) {
            if instances.len() == cap {
                break;
            }
            if !usable[start..start + beats_per_instance].iter().all(|&u| u) {
                continue;
            }
            let mut values = Vec::with_capacity(beats_per_instance * window);
            for &p in &annotations.peak_indices[start..start + beats_per_instance] {
                values.extend_from_slice(&clean.samples[p - half..p + half]);
            }
            instances.push(Instance {
                patient_id: clean.patient_id.clone(),
                beats_per_instance,
                start_beat_ordinal: start,
                values,
            });
        }
    }

    if instances.is_empty() {
        return Err(InstanceError::NoInstances);
    }
    Ok(instances)
}

/// Extracts a patient's bag and attaches labels for every horizon.
pub fn build_bag(
    clean: &CleanSignal,
    annotations: &BeatAnnotations,
    outcome: &OutcomeRecord,
    beats_per_instance: usize,
    cap: usize,
    horizons: &[u32],
) -> Result<InstanceBag, InstanceError> {
    let instances = extract_instances(clean, annotations, beats_per_instance, cap)?;
    let labels = horizons
        .iter()
        .map(|&h| (h, derive_label(outcome, h)))
        .collect();
    Ok(InstanceBag {
        patient_id: clean.patient_id.clone(),
        instances,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    const FS: u32 = 128;

    fn clean_signal(len: usize) -> CleanSignal {
        CleanSignal {
            patient_id: "t".into(),
            sample_rate_hz: FS,
            samples: (0..len).map(|i| i as f64).collect(),
            normalization_divisor: 1.0,
        }
    }

    fn annotations(peaks: Vec<usize>) -> BeatAnnotations {
        BeatAnnotations {
            peak_amplitudes: vec![1.0; peaks.len()],
            ectopic_flags: vec![false; peaks.len()],
            peak_indices: peaks,
        }
    }

    fn interior_peaks(n: usize) -> Vec<usize> {
        (0..n).map(|i| 100 + 128 * i).collect()
    }

    #[test]
    fn ten_interior_beats_with_k2_give_nine_instances() {
        let clean = clean_signal(2000);
        let ann = annotations(interior_peaks(10));
        let out = extract_instances(&clean, &ann, 2, 1000).unwrap();
        assert_eq!(out.len(), 9);
        for (i, inst) in out.iter().enumerate() {
            assert_eq!(inst.start_beat_ordinal, i);
            assert_eq!(inst.values.len(), 256);
            assert_eq!(inst.beats_per_instance, 2);
        }
    }

    #[test]
    fn values_are_the_concatenated_peak_centered_windows() {
        let clean = clean_signal(1000);
        let ann = annotations(vec![200, 350]);
        let out = extract_instances(&clean, &ann, 2, 1000).unwrap();
        assert_eq!(out.len(), 1);
        let expected: Vec<f64> = clean.samples[200 - 64..200 + 64]
            .iter()
            .chain(&clean.samples[350 - 64..350 + 64])
            .copied()
            .collect();
        assert_eq!(out[0].values, expected);
    }

    #[test]
    fn cap_keeps_the_temporally_first_instances() {
        let clean = clean_signal(300_000);
        let ann = annotations((0..2000).map(|i| 100 + 128 * i).collect());
        let out = extract_instances(&clean, &ann, 1, 1000).unwrap();
        assert_eq!(out.len(), 1000);
        assert_eq!(out[0].start_beat_ordinal, 0);
        assert_eq!(out[999].start_beat_ordinal, 999);
    }

    #[test]
    fn boundary_beat_is_skipped() {
        let clean = clean_signal(1000);
        let ann = annotations(vec![30, 300]);
        let out = extract_instances(&clean, &ann, 1, 1000).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].start_beat_ordinal, 1);
    }

    #[test]
    fn ectopic_beat_breaks_runs() {
        let clean = clean_signal(2000);
        let mut ann = annotations(interior_peaks(10));
        ann.ectopic_flags[5] = true;
        let k2 = extract_instances(&clean, &ann, 2, 1000).unwrap();
        // Pairs within beats 0..=4 (4 of them) and 6..=9 (3 of them).
        assert_eq!(k2.len(), 7);
        let k1 = extract_instances(&clean, &ann, 1, 1000).unwrap();
        assert_eq!(k1.len(), 9);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let clean = clean_signal(1000);
        let ann = annotations(vec![200]);
        assert_eq!(
            extract_instances(&clean, &ann, 0, 1000).unwrap_err(),
            InstanceError::BeatsPerInstanceOutOfRange { got: 0 }
        );
        assert_eq!(
            extract_instances(&clean, &ann, 5, 1000).unwrap_err(),
            InstanceError::BeatsPerInstanceOutOfRange { got: 5 }
        );
        assert_eq!(
            extract_instances(&clean, &ann, 1, 0).unwrap_err(),
            InstanceError::ZeroCap
        );
    }

    #[test]
    fn all_boundary_beats_yield_no_instances() {
        let clean = clean_signal(200);
        let ann = annotations(vec![10, 150]);
        assert_eq!(
            extract_instances(&clean, &ann, 1, 1000).unwrap_err(),
            InstanceError::NoInstances
        );
    }

    #[test]
    fn label_derivation_matches_the_censoring_rules() {
        let event = OutcomeRecord {
            patient_id: "a".into(),
            outcome: Outcome::Event { day: 45 },
        };
        assert_eq!(derive_label(&event, 60), HorizonLabel::Positive);
        assert_eq!(derive_label(&event, 30), HorizonLabel::Negative);

        let censored_late = OutcomeRecord {
            patient_id: "b".into(),
            outcome: Outcome::Censored { day: 400 },
        };
        assert_eq!(derive_label(&censored_late, 365), HorizonLabel::Negative);

        let censored_early = OutcomeRecord {
            patient_id: "c".into(),
            outcome: Outcome::Censored { day: 80 },
        };
        assert_eq!(derive_label(&censored_early, 90), HorizonLabel::Excluded);
        assert_eq!(derive_label(&censored_early, 60), HorizonLabel::Negative);
    }

    #[test]
    fn positive_labels_are_monotone_in_horizon() {
        for day in [1u32, 30, 59, 90, 200] {
            let rec = OutcomeRecord {
                patient_id: "m".into(),
                outcome: Outcome::Event { day },
            };
            let mut seen_positive = false;
            for h in DEFAULT_HORIZONS {
                let label = derive_label(&rec, h);
                assert_ne!(label, HorizonLabel::Excluded, "events are never excluded");
                if seen_positive {
                    assert_eq!(label, HorizonLabel::Positive);
                }
                seen_positive = label == HorizonLabel::Positive;
            }
        }
    }

    #[test]
    fn build_bag_attaches_all_horizon_labels() {
        let clean = clean_signal(2000);
        let ann = annotations(interior_peaks(10));
        let outcome = OutcomeRecord {
            patient_id: "t".into(),
            outcome: Outcome::Censored { day: 80 },
        };
        let bag = build_bag(&clean, &ann, &outcome, 2, 1000, &DEFAULT_HORIZONS).unwrap();
        assert_eq!(bag.instances.len(), 9);
        assert_eq!(bag.labels[&30], HorizonLabel::Negative);
        assert_eq!(bag.labels[&60], HorizonLabel::Negative);
        assert_eq!(bag.labels[&90], HorizonLabel::Excluded);
        assert_eq!(bag.labels[&365], HorizonLabel::Excluded);
    }

    #[test]
    fn extraction_is_deterministic() {
        let clean = clean_signal(2000);
        let ann = annotations(interior_peaks(10));
        let a = extract_instances(&clean, &ann, 3, 1000).unwrap();
        let b = extract_instances(&clean, &ann, 3, 1000).unwrap();
        assert_eq!(a, b);
    }
}
