//! Collapsing a bag of instance probabilities into one patient-level risk
//! score, and splitting a scored cohort into high- and low-risk groups.
//!
//! The default aggregator is the mean of the top 20% of instance
//! probabilities: positive bags are expected to hold more high-scoring
//! instances than negative bags, without any single instance being
//! decisive. Robustness variants swap the fraction (10%, 50%) or the mean
//! for a median. The high-risk group is everyone strictly above the 75th
//! percentile of a cohort's scores.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::instances::InstanceBag;
use crate::model::{self, ModelError, ModelParams, Variant};
use crate::stats;

/// How the top instance probabilities are collapsed into one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregatorKind {
    TopFractionMean,
    TopFractionMedian,
}

/// An aggregation rule: keep the top `fraction` of instance probabilities
/// and reduce them with `kind`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregatorSpec {
    pub kind: AggregatorKind,
    pub fraction: f64,
}

impl Default for AggregatorSpec {
    fn default() -> Self {
        Self { kind: AggregatorKind::TopFractionMean, fraction: 0.2 }
    }
}

impl AggregatorSpec {
    pub fn new(kind: AggregatorKind, fraction: f64) -> Result<Self, AggregateError> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(AggregateError::InvalidFraction { got: fraction });
        }
        Ok(Self { kind, fraction })
    }

    /// Compact token naming the rule, e.g. `top20pct_mean`.
    pub fn label(&self) -> String {
        use fmt::Write;
        let mut s = String::new();
        let pct = libm::round(self.fraction * 100.0) as u32;
        let kind = match self.kind {
            AggregatorKind::TopFractionMean => "mean",
            AggregatorKind::TopFractionMedian => "median",
        };
        let _ = write!(s, "top{pct}pct_{kind}");
        s
    }

    /// Parses the `label()` form: `top<percent>pct_<mean|median>`.
    pub fn parse(token: &str) -> Option<Self> {
        let rest = token.strip_prefix("top")?;
        let (pct, kind) = rest.split_once("pct_")?;
        let pct: u32 = pct.parse().ok()?;
        if pct == 0 || pct > 100 {
            return None;
        }
        let kind = match kind {
            "mean" => AggregatorKind::TopFractionMean,
            "median" => AggregatorKind::TopFractionMedian,
            _ => return None,
        };
        Some(Self { kind, fraction: pct as f64 / 100.0 })
    }
}

/// One patient's aggregated score for one horizon. `high_risk` is false
/// until `designate_high_risk` assigns it over a whole cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskScore {
    pub patient_id: String,
    pub horizon_days: u32,
    pub score: f64,
    pub high_risk: bool,
}

/// Failure modes of aggregation and risk designation.
#[derive(Debug, Clone, PartialEq)]
pub enum AggregateError {
    EmptyScores,
    InvalidFraction { got: f64 },
    TooFewPatients { needed: usize, got: usize },
    Model(ModelError),
}

impl fmt::Display for AggregateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyScores => write!(f, "no instance probabilities to aggregate"),
            Self::InvalidFraction { got } => {
                write!(f, "aggregator fraction must lie in (0, 1], got {got}")
            }
            Self::TooFewPatients { needed, got } => {
                write!(f, "risk designation needs at least {needed} patients, got {got}")
            }
            Self::Model(e) => write!(f, "model failure during scoring: {e}"),
        }
    }
}

impl core::error::Error for AggregateError {}

impl From<ModelError> for AggregateError {
    fn from(e: ModelError) -> Self {
        Self::Model(e)
    }
}

/// Collapses instance probabilities per `spec`: the m = ceil(fraction·N)
/// largest values are kept and reduced by mean or median.
pub fn aggregate_scores(
    instance_probs: &[f64],
    spec: &AggregatorSpec,
) -> Result<f64, AggregateError> {
    if instance_probs.is_empty() {
        return Err(AggregateError::EmptyScores);
    }
    if !(spec.fraction > 0.0 && spec.fraction <= 1.0) {
        return Err(AggregateError::InvalidFraction { got: spec.fraction });
    }
    let n = instance_probs.len();
    let m = (libm::ceil(spec.fraction * n as f64) as usize).clamp(1, n);
    let mut sorted = instance_probs.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let top = &mut sorted[..m];
    Ok(match spec.kind {
        AggregatorKind::TopFractionMean => stats::mean(top),
        AggregatorKind::TopFractionMedian => stats::median_in_place(top),
    })
}

/// Runs the instance classifier over every instance of `bag` and returns
/// the probabilities in instance order. Instance-level variants only.
pub fn instance_probabilities(
    bag: &InstanceBag,
    params: &ModelParams,
) -> Result<Vec<f64>, AggregateError> {
    bag.instances
        .iter()
        .map(|inst| Ok(model::instance_forward(params, &inst.values)?.0))
        .collect()
}

/// Scores one patient for one horizon: instance probabilities aggregated
/// per `spec` for instance-level variants; the set variant scores the bag
/// in a single forward pass and ignores `spec`.
pub fn score_patient(
    bag: &InstanceBag,
    params: &ModelParams,
    spec: &AggregatorSpec,
    horizon_days: u32,
) -> Result<RiskScore, AggregateError> {
    let score = if params.descriptor.variant == Variant::Set {
        model::set_forward(params, bag)?.0
    } else {
        let probs = instance_probabilities(bag, params)?;
        aggregate_scores(&probs, spec)?
    };
    Ok(RiskScore { patient_id: bag.patient_id.clone(), horizon_days, score, high_risk: false })
}

/// 75th percentile by linear interpolation between order statistics, with
/// h = (n+1)·q: h clamps to the extremes, otherwise the fractional part
/// interpolates between the floor(h)-th and next order statistic
/// (1-indexed). On 4n distinct scores this lands strictly between the
/// 3n-th and (3n+1)-th, so a strict comparison flags exactly n.
fn upper_quartile(sorted_ascending: &[f64]) -> f64 {
    let n = sorted_ascending.len();
    let h = (n as f64 + 1.0) * 0.75;
    if h <= 1.0 {
        return sorted_ascending[0];
    }
    if h >= n as f64 {
        return sorted_ascending[n - 1];
    }
    let i = libm::floor(h) as usize;
    let frac = h - i as f64;
    sorted_ascending[i - 1] + frac * (sorted_ascending[i] - sorted_ascending[i - 1])
}

/// Flags every patient whose score lies strictly above the cohort's 75th
/// percentile as high risk, everyone else as low risk. Returns the
/// threshold. Needs at least 4 patients; with all-equal scores nobody is
/// flagged.
pub fn designate_high_risk(scores: &mut [RiskScore]) -> Result<f64, AggregateError> {
    if scores.len() < 4 {
        return Err(AggregateError::TooFewPatients { needed: 4, got: scores.len() });
    }
    let mut values: Vec<f64> = scores.iter().map(|s| s.score).collect();
    values.sort_unstable_by(f64::total_cmp);
    let threshold = upper_quartile(&values);
    for s in scores.iter_mut() {
        s.high_risk = s.score > threshold;
    }
    Ok(threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::Instance;
    use crate::model::ArchitectureDescriptor;
    use crate::rng;
    use alloc::format;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::Rng;

    /// Full sort, slice, reduce: the reference the fast path must match
    /// exactly.
    fn aggregate_oracle(probs: &[f64], spec: &AggregatorSpec) -> f64 {
        let mut sorted = probs.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let m = (libm::ceil(spec.fraction * probs.len() as f64) as usize).clamp(1, probs.len());
        let mut top: Vec<f64> = sorted[..m].to_vec();
        match spec.kind {
            AggregatorKind::TopFractionMean => top.iter().sum::<f64>() / m as f64,
            AggregatorKind::TopFractionMedian => crate::stats::median_in_place(&mut top),
        }
    }

    fn scores_of(values: &[f64]) -> Vec<RiskScore> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| RiskScore {
                patient_id: format!("p{i:04}"),
                horizon_days: 30,
                score: v,
                high_risk: false,
            })
            .collect()
    }

    #[test]
    fn top_fifth_of_a_decile_ladder() {
        let probs: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let spec = AggregatorSpec::default();
        let got = aggregate_scores(&probs, &spec).unwrap();
        assert!((got - 0.95).abs() < 1e-15);
    }

    #[test]
    fn constant_scores_aggregate_to_the_constant() {
        let probs = vec![0.37; 10];
        for kind in [AggregatorKind::TopFractionMean, AggregatorKind::TopFractionMedian] {
            for fraction in [0.1, 0.2, 0.5, 1.0] {
                let spec = AggregatorSpec { kind, fraction };
                let got = aggregate_scores(&probs, &spec).unwrap();
                assert!((got - 0.37).abs() < 1e-15, "{got}");
            }
        }
    }

    #[test]
    fn seven_scores_at_one_fifth_keep_two() {
        // ceil(0.2 * 7) = 2.
        let probs = vec![0.1, 0.9, 0.3, 0.7, 0.2, 0.8, 0.4];
        let spec = AggregatorSpec::default();
        let got = aggregate_scores(&probs, &spec).unwrap();
        assert_eq!(got, (0.9 + 0.8) / 2.0);
        assert_eq!(got, aggregate_oracle(&probs, &spec));
    }

    #[test]
    fn matches_the_sort_slice_oracle_on_random_vectors() {
        let mut rng = rng::stream(99);
        for trial in 0..200 {
            let n = 1 + (trial % 40);
            let probs: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            for kind in [AggregatorKind::TopFractionMean, AggregatorKind::TopFractionMedian] {
                for fraction in [0.1, 0.2, 0.5, 1.0] {
                    let spec = AggregatorSpec { kind, fraction };
                    let fast = aggregate_scores(&probs, &spec).unwrap();
                    let slow = aggregate_oracle(&probs, &spec);
                    assert_eq!(fast.to_bits(), slow.to_bits());
                }
            }
        }
    }

    #[test]
    fn empty_scores_are_rejected() {
        assert_eq!(
            aggregate_scores(&[], &AggregatorSpec::default()).unwrap_err(),
            AggregateError::EmptyScores
        );
    }

    #[test]
    fn bad_fractions_are_rejected() {
        for bad in [0.0, -0.2, 1.5, f64::NAN] {
            assert!(AggregatorSpec::new(AggregatorKind::TopFractionMean, bad).is_err());
        }
    }

    #[test]
    fn labels_round_trip() {
        let specs = [
            (AggregatorKind::TopFractionMean, 0.1, "top10pct_mean"),
            (AggregatorKind::TopFractionMean, 0.2, "top20pct_mean"),
            (AggregatorKind::TopFractionMean, 0.5, "top50pct_mean"),
            (AggregatorKind::TopFractionMedian, 0.2, "top20pct_median"),
        ];
        for (kind, fraction, label) in specs {
            let spec = AggregatorSpec { kind, fraction };
            assert_eq!(spec.label(), label);
            let parsed = AggregatorSpec::parse(label).unwrap();
            assert_eq!(parsed.kind, kind);
            assert!((parsed.fraction - fraction).abs() < 1e-12);
        }
        assert_eq!(AggregatorSpec::parse("top0pct_mean"), None);
        assert_eq!(AggregatorSpec::parse("top101pct_mean"), None);
        assert_eq!(AggregatorSpec::parse("top20pct_max"), None);
        assert_eq!(AggregatorSpec::parse("bottom20pct_mean"), None);
    }

    #[test]
    fn eight_distinct_scores_flag_exactly_two() {
        let mut scores = scores_of(&[0.1, 0.8, 0.3, 0.6, 0.2, 0.9, 0.4, 0.5]);
        designate_high_risk(&mut scores).unwrap();
        let flagged: Vec<&str> = scores
            .iter()
            .filter(|s| s.high_risk)
            .map(|s| s.patient_id.as_str())
            .collect();
        assert_eq!(flagged, vec!["p0001", "p0005"]);
    }

    #[test]
    fn equal_scores_flag_nobody() {
        let mut scores = scores_of(&[0.5; 12]);
        let threshold = designate_high_risk(&mut scores).unwrap();
        assert_eq!(threshold, 0.5);
        assert!(scores.iter().all(|s| !s.high_risk));
    }

    #[test]
    fn multiples_of_four_distinct_scores_flag_exactly_a_quarter() {
        let mut rng = rng::stream(7);
        for n_quarter in 1..=8usize {
            let n = 4 * n_quarter;
            // Distinct by construction: strictly increasing with jitter.
            let values: Vec<f64> =
                (0..n).map(|i| i as f64 + 0.5 * rng.gen::<f64>()).collect();
            let mut scores = scores_of(&values);
            designate_high_risk(&mut scores).unwrap();
            let flagged = scores.iter().filter(|s| s.high_risk).count();
            assert_eq!(flagged, n_quarter, "cohort of {n}");
        }
    }

    #[test]
    fn cohort_of_1247_distinct_scores_flags_311() {
        let mut rng = rng::stream(8);
        let values: Vec<f64> = (0..1247).map(|i| i as f64 + 0.4 * rng.gen::<f64>()).collect();
        let mut scores = scores_of(&values);
        designate_high_risk(&mut scores).unwrap();
        assert_eq!(scores.iter().filter(|s| s.high_risk).count(), 311);
    }

    #[test]
    fn fewer_than_four_patients_cannot_be_designated() {
        let mut scores = scores_of(&[0.1, 0.2, 0.3]);
        assert_eq!(
            designate_high_risk(&mut scores).unwrap_err(),
            AggregateError::TooFewPatients { needed: 4, got: 3 }
        );
    }

    fn bag_of(values: Vec<Vec<f64>>) -> InstanceBag {
        InstanceBag {
            patient_id: alloc::string::String::from("pt"),
            instances: values
                .into_iter()
                .enumerate()
                .map(|(i, v)| Instance {
                    patient_id: alloc::string::String::from("pt"),
                    beats_per_instance: 1,
                    start_beat_ordinal: i,
                    values: v,
                })
                .collect(),
            labels: Default::default(),
        }
    }

    #[test]
    fn constant_model_scores_one_half() {
        let desc = ArchitectureDescriptor::new(Variant::Lr, 16).unwrap();
        let mut params = crate::model::init_params(&desc, 5);
        for layer in &mut params.layers {
            layer.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        let bag = bag_of((0..6).map(|i| vec![i as f64; 16]).collect());
        let score = score_patient(&bag, &params, &AggregatorSpec::default(), 30).unwrap();
        assert_eq!(score.score, 0.5);
        assert!(!score.high_risk);
        assert_eq!(score.horizon_days, 30);
    }

    #[test]
    fn patient_score_equals_aggregated_forward_probabilities() {
        let desc = ArchitectureDescriptor::new(Variant::Lr, 16).unwrap();
        let params = crate::model::init_params(&desc, 6);
        let mut rng = rng::stream(61);
        let bag = bag_of(
            (0..10)
                .map(|_| (0..16).map(|_| 2.0 * rng.gen::<f64>() - 1.0).collect())
                .collect(),
        );
        let probs: Vec<f64> = bag
            .instances
            .iter()
            .map(|inst| crate::model::lr_forward(&params, &inst.values).unwrap().0)
            .collect();
        let spec = AggregatorSpec::default();
        let direct = aggregate_scores(&probs, &spec).unwrap();
        let scored = score_patient(&bag, &params, &spec, 90).unwrap();
        assert_eq!(scored.score.to_bits(), direct.to_bits());
    }

    #[test]
    fn single_instance_bag_scores_the_instance_probability() {
        let desc = ArchitectureDescriptor::new(Variant::Lr, 16).unwrap();
        let params = crate::model::init_params(&desc, 9);
        let mut rng = rng::stream(91);
        let values: Vec<f64> = (0..16).map(|_| rng.gen::<f64>()).collect();
        let prob = crate::model::lr_forward(&params, &values).unwrap().0;
        let bag = bag_of(vec![values]);
        let score = score_patient(&bag, &params, &AggregatorSpec::default(), 30).unwrap();
        assert_eq!(score.score.to_bits(), prob.to_bits());
    }

    proptest! {
        #[test]
        fn aggregate_is_permutation_invariant(
            mut probs in proptest::collection::vec(0.0f64..=1.0, 1..50),
            rot in 0usize..50,
        ) {
            let spec = AggregatorSpec::default();
            let before = aggregate_scores(&probs, &spec).unwrap();
            let r = rot % probs.len();
            probs.rotate_left(r);
            probs.reverse();
            let after = aggregate_scores(&probs, &spec).unwrap();
            prop_assert_eq!(before.to_bits(), after.to_bits());
        }

        #[test]
        fn raising_one_probability_never_lowers_the_aggregate(
            probs in proptest::collection::vec(0.0f64..=1.0, 1..40),
            idx in 0usize..40,
            bump in 0.0f64..=1.0,
            fraction in prop::sample::select(vec![0.1, 0.2, 0.5, 1.0]),
            median in proptest::bool::ANY,
        ) {
            let kind = if median {
                AggregatorKind::TopFractionMedian
            } else {
                AggregatorKind::TopFractionMean
            };
            let spec = AggregatorSpec { kind, fraction };
            let i = idx % probs.len();
            let before = aggregate_scores(&probs, &spec).unwrap();
            let mut raised = probs.clone();
            raised[i] = (raised[i] + bump).min(1.0);
            let after = aggregate_scores(&raised, &spec).unwrap();
            prop_assert!(after >= before - 1e-12, "{after} < {before}");
        }

        #[test]
        fn aggregate_stays_within_the_input_range(
            probs in proptest::collection::vec(0.0f64..=1.0, 1..40),
            fraction in prop::sample::select(vec![0.1, 0.2, 0.5, 1.0]),
            median in proptest::bool::ANY,
        ) {
            let kind = if median {
                AggregatorKind::TopFractionMedian
            } else {
                AggregatorKind::TopFractionMean
            };
            let spec = AggregatorSpec { kind, fraction };
            let got = aggregate_scores(&probs, &spec).unwrap();
            let lo = probs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(got >= lo - 1e-15 && got <= hi + 1e-15);
        }
    }
}
