//! Evaluation machinery: ROC-AUC, odds ratios over the high/low-risk
//! table, stratified train/test splitting, experiment orchestration over
//! seeded splits, and the three robustness sweeps (instance length,
//! aggregator, positive-fraction).

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;

use crate::aggregate::{self, AggregatorSpec, RiskScore};
use crate::instances::{derive_label, HorizonLabel, InstanceBag, OutcomeRecord, DEFAULT_HORIZONS};
use crate::model::{ModelParams, Variant};
use crate::rng;
use crate::stats;
use crate::training::{self, EpochStats, TrainConfig};

/// Failure modes of metrics and splitting.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalError {
    OneClassOnly { n_pos: usize, n_neg: usize },
    LengthMismatch { scores: usize, labels: usize },
    EmptyGroup { group: &'static str },
    TooFewPatients { class: &'static str, needed: usize, got: usize },
    InvalidTestFraction { got: f64 },
    BadInstanceLength { got: usize },
    BadPositiveFraction { got: f64 },
    MissingBag { patient_id: String },
    InvalidConfig { reason: &'static str },
    Aggregate(crate::aggregate::AggregateError),
    Train(crate::training::TrainError),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::OneClassOnly { n_pos, n_neg } => write!(
                f,
                "metric needs both classes, got {n_pos} positive and {n_neg} negative"
            ),
            Self::LengthMismatch { scores, labels } => {
                write!(f, "{scores} scores but {labels} labels")
            }
            Self::EmptyGroup { group } => write!(f, "{group} group is empty"),
            Self::TooFewPatients { class, needed, got } => {
                write!(f, "need at least {needed} {class} patients, got {got}")
            }
            Self::InvalidTestFraction { got } => {
                write!(f, "test fraction must lie strictly between 0 and 1, got {got}")
            }
            Self::BadInstanceLength { got } => {
                write!(f, "beats per instance must lie in 1..=4, got {got}")
            }
            Self::BadPositiveFraction { got } => write!(
                f,
                "positive fraction {got} leaves no positive training patients"
            ),
            Self::MissingBag { patient_id } => {
                write!(f, "no instance bag found for patient {patient_id}")
            }
            Self::InvalidConfig { reason } => write!(f, "invalid evaluation config: {reason}"),
            Self::Aggregate(e) => write!(f, "aggregation failed: {e}"),
            Self::Train(e) => write!(f, "training failed: {e}"),
        }
    }
}

impl core::error::Error for EvalError {}

impl From<crate::aggregate::AggregateError> for EvalError {
    fn from(e: crate::aggregate::AggregateError) -> Self {
        Self::Aggregate(e)
    }
}

impl From<crate::training::TrainError> for EvalError {
    fn from(e: crate::training::TrainError) -> Self {
        Self::Train(e)
    }
}

/// Probability that a random positive outscores a random negative, ties at
/// half weight, computed through average ranks (exactly the pair-counting
/// statistic, in O(n log n)).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    let n = scores.len();
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::OneClassOnly { n_pos, n_neg });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Average 1-based ranks over each group of equal scores, then sum the
    // positive ranks into the Mann-Whitney U statistic.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j average to (i + j + 1) / 2.
        let avg_rank = (i + j + 1) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }

    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// The 2x2 risk-group table and its odds ratio. When any cell is zero the
/// ratio is computed with 0.5 added to every cell and marked `corrected`.
#[derive(Debug, Clone, PartialEq)]
pub struct OddsRatio {
    pub value: f64,
    /// high risk and event.
    pub a: usize,
    /// high risk, no event.
    pub b: usize,
    /// low risk and event.
    pub c: usize,
    /// low risk, no event.
    pub d: usize,
    pub corrected: bool,
}

/// Builds the high-risk/event table from parallel flag and outcome slices.
pub fn odds_ratio(high_risk: &[bool], events: &[bool]) -> Result<OddsRatio, EvalError> {
    if high_risk.len() != events.len() {
        return Err(EvalError::LengthMismatch {
            scores: high_risk.len(),
            labels: events.len(),
        });
    }
    let mut a = 0usize;
    let mut b = 0usize;
    let mut c = 0usize;
    let mut d = 0usize;
    for (&flag, &event) in high_risk.iter().zip(events) {
        match (flag, event) {
            (true, true) => a += 1,
            (true, false) => b += 1,
            (false, true) => c += 1,
            (false, false) => d += 1,
        }
    }
    if a + b == 0 {
        return Err(EvalError::EmptyGroup { group: "high-risk" });
    }
    if c + d == 0 {
        return Err(EvalError::EmptyGroup { group: "low-risk" });
    }
    let corrected = a == 0 || b == 0 || c == 0 || d == 0;
    let value = if corrected {
        let (fa, fb, fc, fd) = (a as f64 + 0.5, b as f64 + 0.5, c as f64 + 0.5, d as f64 + 0.5);
        (fa * fd) / (fb * fc)
    } else {
        (a as f64 * d as f64) / (b as f64 * c as f64)
    };
    Ok(OddsRatio { value, a, b, c, d, corrected })
}

/// One train/test partition of the cohort labeled at a horizon. Patients
/// whose label is excluded at that horizon appear on neither side.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub seed: u64,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    /// Positive fraction among labeled patients on each side, per horizon:
    /// horizon -> (train incidence, test incidence). Horizons where either
    /// side has no labeled patients are omitted.
    pub incidence: BTreeMap<u32, (f64, f64)>,
}

fn side_incidence(outcomes: &[&OutcomeRecord], horizon: u32) -> Option<f64> {
    let mut pos = 0usize;
    let mut neg = 0usize;
    for rec in outcomes {
        match derive_label(rec, horizon) {
            HorizonLabel::Positive => pos += 1,
            HorizonLabel::Negative => neg += 1,
            HorizonLabel::Excluded => {}
        }
    }
    if pos + neg == 0 {
        None
    } else {
        Some(pos as f64 / (pos + neg) as f64)
    }
}

/// Splits the cohort for one horizon, holding the positive rate of the two
/// sides as close as rounding allows: each class is shuffled with the
/// seeded generator, then `test_fraction` of the positives (half-up,
/// clamped to leave both sides nonempty) go to test, with the negative
/// count chosen so the whole test side is `test_fraction` of the labeled
/// cohort (half-up).
pub fn stratified_split(
    outcomes: &[OutcomeRecord],
    horizon_days: u32,
    seed: u64,
    test_fraction: f64,
) -> Result<SplitPlan, EvalError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(EvalError::InvalidTestFraction { got: test_fraction });
    }
    let mut positives: Vec<&OutcomeRecord> = Vec::new();
    let mut negatives: Vec<&OutcomeRecord> = Vec::new();
    for rec in outcomes {
        match derive_label(rec, horizon_days) {
            HorizonLabel::Positive => positives.push(rec),
            HorizonLabel::Negative => negatives.push(rec),
            HorizonLabel::Excluded => {}
        }
    }
    if positives.len() < 4 {
        return Err(EvalError::TooFewPatients {
            class: "positive",
            needed: 4,
            got: positives.len(),
        });
    }
    if negatives.len() < 4 {
        return Err(EvalError::TooFewPatients {
            class: "negative",
            needed: 4,
            got: negatives.len(),
        });
    }

    let mut rng = rng::stream(seed);
    positives.shuffle(&mut rng);
    negatives.shuffle(&mut rng);

    let n_pos = positives.len();
    let n_neg = negatives.len();
    let n = n_pos + n_neg;
    let test_pos = stats::round_half_up(test_fraction * n_pos as f64).clamp(1, n_pos - 1);
    let test_total = stats::round_half_up(test_fraction * n as f64);
    let test_neg = test_total.saturating_sub(test_pos).clamp(1, n_neg - 1);

    let mut test: Vec<&OutcomeRecord> = Vec::with_capacity(test_pos + test_neg);
    test.extend(&positives[..test_pos]);
    test.extend(&negatives[..test_neg]);
    let mut train: Vec<&OutcomeRecord> = Vec::with_capacity(n - test.len());
    train.extend(&positives[test_pos..]);
    train.extend(&negatives[test_neg..]);

    let mut incidence = BTreeMap::new();
    for &h in DEFAULT_HORIZONS.iter() {
        if let (Some(tr), Some(te)) = (side_incidence(&train, h), side_incidence(&test, h)) {
            incidence.insert(h, (tr, te));
        }
    }

    Ok(SplitPlan {
        seed,
        train_ids: train.iter().map(|r| r.patient_id.clone()).collect(),
        test_ids: test.iter().map(|r| r.patient_id.clone()).collect(),
        incidence,
    })
}

/// Everything needed to reproduce one evaluation run. All randomness
/// (splits, weight init, batch order) derives from `seed`; the
/// `train.rng_seed` field is replaced per split by a child seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub horizon_days: u32,
    pub n_splits: usize,
    pub test_fraction: f64,
    pub aggregator: AggregatorSpec,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Cnn,
            horizon_days: 30,
            n_splits: 5,
            test_fraction: 0.25,
            aggregator: AggregatorSpec::default(),
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

/// Complete outcome of one split: the trained model, the scored test
/// cohort, and the metrics over it.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub split_index: usize,
    pub plan: SplitPlan,
    /// Training patients actually used (differs from `plan.train_ids`
    /// when positives were subsampled).
    pub train_ids: Vec<String>,
    /// Scored test patients with high-risk flags assigned, in
    /// `plan.test_ids` order.
    pub scores: Vec<RiskScore>,
    pub test_labels: Vec<bool>,
    /// Instance probabilities per test patient, parallel to `scores`;
    /// empty vectors for the set variant (it scores bags whole).
    pub instance_probs: Vec<Vec<f64>>,
    pub auc: f64,
    pub threshold: f64,
    /// None when a risk group was empty (e.g. all scores tied).
    pub odds: Option<OddsRatio>,
    pub params: ModelParams,
    pub history: Vec<EpochStats>,
}

/// All splits of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSummary {
    pub config: ExperimentConfig,
    /// Beats per instance of the evaluated bags (0 when undeterminable).
    pub beats_per_instance: usize,
    pub splits: Vec<SplitResult>,
}

impl ExperimentSummary {
    pub fn mean_auc(&self) -> f64 {
        let aucs: Vec<f64> = self.splits.iter().map(|s| s.auc).collect();
        stats::mean(&aucs)
    }
}

/// One line of an evaluation report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub split_index: usize,
    pub horizon_days: u32,
    pub variant: Variant,
    pub beats_per_instance: usize,
    pub aggregator: String,
    /// Fraction of positive training patients kept (1.0 outside the
    /// positive-fraction sweep).
    pub positive_fraction: f64,
    pub auc: f64,
    /// None when a risk group was empty.
    pub odds_ratio: Option<f64>,
    pub corrected: bool,
    pub a: usize,
    pub b: usize,
    pub c: usize,
    pub d: usize,
    pub n_test: usize,
    pub n_flagged: usize,
}

/// Report table; one row per (split, variant, aggregator, sweep setting).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    /// Mean AUC over the rows selected by `filter`; NaN when none match.
    pub fn mean_auc_where<F: Fn(&ReportRow) -> bool>(&self, filter: F) -> f64 {
        let aucs: Vec<f64> =
            self.rows.iter().filter(|r| filter(r)).map(|r| r.auc).collect();
        stats::mean(&aucs)
    }
}

fn bag_index<'a>(bags: &'a [InstanceBag]) -> BTreeMap<&'a str, usize> {
    bags.iter().enumerate().map(|(i, b)| (b.patient_id.as_str(), i)).collect()
}

fn beats_per_instance_of(bags: &[InstanceBag]) -> usize {
    bags.iter()
        .flat_map(|b| b.instances.first())
        .map(|i| i.beats_per_instance)
        .next()
        .unwrap_or(0)
}

/// Confusion cells of flags against event labels.
fn confusion(flags: &[bool], events: &[bool]) -> (usize, usize, usize, usize) {
    let mut cells = (0usize, 0usize, 0usize, 0usize);
    for (&f, &e) in flags.iter().zip(events) {
        match (f, e) {
            (true, true) => cells.0 += 1,
            (true, false) => cells.1 += 1,
            (false, true) => cells.2 += 1,
            (false, false) => cells.3 += 1,
        }
    }
    cells
}

fn row_from_split(
    result: &SplitResult,
    config: &ExperimentConfig,
    beats_per_instance: usize,
    positive_fraction: f64,
) -> ReportRow {
    let flags: Vec<bool> = result.scores.iter().map(|s| s.high_risk).collect();
    let (a, b, c, d) = confusion(&flags, &result.test_labels);
    ReportRow {
        split_index: result.split_index,
        horizon_days: config.horizon_days,
        variant: config.variant,
        beats_per_instance,
        aggregator: config.aggregator.label(),
        positive_fraction,
        auc: result.auc,
        odds_ratio: result.odds.as_ref().map(|o| o.value),
        corrected: result.odds.as_ref().is_some_and(|o| o.corrected),
        a,
        b,
        c,
        d,
        n_test: result.test_labels.len(),
        n_flagged: a + b,
    }
}

impl ExperimentSummary {
    /// Flattens the experiment into report rows.
    pub fn to_report(&self) -> EvalReport {
        EvalReport {
            rows: self
                .splits
                .iter()
                .map(|s| row_from_split(s, &self.config, self.beats_per_instance, 1.0))
                .collect(),
        }
    }
}

/// Scores every test patient of `plan` under `params`, designates the
/// high-risk quartile, and computes the metrics.
fn score_test_cohort(
    bags: &[InstanceBag],
    index: &BTreeMap<&str, usize>,
    plan: &SplitPlan,
    params: &ModelParams,
    config: &ExperimentConfig,
) -> Result<(Vec<RiskScore>, Vec<bool>, Vec<Vec<f64>>, f64, f64, Option<OddsRatio>), EvalError> {
    let horizon = config.horizon_days;
    let mut scores = Vec::with_capacity(plan.test_ids.len());
    let mut labels = Vec::with_capacity(plan.test_ids.len());
    let mut all_probs = Vec::with_capacity(plan.test_ids.len());
    for id in &plan.test_ids {
        let &b = index
            .get(id.as_str())
            .ok_or_else(|| EvalError::MissingBag { patient_id: id.clone() })?;
        let bag = &bags[b];
        labels.push(matches!(bag.labels.get(&horizon), Some(HorizonLabel::Positive)));
        if config.variant.is_instance_level() {
            let probs = aggregate::instance_probabilities(bag, params)?;
            let score = aggregate::aggregate_scores(&probs, &config.aggregator)?;
            all_probs.push(probs);
            scores.push(RiskScore {
                patient_id: id.clone(),
                horizon_days: horizon,
                score,
                high_risk: false,
            });
        } else {
            all_probs.push(Vec::new());
            scores.push(aggregate::score_patient(bag, params, &config.aggregator, horizon)?);
        }
    }
    let values: Vec<f64> = scores.iter().map(|s| s.score).collect();
    let auc = roc_auc(&values, &labels)?;
    let threshold = aggregate::designate_high_risk(&mut scores)?;
    let flags: Vec<bool> = scores.iter().map(|s| s.high_risk).collect();
    let odds = match odds_ratio(&flags, &labels) {
        Ok(o) => Some(o),
        Err(EvalError::EmptyGroup { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok((scores, labels, all_probs, auc, threshold, odds))
}

/// Trains on `train_ids` and evaluates on the plan's test side.
fn execute_split(
    bags: &[InstanceBag],
    plan: SplitPlan,
    train_ids: Vec<String>,
    config: &ExperimentConfig,
    split_index: usize,
) -> Result<SplitResult, EvalError> {
    let index = bag_index(bags);
    let mut train_bags: Vec<InstanceBag> = Vec::with_capacity(train_ids.len());
    for id in &train_ids {
        let &b = index
            .get(id.as_str())
            .ok_or_else(|| EvalError::MissingBag { patient_id: id.clone() })?;
        train_bags.push(bags[b].clone());
    }
    let mut train_config = config.train.clone();
    train_config.rng_seed = rng::child_seed(config.seed, "train", split_index as u64);
    let trained = training::train(config.variant, &train_bags, config.horizon_days, &train_config)?;
    let (scores, test_labels, instance_probs, auc, threshold, odds) =
        score_test_cohort(bags, &index, &plan, &trained.params, config)?;
    Ok(SplitResult {
        split_index,
        plan,
        train_ids,
        scores,
        test_labels,
        instance_probs,
        auc,
        threshold,
        odds,
        params: trained.params,
        history: trained.history,
    })
}

/// Runs one seeded split end to end: stratified partition, training on
/// the train side, scoring and metrics on the test side.
pub fn run_split(
    bags: &[InstanceBag],
    outcomes: &[OutcomeRecord],
    config: &ExperimentConfig,
    split_index: usize,
) -> Result<SplitResult, EvalError> {
    let split_seed = rng::child_seed(config.seed, "split", split_index as u64);
    let plan = stratified_split(outcomes, config.horizon_days, split_seed, config.test_fraction)?;
    let train_ids = plan.train_ids.clone();
    execute_split(bags, plan, train_ids, config, split_index)
}

/// Runs all splits of `config`.
pub fn run_experiment(
    bags: &[InstanceBag],
    outcomes: &[OutcomeRecord],
    config: &ExperimentConfig,
) -> Result<ExperimentSummary, EvalError> {
    if config.n_splits == 0 {
        return Err(EvalError::InvalidConfig { reason: "need at least one split" });
    }
    let splits = (0..config.n_splits)
        .map(|s| run_split(bags, outcomes, config, s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ExperimentSummary {
        config: config.clone(),
        beats_per_instance: beats_per_instance_of(bags),
        splits,
    })
}

/// Retrains each variant at each instance length and reports every cell.
/// `bags_by_k` maps beats-per-instance to that extraction's bags;
/// `config.variant` is ignored in favor of `variants`.
pub fn sweep_instance_length(
    bags_by_k: &BTreeMap<usize, Vec<InstanceBag>>,
    outcomes: &[OutcomeRecord],
    variants: &[Variant],
    config: &ExperimentConfig,
) -> Result<EvalReport, EvalError> {
    for &k in bags_by_k.keys() {
        if !(1..=4).contains(&k) {
            return Err(EvalError::BadInstanceLength { got: k });
        }
    }
    let mut rows = Vec::new();
    for &variant in variants {
        let cell_config = ExperimentConfig { variant, ..config.clone() };
        for (&k, bags) in bags_by_k {
            let summary = run_experiment(bags, outcomes, &cell_config)?;
            for split in &summary.splits {
                rows.push(row_from_split(split, &cell_config, k, 1.0));
            }
        }
    }
    Ok(EvalReport { rows })
}

/// Re-aggregates the instance probabilities stored in a finished
/// experiment under each aggregator spec. No model is retrained and no
/// forward pass is repeated: every spec sees bitwise-identical instance
/// probabilities.
pub fn sweep_aggregators(
    summary: &ExperimentSummary,
    specs: &[AggregatorSpec],
) -> Result<EvalReport, EvalError> {
    if !summary.config.variant.is_instance_level() {
        return Err(EvalError::InvalidConfig {
            reason: "aggregator sweep needs stored instance probabilities",
        });
    }
    let k = summary.beats_per_instance;
    let mut rows = Vec::new();
    for spec in specs {
        let row_config =
            ExperimentConfig { aggregator: *spec, ..summary.config.clone() };
        for split in &summary.splits {
            let mut scores: Vec<RiskScore> = Vec::with_capacity(split.scores.len());
            for (orig, probs) in split.scores.iter().zip(&split.instance_probs) {
                scores.push(RiskScore {
                    patient_id: orig.patient_id.clone(),
                    horizon_days: orig.horizon_days,
                    score: aggregate::aggregate_scores(probs, spec)?,
                    high_risk: false,
                });
            }
            let values: Vec<f64> = scores.iter().map(|s| s.score).collect();
            let auc = roc_auc(&values, &split.test_labels)?;
            let threshold = aggregate::designate_high_risk(&mut scores)?;
            let flags: Vec<bool> = scores.iter().map(|s| s.high_risk).collect();
            let odds = match odds_ratio(&flags, &split.test_labels) {
                Ok(o) => Some(o),
                Err(EvalError::EmptyGroup { .. }) => None,
                Err(e) => return Err(e),
            };
            let reaggregated = SplitResult {
                split_index: split.split_index,
                plan: split.plan.clone(),
                train_ids: split.train_ids.clone(),
                scores,
                test_labels: split.test_labels.clone(),
                instance_probs: Vec::new(),
                auc,
                threshold,
                odds,
                params: split.params.clone(),
                history: split.history.clone(),
            };
            rows.push(row_from_split(&reaggregated, &row_config, k, 1.0));
        }
    }
    Ok(EvalReport { rows })
}

/// Keeps a seeded subsample of the positive training patients, preserving
/// the plan's ordering. A fraction of exactly 1.0 keeps everything
/// untouched.
fn subsample_positives(
    plan: &SplitPlan,
    bags: &[InstanceBag],
    index: &BTreeMap<&str, usize>,
    horizon: u32,
    fraction: f64,
    seed: u64,
) -> Result<Vec<String>, EvalError> {
    if fraction == 1.0 {
        return Ok(plan.train_ids.clone());
    }
    let is_positive = |id: &String| -> Result<bool, EvalError> {
        let &b = index
            .get(id.as_str())
            .ok_or_else(|| EvalError::MissingBag { patient_id: id.clone() })?;
        Ok(matches!(bags[b].labels.get(&horizon), Some(HorizonLabel::Positive)))
    };
    let mut positives: Vec<&String> = Vec::new();
    for id in &plan.train_ids {
        if is_positive(id)? {
            positives.push(id);
        }
    }
    let keep = stats::round_half_up(fraction * positives.len() as f64);
    if keep == 0 {
        return Err(EvalError::BadPositiveFraction { got: fraction });
    }
    let mut shuffled = positives.clone();
    shuffled.shuffle(&mut rng::stream(seed));
    let kept: alloc::collections::BTreeSet<&String> =
        shuffled.into_iter().take(keep).collect();
    let mut train_ids = Vec::with_capacity(plan.train_ids.len());
    for id in &plan.train_ids {
        if !is_positive(id)? || kept.contains(id) {
            train_ids.push(id.clone());
        }
    }
    Ok(train_ids)
}

/// Retrains at each positive-training fraction with the baseline's split
/// and training seeds, subsampling positives after the split so the test
/// side is untouched. Fraction 1.0 reproduces the baseline bitwise.
pub fn sweep_positive_fraction(
    bags: &[InstanceBag],
    outcomes: &[OutcomeRecord],
    fractions: &[f64],
    config: &ExperimentConfig,
) -> Result<EvalReport, EvalError> {
    if config.n_splits == 0 {
        return Err(EvalError::InvalidConfig { reason: "need at least one split" });
    }
    let index = bag_index(bags);
    let k = beats_per_instance_of(bags);
    let mut rows = Vec::new();
    for &fraction in fractions {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(EvalError::BadPositiveFraction { got: fraction });
        }
        let permille = libm::round(fraction * 1000.0) as u64;
        for s in 0..config.n_splits {
            let split_seed = rng::child_seed(config.seed, "split", s as u64);
            let plan =
                stratified_split(outcomes, config.horizon_days, split_seed, config.test_fraction)?;
            let sample_seed = rng::child_seed(
                rng::child_seed(config.seed, "positive-fraction", s as u64),
                "keep",
                permille,
            );
            let train_ids = subsample_positives(
                &plan,
                bags,
                &index,
                config.horizon_days,
                fraction,
                sample_seed,
            )?;
            let result = execute_split(bags, plan, train_ids, config, s)?;
            rows.push(row_from_split(&result, config, k, fraction));
        }
    }
    Ok(EvalReport { rows })
}

#[cfg(test)]
mod metric_tests {
    use super::*;
    use crate::instances::Outcome;
    use alloc::format;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::Rng;

    /// Direct positive-negative pair counting, quadratic.
    fn auc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0.0f64;
        let mut pairs = 0.0f64;
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn perfectly_separated_scores_give_one() {
        let scores = [0.9, 0.8, 0.95, 0.1, 0.2, 0.3];
        let labels = [true, true, true, false, false, false];
        assert_eq!(roc_auc(&scores, &labels).unwrap(), 1.0);
    }

    #[test]
    fn identical_scores_give_one_half() {
        let scores = [0.4; 9];
        let labels = [true, false, true, false, false, true, false, false, false];
        assert_eq!(roc_auc(&scores, &labels).unwrap(), 0.5);
    }

    #[test]
    fn four_patient_example_by_hand() {
        // Positive scores 0.35 and 0.8 against negative 0.1 and 0.4:
        // three of four pairs won.
        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [false, false, true, true];
        assert_eq!(roc_auc(&scores, &labels).unwrap(), 0.75);
    }

    #[test]
    fn matches_the_quadratic_oracle_with_ties() {
        let mut rng = rng::stream(17);
        for trial in 0..200 {
            let n = 2 + (trial % 60);
            // Quantized grid forces plenty of exact ties.
            let scores: Vec<f64> =
                (0..n).map(|_| (rng.gen_range(0..8u32)) as f64 / 8.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen::<bool>()).collect();
            labels[0] = true;
            labels[1] = false;
            let fast = roc_auc(&scores, &labels).unwrap();
            let slow = auc_oracle(&scores, &labels);
            assert!((fast - slow).abs() <= 1e-12, "{fast} vs {slow}");
        }
    }

    #[test]
    fn complement_identity_is_exact() {
        let mut rng = rng::stream(18);
        for trial in 0..300 {
            let n = 2 + (trial % 50);
            let scores: Vec<f64> =
                (0..n).map(|_| (rng.gen_range(0..6u32)) as f64 / 6.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen::<bool>()).collect();
            labels[0] = true;
            labels[1] = false;
            let flipped: Vec<bool> = labels.iter().map(|&l| !l).collect();
            let a = roc_auc(&scores, &labels).unwrap();
            let b = roc_auc(&scores, &flipped).unwrap();
            assert_eq!((a + b).to_bits(), 1.0f64.to_bits(), "{a} + {b}");
        }
    }

    #[test]
    fn invariant_under_strictly_monotone_transforms() {
        let mut rng = rng::stream(19);
        let n = 64;
        let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..16u32)) as f64 / 16.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen::<bool>()).collect();
        labels[0] = true;
        labels[1] = false;
        let base = roc_auc(&scores, &labels).unwrap();
        let affine: Vec<f64> = scores.iter().map(|&s| 2.0 * s + 1.0).collect();
        let expo: Vec<f64> = scores.iter().map(|&s| libm::exp(s)).collect();
        assert_eq!(roc_auc(&affine, &labels).unwrap().to_bits(), base.to_bits());
        assert_eq!(roc_auc(&expo, &labels).unwrap().to_bits(), base.to_bits());
    }

    #[test]
    fn single_class_is_rejected() {
        assert_eq!(
            roc_auc(&[0.1, 0.2], &[true, true]).unwrap_err(),
            EvalError::OneClassOnly { n_pos: 2, n_neg: 0 }
        );
        assert!(roc_auc(&[0.1], &[false]).is_err());
    }

    #[test]
    fn odds_ratio_of_a_textbook_table() {
        let mut flags = vec![true; 100];
        flags.extend(vec![false; 900]);
        let mut events = vec![true; 10];
        events.extend(vec![false; 90]);
        events.extend(vec![true; 5]);
        events.extend(vec![false; 895]);
        let or = odds_ratio(&flags, &events).unwrap();
        assert_eq!((or.a, or.b, or.c, or.d), (10, 90, 5, 895));
        assert!(!or.corrected);
        assert!((or.value - 19.888_888_888_888_89).abs() < 1e-10);
        assert_eq!(or.a + or.b + or.c + or.d, flags.len());
    }

    #[test]
    fn independent_flags_give_unit_odds() {
        let mut flags = vec![true; 50];
        flags.extend(vec![false; 100]);
        let mut events = vec![true; 10];
        events.extend(vec![false; 40]);
        events.extend(vec![true; 20]);
        events.extend(vec![false; 80]);
        let or = odds_ratio(&flags, &events).unwrap();
        assert_eq!(or.value, 1.0);
    }

    #[test]
    fn zero_cell_triggers_the_half_correction() {
        // a=5, b=5, c=0, d=10 -> (5.5 * 10.5) / (5.5 * 0.5) = 21.
        let mut flags = vec![true; 10];
        flags.extend(vec![false; 10]);
        let mut events = vec![true; 5];
        events.extend(vec![false; 5]);
        events.extend(vec![false; 10]);
        let or = odds_ratio(&flags, &events).unwrap();
        assert!(or.corrected);
        assert_eq!((or.a, or.b, or.c, or.d), (5, 5, 0, 10));
        assert!((or.value - 21.0).abs() < 1e-12);
    }

    #[test]
    fn empty_risk_group_is_rejected() {
        let flags = vec![true; 4];
        let events = vec![true, false, true, false];
        assert_eq!(
            odds_ratio(&flags, &events).unwrap_err(),
            EvalError::EmptyGroup { group: "low-risk" }
        );
        let flags = vec![false; 4];
        assert_eq!(
            odds_ratio(&flags, &events).unwrap_err(),
            EvalError::EmptyGroup { group: "high-risk" }
        );
    }

    #[test]
    fn odds_ratio_ignores_patient_order() {
        let flags = [true, false, true, false, false, true, false, false];
        let events = [true, true, false, false, true, true, false, false];
        let or1 = odds_ratio(&flags, &events).unwrap();
        let perm = [5usize, 2, 7, 0, 3, 6, 1, 4];
        let pf: Vec<bool> = perm.iter().map(|&i| flags[i]).collect();
        let pe: Vec<bool> = perm.iter().map(|&i| events[i]).collect();
        let or2 = odds_ratio(&pf, &pe).unwrap();
        assert_eq!(or1, or2);
    }

    fn cohort(n_pos: usize, n_neg: usize) -> Vec<OutcomeRecord> {
        let mut out = Vec::new();
        for i in 0..n_pos {
            out.push(OutcomeRecord {
                patient_id: format!("pos{i:04}"),
                outcome: Outcome::Event { day: 10 },
            });
        }
        for i in 0..n_neg {
            out.push(OutcomeRecord {
                patient_id: format!("neg{i:04}"),
                outcome: Outcome::Censored { day: 400 },
            });
        }
        out
    }

    #[test]
    fn hundred_patient_split_takes_a_quarter() {
        let outcomes = cohort(10, 90);
        let plan = stratified_split(&outcomes, 30, 5, 0.25).unwrap();
        assert_eq!(plan.test_ids.len(), 25);
        let test_pos = plan.test_ids.iter().filter(|id| id.starts_with("pos")).count();
        assert_eq!(test_pos, 3);
        assert_eq!(plan.train_ids.len(), 75);
    }

    #[test]
    fn split_is_seed_deterministic() {
        let outcomes = cohort(12, 88);
        let a = stratified_split(&outcomes, 30, 7, 0.25).unwrap();
        let b = stratified_split(&outcomes, 30, 7, 0.25).unwrap();
        assert_eq!(a, b);
        let c = stratified_split(&outcomes, 30, 8, 0.25).unwrap();
        assert_ne!(a.test_ids, c.test_ids);
    }

    #[test]
    fn large_cohort_maintains_incidence() {
        let outcomes = cohort(107, 4975 - 107);
        let plan = stratified_split(&outcomes, 90, 3, 0.25).unwrap();
        let overall = 107.0 / 4975.0;
        let (_, test_inc) = plan.incidence[&90];
        assert!((test_inc - overall).abs() < 0.003, "test incidence {test_inc}");
    }

    #[test]
    fn tiny_classes_are_rejected() {
        let outcomes = cohort(3, 50);
        assert!(matches!(
            stratified_split(&outcomes, 30, 1, 0.25).unwrap_err(),
            EvalError::TooFewPatients { class: "positive", .. }
        ));
        let outcomes = cohort(50, 3);
        assert!(matches!(
            stratified_split(&outcomes, 30, 1, 0.25).unwrap_err(),
            EvalError::TooFewPatients { class: "negative", .. }
        ));
    }

    #[test]
    fn bad_fractions_are_rejected() {
        let outcomes = cohort(10, 10);
        for bad in [0.0, 1.0, -0.5, 1.5] {
            assert!(matches!(
                stratified_split(&outcomes, 30, 1, bad).unwrap_err(),
                EvalError::InvalidTestFraction { .. }
            ));
        }
    }

    #[test]
    fn excluded_patients_appear_on_neither_side() {
        let mut outcomes = cohort(6, 20);
        outcomes.push(OutcomeRecord {
            patient_id: String::from("gone"),
            outcome: Outcome::Censored { day: 10 },
        });
        let plan = stratified_split(&outcomes, 30, 2, 0.25).unwrap();
        assert!(!plan.train_ids.contains(&String::from("gone")));
        assert!(!plan.test_ids.contains(&String::from("gone")));
        assert_eq!(plan.train_ids.len() + plan.test_ids.len(), 26);
    }

    proptest! {
        #[test]
        fn split_is_a_disjoint_cover(
            n_pos in 4usize..40,
            n_neg in 4usize..200,
            seed in 0u64..1000,
        ) {
            let outcomes = cohort(n_pos, n_neg);
            let plan = stratified_split(&outcomes, 30, seed, 0.25).unwrap();
            let mut all: Vec<&String> =
                plan.train_ids.iter().chain(plan.test_ids.iter()).collect();
            prop_assert_eq!(all.len(), n_pos + n_neg);
            all.sort();
            all.dedup();
            prop_assert_eq!(all.len(), n_pos + n_neg);
            // Both sides keep both classes.
            for side in [&plan.train_ids, &plan.test_ids] {
                prop_assert!(side.iter().any(|id| id.starts_with("pos")));
                prop_assert!(side.iter().any(|id| id.starts_with("neg")));
            }
        }
    }
}
