//! The six pipeline commands. Each takes a resolved [`RunConfig`], reads
//! and writes only the files named there, and reports a one-line summary
//! on standard output. All randomness derives from the config seed.

use std::collections::BTreeMap;

use milbeat_core::aggregate::{designate_high_risk, score_patient};
use milbeat_core::eval::{
    run_experiment, sweep_aggregators, sweep_instance_length, sweep_positive_fraction,
    EvalReport, ExperimentConfig,
};
use milbeat_core::instances::{build_bag, InstanceBag, OutcomeRecord};
use milbeat_core::rng;
use milbeat_core::signal::{preprocess, BeatAnnotations, CleanSignal, SignalRecord};
use milbeat_core::synthgen::generate_corpus;
use milbeat_core::training::train;

use crate::config::{RunConfig, SweepKind};
use crate::error::CliError;
use crate::formats;

/// A manifest's cohort after preprocessing: one entry per patient, in
/// manifest order.
struct Cohort {
    outcomes: Vec<OutcomeRecord>,
    signals: Vec<(CleanSignal, BeatAnnotations)>,
}

impl Cohort {
    /// Reads the manifest, loads every signal, and runs the cleaning
    /// pipeline. Per-patient failures name the patient.
    fn load(cfg: &RunConfig) -> Result<Self, CliError> {
        let rows = formats::read_manifest(&cfg.manifest_path())?;
        let mut outcomes = Vec::with_capacity(rows.len());
        let mut signals = Vec::with_capacity(rows.len());
        for row in rows {
            let record = formats::read_signal(
                &row.signal_path,
                &row.patient_id,
                cfg.cohort.sample_rate_hz,
            )?;
            let pair = preprocess(&record).map_err(|e| {
                CliError::Data(format!("patient {}: {e}", row.patient_id))
            })?;
            outcomes.push(row.outcome);
            signals.push(pair);
        }
        Ok(Self { outcomes, signals })
    }

    /// Builds one instance bag per patient at `k` beats per instance.
    fn bags(&self, cfg: &RunConfig, k: usize, horizons: &[u32]) -> Result<Vec<InstanceBag>, CliError> {
        self.signals
            .iter()
            .zip(&self.outcomes)
            .map(|((clean, ann), outcome)| {
                build_bag(clean, ann, outcome, k, cfg.instance_cap, horizons).map_err(|e| {
                    CliError::from(e).prefixed(&format!("patient {}", outcome.patient_id))
                })
            })
            .collect()
    }
}

impl CliError {
    /// Prepends context like a patient id to the message.
    fn prefixed(self, context: &str) -> Self {
        match self {
            Self::Usage(m) => Self::Usage(format!("{context}: {m}")),
            Self::Data(m) => Self::Data(format!("{context}: {m}")),
            Self::Numerical(m) => Self::Numerical(format!("{context}: {m}")),
        }
    }
}

fn experiment_config(cfg: &RunConfig, horizon_days: u32) -> ExperimentConfig {
    ExperimentConfig {
        variant: cfg.variant,
        horizon_days,
        n_splits: cfg.n_splits,
        test_fraction: cfg.test_fraction,
        aggregator: cfg.aggregator,
        train: cfg.train.clone(),
        seed: cfg.seed,
    }
}

/// Generates a synthetic cohort: one signal file per patient under
/// `<out_dir>/signals/`, the manifest, and the ground-truth beat sidecar.
pub fn cmd_synth(cfg: &RunConfig) -> Result<(), CliError> {
    let mut spec = cfg.cohort.clone();
    spec.seed = rng::child_seed(cfg.seed, "corpus", 0);
    let corpus = generate_corpus(&spec)?;

    let mut manifest_rows = Vec::with_capacity(corpus.patients.len());
    for p in &corpus.patients {
        let relative = format!("signals/{}.ecg1", p.record.patient_id);
        formats::write_signal(&cfg.out_dir.join(&relative), &p.record)?;
        manifest_rows.push((p.record.patient_id.clone(), relative, p.outcome.outcome));
    }
    let manifest_path = cfg.manifest_path();
    formats::write_manifest(&manifest_path, &manifest_rows)?;
    formats::write_truth(&cfg.out_dir.join("truth.csv"), &corpus)?;

    println!(
        "generated {} patients ({} positive) -> {}",
        corpus.patients.len(),
        corpus.n_positive,
        manifest_path.display()
    );
    Ok(())
}

/// Runs the cleaning pipeline over the manifest and caches the results
/// under `<out_dir>/clean/`: cleaned signals, a manifest pointing at them,
/// per-beat annotations, and a per-patient summary.
pub fn cmd_preprocess(cfg: &RunConfig) -> Result<(), CliError> {
    let rows = formats::read_manifest(&cfg.manifest_path())?;
    let clean_dir = cfg.out_dir.join("clean");

    let mut manifest_rows = Vec::with_capacity(rows.len());
    let mut annotations = Vec::with_capacity(rows.len());
    let mut summary = String::from("patient_id,n_beats,n_ectopic,normalization_divisor\n");
    for row in &rows {
        let record = formats::read_signal(
            &row.signal_path,
            &row.patient_id,
            cfg.cohort.sample_rate_hz,
        )?;
        let (clean, ann) = preprocess(&record)
            .map_err(|e| CliError::Data(format!("patient {}: {e}", row.patient_id)))?;
        let relative = format!("{}.ecg1", row.patient_id);
        formats::write_signal(
            &clean_dir.join(&relative),
            &SignalRecord {
                patient_id: clean.patient_id.clone(),
                sample_rate_hz: clean.sample_rate_hz,
                samples: clean.samples.clone(),
            },
        )?;
        use std::fmt::Write as _;
        let n_ectopic = ann.ectopic_flags.iter().filter(|&&f| f).count();
        let _ = writeln!(
            summary,
            "{},{},{n_ectopic},{}",
            row.patient_id,
            ann.peak_indices.len(),
            clean.normalization_divisor
        );
        manifest_rows.push((row.patient_id.clone(), relative, row.outcome.outcome));
        annotations.push((row.patient_id.clone(), ann));
    }
    formats::write_manifest(&clean_dir.join("manifest.csv"), &manifest_rows)?;
    formats::write_annotations(&clean_dir.join("annotations.csv"), &annotations)?;
    formats::write_bytes(&clean_dir.join("summary.csv"), summary.as_bytes())?;

    println!("preprocessed {} patients -> {}", rows.len(), clean_dir.display());
    Ok(())
}

/// Trains the configured variant on the whole manifest at `horizon_days`
/// and writes the model file plus the per-epoch history CSV.
pub fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    let cohort = Cohort::load(cfg)?;
    let bags = cohort.bags(cfg, cfg.k, &cfg.label_horizons())?;

    let mut train_cfg = cfg.train.clone();
    train_cfg.rng_seed = rng::child_seed(cfg.seed, "train", 0);
    let output = train(cfg.variant, &bags, cfg.horizon_days, &train_cfg)?;

    let model_path = cfg.model_path();
    formats::write_model(&model_path, &output.params, cfg.k)?;
    formats::write_history(&cfg.out_dir.join("history.csv"), &output.history)?;

    let best = output
        .history
        .iter()
        .filter_map(|e| e.val_auc)
        .fold(f64::NAN, f64::max);
    println!(
        "trained {} on {} bags over {} epochs (best val AUC {best:.4}) -> {}",
        cfg.variant,
        bags.len(),
        output.history.len(),
        model_path.display()
    );
    Ok(())
}

/// Scores every manifest patient with a stored model, designates the
/// high-risk quartile, and writes the scores CSV.
pub fn cmd_score(cfg: &RunConfig) -> Result<(), CliError> {
    let loaded = formats::read_model(&cfg.model_path())?;
    if loaded.beats_per_instance != cfg.k {
        return Err(CliError::Data(format!(
            "model `{}` was trained on k = {} (input length {}), but the config requests \
             k = {}; set k = {} or point `model` at a matching file",
            cfg.model_path().display(),
            loaded.beats_per_instance,
            loaded.params.descriptor.input_length,
            cfg.k,
            loaded.beats_per_instance
        )));
    }

    let cohort = Cohort::load(cfg)?;
    let bags = cohort.bags(cfg, cfg.k, &cfg.label_horizons())?;
    let mut scores = bags
        .iter()
        .map(|bag| {
            score_patient(bag, &loaded.params, &cfg.aggregator, cfg.horizon_days)
                .map_err(|e| CliError::from(e).prefixed(&format!("patient {}", bag.patient_id)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let threshold = designate_high_risk(&mut scores)?;

    let path = cfg.out_dir.join("scores.csv");
    formats::write_scores(&path, &scores)?;
    let flagged = scores.iter().filter(|s| s.high_risk).count();
    println!(
        "scored {} patients; {flagged} above the quartile threshold {threshold:.6} -> {}",
        scores.len(),
        path.display()
    );
    Ok(())
}

/// Runs the full split experiment at every configured horizon and writes
/// one report CSV with a row per (split, horizon).
pub fn cmd_eval(cfg: &RunConfig) -> Result<(), CliError> {
    let cohort = Cohort::load(cfg)?;
    let bags = cohort.bags(cfg, cfg.k, &cfg.label_horizons())?;

    let mut rows = Vec::new();
    for &horizon in &cfg.horizons {
        let config = experiment_config(cfg, horizon);
        let summary = run_experiment(&bags, &cohort.outcomes, &config)?;
        println!(
            "horizon {horizon}: mean AUC {:.4} over {} splits",
            summary.mean_auc(),
            summary.splits.len()
        );
        rows.extend(summary.to_report().rows);
    }

    let path = cfg.out_dir.join("report.csv");
    formats::write_report(&path, &rows)?;
    println!("{} report rows -> {}", rows.len(), path.display());
    Ok(())
}

/// Runs the configured robustness sweep at `horizon_days` and writes the
/// report CSV.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<(), CliError> {
    let cohort = Cohort::load(cfg)?;
    let config = experiment_config(cfg, cfg.horizon_days);
    let horizons = cfg.label_horizons();

    let report: EvalReport = match cfg.sweep {
        SweepKind::InstanceLength => {
            let mut bags_by_k = BTreeMap::new();
            for k in 1..=4 {
                bags_by_k.insert(k, cohort.bags(cfg, k, &horizons)?);
            }
            sweep_instance_length(&bags_by_k, &cohort.outcomes, &cfg.variants, &config)?
        }
        SweepKind::Aggregator => {
            let bags = cohort.bags(cfg, cfg.k, &horizons)?;
            let summary = run_experiment(&bags, &cohort.outcomes, &config)?;
            sweep_aggregators(&summary, &cfg.aggregators)?
        }
        SweepKind::PositiveFraction => {
            let bags = cohort.bags(cfg, cfg.k, &horizons)?;
            sweep_positive_fraction(&bags, &cohort.outcomes, &cfg.fractions, &config)?
        }
    };

    let path = cfg.out_dir.join("sweep.csv");
    formats::write_report(&path, &report.rows)?;
    println!(
        "{} sweep: {} rows -> {}",
        cfg.sweep,
        report.rows.len(),
        path.display()
    );
    Ok(())
}
