use std::collections::BTreeMap;
use std::time::Instant;

use milbeat_core::aggregate::{AggregatorKind, AggregatorSpec};
use milbeat_core::eval::{
    roc_auc, run_experiment, sweep_aggregators, sweep_instance_length, sweep_positive_fraction,
    ExperimentConfig,
};
use milbeat_core::instances::{extract_instances, DEFAULT_HORIZONS, DEFAULT_INSTANCE_CAP};
use milbeat_core::model::Variant;
use milbeat_core::signal::{preprocess, remove_baseline_wander};
use milbeat_core::synthgen::{corpus_to_bags, generate_corpus, generate_patient, CohortSpec};

fn match_peaks(truth: &[usize], detected: &[usize], tol: f64) -> (usize, usize, usize) {
    let mut matched = 0;
    let mut j = 0usize;
    for &t in truth {
        while j < detected.len() && (detected[j] as f64) < t as f64 - tol {
            j += 1;
        }
        if j < detected.len() && (detected[j] as f64 - t as f64).abs() <= tol {
            matched += 1;
            j += 1;
        }
    }
    (matched, truth.len(), detected.len())
}

#[test]
#[ignore]
fn probe_fast() {
    for (name, noise, wander) in
        [("clean", 0.0, 0.0), ("wander", 0.0, 0.25), ("default", 0.05, 0.25)]
    {
        let spec = CohortSpec {
            n_patients: 6,
            noise_sigma_mv: noise,
            wander_amplitude_mv: wander,
            ..CohortSpec::default()
        };
        let corpus = generate_corpus(&spec).unwrap();
        let mut worst = 0.0f64;
        for p in &corpus.patients {
            let once = remove_baseline_wander(&p.record).unwrap();
            let twice = remove_baseline_wander(&once).unwrap();
            let linf = once
                .samples
                .iter()
                .zip(&twice.samples)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst = worst.max(linf);
        }
        println!("idempotence {name}: {worst:.3e}");
    }

    for wander in [0.0, 0.25] {
        for bpm in [50.0, 60.0, 70.0, 80.0, 90.0, 100.0, 110.0, 120.0] {
            let spec = CohortSpec {
                n_patients: 4,
                prevalence: 0.5,
                noise_sigma_mv: 0.0,
                wander_amplitude_mv: wander,
                bpm_min: bpm,
                bpm_max: bpm,
                seed: 900 + bpm as u64,
                ..CohortSpec::default()
            };
            let corpus = generate_corpus(&spec).unwrap();
            let (mut m, mut t, mut d) = (0, 0, 0);
            for p in &corpus.patients {
                let (_clean, ann) = preprocess(&p.record).unwrap();
                let (mm, tt, dd) = match_peaks(&p.true_peaks, &ann.peak_indices, 0.05 * 128.0);
                m += mm;
                t += tt;
                d += dd;
            }
            println!(
                "bpm {bpm} wander {wander}: sens {:.4} ppv {:.4} (true {t} det {d})",
                m as f64 / t as f64,
                m as f64 / d as f64
            );
        }
    }

    for wander in [0.0, 0.25] {
        let spec = CohortSpec {
            n_patients: 8,
            noise_sigma_mv: 0.0,
            wander_amplitude_mv: wander,
            ..CohortSpec::default()
        };
        let corpus = generate_corpus(&spec).unwrap();
        let mut worst_off = 0i64;
        for p in &corpus.patients {
            let (clean, ann) = preprocess(&p.record).unwrap();
            let inst = extract_instances(&clean, &ann, 2, DEFAULT_INSTANCE_CAP).unwrap();
            for i in &inst {
                for w in 0..2 {
                    let seg = &i.values[w * 128..(w + 1) * 128];
                    let argmax = seg
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.total_cmp(b.1))
                        .unwrap()
                        .0;
                    worst_off = worst_off.max((argmax as i64 - 64).abs());
                }
            }
        }
        println!("alignment worst offset (wander {wander}): {worst_off}");
    }

    let spec = CohortSpec { noise_sigma_mv: 0.0, ..CohortSpec::default() };
    let corpus = generate_corpus(&spec).unwrap();
    let scores: Vec<f64> = corpus
        .patients
        .iter()
        .map(|p| {
            p.abnormal_beats.iter().filter(|&&b| b).count() as f64 / p.abnormal_beats.len() as f64
        })
        .collect();
    let labels: Vec<bool> = (0..corpus.patients.len()).map(|i| i < corpus.n_positive).collect();
    println!("oracle auc (noise-free): {}", roc_auc(&scores, &labels).unwrap());

    let spec = CohortSpec {
        n_patients: 1,
        noise_sigma_mv: 0.0,
        wander_amplitude_mv: 0.0,
        interval_jitter: 0.0,
        bpm_min: 60.0,
        bpm_max: 60.0,
        ..CohortSpec::default()
    };
    let p = generate_patient(&spec, "p0", false, 99).unwrap();
    println!("true peaks at 60 bpm / 60 s: {}", p.true_peaks.len());
    let (clean, ann) = preprocess(&p.record).unwrap();
    println!(
        "detected: {} ectopic: {}",
        ann.peak_indices.len(),
        ann.ectopic_flags.iter().filter(|&&f| f).count()
    );
    for k in 1..=4 {
        let inst = extract_instances(&clean, &ann, k, 1000).unwrap();
        println!("k={k}: {} instances", inst.len());
    }
}

#[test]
#[ignore]
fn probe_cnn_default() {
    let t0 = Instant::now();
    let corpus = generate_corpus(&CohortSpec::default()).unwrap();
    let bags = corpus_to_bags(&corpus, 2, DEFAULT_INSTANCE_CAP, &DEFAULT_HORIZONS).unwrap();
    let outcomes: Vec<_> = corpus.patients.iter().map(|p| p.outcome.clone()).collect();
    println!("corpus+bags: {:.1}s", t0.elapsed().as_secs_f64());

    let t1 = Instant::now();
    let config = ExperimentConfig::default();
    let summary = run_experiment(&bags, &outcomes, &config).unwrap();
    let aucs: Vec<f64> = summary.splits.iter().map(|s| s.auc).collect();
    println!(
        "cnn k=2 aucs {:?} mean {:.4} in {:.1}s",
        aucs,
        summary.mean_auc(),
        t1.elapsed().as_secs_f64()
    );
    for s in &summary.splits {
        println!("  split {}: {} epochs trained", s.split_index, s.history.len());
    }

    let t2 = Instant::now();
    let lr_config = ExperimentConfig { variant: Variant::Lr, ..ExperimentConfig::default() };
    let lr = run_experiment(&bags, &outcomes, &lr_config).unwrap();
    let lr_aucs: Vec<f64> = lr.splits.iter().map(|s| s.auc).collect();
    println!(
        "lr k=2 aucs {:?} mean {:.4} in {:.1}s",
        lr_aucs,
        lr.mean_auc(),
        t2.elapsed().as_secs_f64()
    );
}

#[test]
#[ignore]
fn probe_agg() {
    let corpus = generate_corpus(&CohortSpec::default()).unwrap();
    let outcomes: Vec<_> = corpus.patients.iter().map(|p| p.outcome.clone()).collect();
    let config = ExperimentConfig::default();
    let bags2 = corpus_to_bags(&corpus, 2, DEFAULT_INSTANCE_CAP, &DEFAULT_HORIZONS).unwrap();

    let summary = run_experiment(&bags2, &outcomes, &config).unwrap();
    println!("cnn k=2 mean auc {:.4}", summary.mean_auc());
    let specs = [
        AggregatorSpec::new(AggregatorKind::TopFractionMean, 0.10).unwrap(),
        AggregatorSpec::new(AggregatorKind::TopFractionMean, 0.20).unwrap(),
        AggregatorSpec::new(AggregatorKind::TopFractionMean, 0.50).unwrap(),
        AggregatorSpec::new(AggregatorKind::TopFractionMedian, 0.20).unwrap(),
    ];
    let agg_report = sweep_aggregators(&summary, &specs).unwrap();
    let mut means = Vec::new();
    for spec in &specs {
        let aucs: Vec<f64> = agg_report
            .rows
            .iter()
            .filter(|r| r.aggregator == spec.label())
            .map(|r| r.auc)
            .collect();
        let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
        means.push(mean);
        println!("aggregator {}: per-split {aucs:?} mean {mean:.6}", spec.label());
    }
    let spread = means.iter().cloned().fold(f64::MIN, f64::max)
        - means.iter().cloned().fold(f64::MAX, f64::min);
    println!("aggregator spread: {spread:.4}");

    let lr_config = ExperimentConfig { variant: Variant::Lr, ..ExperimentConfig::default() };
    let lr = run_experiment(&bags2, &outcomes, &lr_config).unwrap();
    println!("lr k=2 mean auc {:.4}", lr.mean_auc());
}

#[test]
#[ignore]
fn probe_sweeps() {
    let corpus = generate_corpus(&CohortSpec::default()).unwrap();
    let outcomes: Vec<_> = corpus.patients.iter().map(|p| p.outcome.clone()).collect();
    let config = ExperimentConfig::default();

    let mut bags_by_k = BTreeMap::new();
    for k in 1..=4 {
        bags_by_k
            .insert(k, corpus_to_bags(&corpus, k, DEFAULT_INSTANCE_CAP, &DEFAULT_HORIZONS).unwrap());
    }

    let t = Instant::now();
    let report =
        sweep_instance_length(&bags_by_k, &outcomes, &[Variant::Cnn, Variant::Lr], &config)
            .unwrap();
    for variant in [Variant::Cnn, Variant::Lr] {
        for k in 1..=4 {
            let mean =
                report.mean_auc_where(|r| r.variant == variant && r.beats_per_instance == k);
            println!("{variant} k={k}: mean auc {mean:.4}");
        }
    }
    println!("instance-length sweep: {:.0}s", t.elapsed().as_secs_f64());

    let bags2 = &bags_by_k[&2];
    let t = Instant::now();
    let summary = run_experiment(bags2, &outcomes, &config).unwrap();
    let specs = [
        AggregatorSpec::new(AggregatorKind::TopFractionMean, 0.10).unwrap(),
        AggregatorSpec::new(AggregatorKind::TopFractionMean, 0.20).unwrap(),
        AggregatorSpec::new(AggregatorKind::TopFractionMean, 0.50).unwrap(),
        AggregatorSpec::new(AggregatorKind::TopFractionMedian, 0.20).unwrap(),
    ];
    let agg_report = sweep_aggregators(&summary, &specs).unwrap();
    for spec in &specs {
        let aucs: Vec<f64> = agg_report
            .rows
            .iter()
            .filter(|r| r.aggregator == spec.label())
            .map(|r| r.auc)
            .collect();
        let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
        println!("aggregator {}: per-split {aucs:?} mean {mean:.6}", spec.label());
    }
    println!("aggregator sweep: {:.0}s", t.elapsed().as_secs_f64());

    for variant in [Variant::Cnn, Variant::Set] {
        let cfg = ExperimentConfig { variant, ..ExperimentConfig::default() };
        let t = Instant::now();
        let report = sweep_positive_fraction(bags2, &outcomes, &[0.1, 1.0], &cfg).unwrap();
        for fraction in [0.1, 1.0] {
            let aucs: Vec<f64> = report
                .rows
                .iter()
                .filter(|r| r.positive_fraction == fraction)
                .map(|r| r.auc)
                .collect();
            let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
            println!("{variant} fraction {fraction}: per-split {aucs:?} mean {mean:.4}");
        }
        println!("{variant} positive-fraction sweep: {:.0}s", t.elapsed().as_secs_f64());
    }
}

#[test]
#[ignore]
fn probe_frac() {
    let corpus = generate_corpus(&CohortSpec::default()).unwrap();
    let outcomes: Vec<_> = corpus.patients.iter().map(|p| p.outcome.clone()).collect();
    let bags2 = corpus_to_bags(&corpus, 2, DEFAULT_INSTANCE_CAP, &DEFAULT_HORIZONS).unwrap();

    for variant in [Variant::Cnn, Variant::Set] {
        let cfg = ExperimentConfig { variant, ..ExperimentConfig::default() };
        let t = Instant::now();
        let report = sweep_positive_fraction(&bags2, &outcomes, &[0.1, 1.0], &cfg).unwrap();
        let mut means = Vec::new();
        for fraction in [0.1, 1.0] {
            let aucs: Vec<f64> = report
                .rows
                .iter()
                .filter(|r| r.positive_fraction == fraction)
                .map(|r| r.auc)
                .collect();
            let n = aucs.len() as f64;
            let mean = aucs.iter().sum::<f64>() / n;
            let var = aucs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
            means.push(mean);
            println!("{variant} fraction {fraction}: per-split {aucs:?} mean {mean:.4} var {var:.5}");
        }
        println!("{variant} drop {:.4} in {:.0}s", means[1] - means[0], t.elapsed().as_secs_f64());
    }
}
