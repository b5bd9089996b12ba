//! Declarative run configuration: a line-oriented `key = value` file plus
//! `--set` overrides, every key with a documented default. Unknown keys are
//! rejected by name so typos surface instead of silently using defaults.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use milbeat_core::aggregate::AggregatorSpec;
use milbeat_core::model::Variant;
use milbeat_core::synthgen::CohortSpec;
use milbeat_core::training::TrainConfig;

use crate::error::CliError;

/// Which robustness sweep `milbeat sweep` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    /// Retrain per (variant, beats-per-instance) for k in 1..=4.
    InstanceLength,
    /// Re-aggregate one trained model's instance probabilities.
    Aggregator,
    /// Retrain with the positive training patients subsampled.
    PositiveFraction,
}

impl SweepKind {
    pub fn parse(token: &str) -> Option<Self> {
        match token {
            "instance-length" => Some(Self::InstanceLength),
            "aggregator" => Some(Self::Aggregator),
            "positive-fraction" => Some(Self::PositiveFraction),
            _ => None,
        }
    }
}

impl fmt::Display for SweepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Self::InstanceLength => "instance-length",
            Self::Aggregator => "aggregator",
            Self::PositiveFraction => "positive-fraction",
        };
        f.write_str(name)
    }
}

/// Everything a command needs, resolved from defaults, an optional config
/// file, and `--set` overrides, in that order. All randomness anywhere in a
/// run derives from the single `seed` through fixed labeled derivations;
/// no command reads the clock or OS entropy.
///
/// Keys and defaults:
///
/// | key | default | meaning |
/// |-----|---------|---------|
/// | `out_dir` | `out` | directory all outputs are written under |
/// | `manifest` | `<out_dir>/manifest.csv` | cohort manifest CSV |
/// | `model` | `<out_dir>/model.mil1` | model file (written by train, read by score) |
/// | `horizon_days` | `30` | horizon for train/score and the sweeps |
/// | `horizons` | `30,60,90,365` | horizons evaluated by `eval` |
/// | `variant` | `mil-cnn` | classifier variant |
/// | `k` | `2` | beats per instance, 1..=4 |
/// | `instance_cap` | `1000` | max instances kept per patient |
/// | `aggregator` | `top20pct_mean` | instance-score aggregator |
/// | `test_fraction` | `0.25` | per-class fraction held out per split |
/// | `n_splits` | `5` | stratified train/test splits |
/// | `seed` | `0` | master seed |
/// | `learning_rate` | `0.001` | Adam step size |
/// | `beta1` | `0.9` | Adam first-moment decay |
/// | `beta2` | `0.999` | Adam second-moment decay |
/// | `epsilon` | `1e-8` | Adam denominator floor |
/// | `batch_size` | `128` | minibatch size (bags for mil-set) |
/// | `max_epochs` | `30` | epoch budget |
/// | `patience` | `8` | early-stopping patience in epochs |
/// | `sweep` | `instance-length` | which sweep `sweep` runs |
/// | `variants` | `mil-cnn` | variants for the instance-length sweep |
/// | `aggregators` | `top10pct_mean,top20pct_mean,top50pct_mean,top20pct_median` | specs for the aggregator sweep |
/// | `fractions` | `0.1,0.2,...,0.9` | positive fractions for that sweep |
/// | `n_patients` | `200` | synthetic cohort size |
/// | `prevalence` | `0.1` | positive-outcome fraction |
/// | `abnormal_rate_positive` | `0.3` | per-beat abnormality rate, positives |
/// | `abnormal_rate_negative` | `0.02` | per-beat abnormality rate, negatives |
/// | `bpm_min` | `55` | slowest patient heart rate |
/// | `bpm_max` | `95` | fastest patient heart rate |
/// | `duration_s` | `60` | signal length in seconds |
/// | `noise_sigma_mv` | `0.05` | white noise level |
/// | `wander_amplitude_mv` | `0.25` | baseline wander amplitude |
/// | `wander_freq_hz` | `0.3` | baseline wander frequency |
/// | `interval_jitter` | `0.03` | relative beat-interval jitter |
/// | `morph_variation` | `1` | per-patient morphology variation in [0,1] |
/// | `sample_rate_hz` | `128` | corpus rate, and the rate assumed for text signal files |
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    manifest: Option<PathBuf>,
    model: Option<PathBuf>,
    pub horizon_days: u32,
    pub horizons: Vec<u32>,
    pub variant: Variant,
    pub k: usize,
    pub instance_cap: usize,
    pub aggregator: AggregatorSpec,
    pub test_fraction: f64,
    pub n_splits: usize,
    pub seed: u64,
    /// `rng_seed` is not a config key; commands derive it from `seed`.
    pub train: TrainConfig,
    pub sweep: SweepKind,
    pub variants: Vec<Variant>,
    pub aggregators: Vec<AggregatorSpec>,
    pub fractions: Vec<f64>,
    /// `seed` here is overwritten with a derivation of the master seed.
    pub cohort: CohortSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            manifest: None,
            model: None,
            horizon_days: 30,
            horizons: vec![30, 60, 90, 365],
            variant: Variant::Cnn,
            k: 2,
            instance_cap: 1000,
            aggregator: AggregatorSpec::default(),
            test_fraction: 0.25,
            n_splits: 5,
            seed: 0,
            train: TrainConfig::default(),
            sweep: SweepKind::InstanceLength,
            variants: vec![Variant::Cnn],
            aggregators: ["top10pct_mean", "top20pct_mean", "top50pct_mean", "top20pct_median"]
                .iter()
                .map(|s| AggregatorSpec::parse(s).expect("built-in aggregator labels parse"))
                .collect(),
            fractions: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
            cohort: CohortSpec::default(),
        }
    }
}

fn usage(msg: String) -> CliError {
    CliError::Usage(msg)
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| usage(format!("invalid value `{value}` for config key `{key}`")))
}

fn parse_list<T, F>(key: &str, value: &str, mut item: F) -> Result<Vec<T>, CliError>
where
    F: FnMut(&str) -> Result<T, CliError>,
{
    let items: Vec<T> =
        value.split(',').map(|tok| item(tok.trim())).collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err(usage(format!("config key `{key}` needs at least one value")));
    }
    Ok(items)
}

fn parse_variant(key: &str, token: &str) -> Result<Variant, CliError> {
    Variant::from_name(token).ok_or_else(|| {
        usage(format!(
            "invalid value `{token}` for config key `{key}`; expected one of \
             mil-cnn, mil-lr, mil-fc2, mil-fc3, mil-set"
        ))
    })
}

fn parse_aggregator(key: &str, token: &str) -> Result<AggregatorSpec, CliError> {
    AggregatorSpec::parse(token).ok_or_else(|| {
        usage(format!(
            "invalid value `{token}` for config key `{key}`; expected \
             top<percent>pct_<mean|median>, e.g. top20pct_mean"
        ))
    })
}

impl RunConfig {
    /// The manifest path, defaulting to `manifest.csv` under `out_dir`.
    pub fn manifest_path(&self) -> PathBuf {
        self.manifest.clone().unwrap_or_else(|| self.out_dir.join("manifest.csv"))
    }

    /// The model file path, defaulting to `model.mil1` under `out_dir`.
    pub fn model_path(&self) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.out_dir.join("model.mil1"))
    }

    /// Sets one key. Unknown keys and unparseable values are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "out_dir" => self.out_dir = PathBuf::from(value),
            "manifest" => self.manifest = Some(PathBuf::from(value)),
            "model" => self.model = Some(PathBuf::from(value)),
            "horizon_days" => self.horizon_days = parse_value(key, value)?,
            "horizons" => {
                self.horizons = parse_list(key, value, |tok| parse_value(key, tok))?;
            }
            "variant" => self.variant = parse_variant(key, value)?,
            "k" => self.k = parse_value(key, value)?,
            "instance_cap" => self.instance_cap = parse_value(key, value)?,
            "aggregator" => self.aggregator = parse_aggregator(key, value)?,
            "test_fraction" => self.test_fraction = parse_value(key, value)?,
            "n_splits" => self.n_splits = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "learning_rate" => self.train.learning_rate = parse_value(key, value)?,
            "beta1" => self.train.beta1 = parse_value(key, value)?,
            "beta2" => self.train.beta2 = parse_value(key, value)?,
            "epsilon" => self.train.epsilon = parse_value(key, value)?,
            "batch_size" => self.train.batch_size = parse_value(key, value)?,
            "max_epochs" => self.train.max_epochs = parse_value(key, value)?,
            "patience" => self.train.early_stop_patience = parse_value(key, value)?,
            "sweep" => {
                self.sweep = SweepKind::parse(value).ok_or_else(|| {
                    usage(format!(
                        "invalid value `{value}` for config key `sweep`; expected \
                         instance-length, aggregator, or positive-fraction"
                    ))
                })?;
            }
            "variants" => {
                self.variants = parse_list(key, value, |tok| parse_variant(key, tok))?;
            }
            "aggregators" => {
                self.aggregators = parse_list(key, value, |tok| parse_aggregator(key, tok))?;
            }
            "fractions" => {
                self.fractions = parse_list(key, value, |tok| parse_value(key, tok))?;
            }
            "n_patients" => self.cohort.n_patients = parse_value(key, value)?,
            "prevalence" => self.cohort.prevalence = parse_value(key, value)?,
            "abnormal_rate_positive" => {
                self.cohort.abnormal_rate_positive = parse_value(key, value)?;
            }
            "abnormal_rate_negative" => {
                self.cohort.abnormal_rate_negative = parse_value(key, value)?;
            }
            "bpm_min" => self.cohort.bpm_min = parse_value(key, value)?,
            "bpm_max" => self.cohort.bpm_max = parse_value(key, value)?,
            "duration_s" => self.cohort.duration_s = parse_value(key, value)?,
            "noise_sigma_mv" => self.cohort.noise_sigma_mv = parse_value(key, value)?,
            "wander_amplitude_mv" => {
                self.cohort.wander_amplitude_mv = parse_value(key, value)?;
            }
            "wander_freq_hz" => self.cohort.wander_freq_hz = parse_value(key, value)?,
            "interval_jitter" => self.cohort.interval_jitter = parse_value(key, value)?,
            "morph_variation" => self.cohort.morph_variation = parse_value(key, value)?,
            "sample_rate_hz" => {
                let rate: u32 = parse_value(key, value)?;
                if rate == 0 {
                    return Err(usage("config key `sample_rate_hz` must be positive".into()));
                }
                self.cohort.sample_rate_hz = rate;
            }
            _ => return Err(usage(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a config file: one `key = value` per line, blank lines and
    /// lines starting with `#` ignored.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            usage(format!("cannot read config file `{}`: {e}", path.display()))
        })?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                usage(format!(
                    "{}:{}: expected `key = value`, got `{line}`",
                    path.display(),
                    i + 1
                ))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| match e {
                    CliError::Usage(msg) => {
                        usage(format!("{}:{}: {msg}", path.display(), i + 1))
                    }
                    other => other,
                })?;
        }
        Ok(())
    }

    /// Applies `--set key=value` overrides in order.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), CliError> {
        for item in overrides {
            let (key, value) = item.split_once('=').ok_or_else(|| {
                usage(format!("--set expects key=value, got `{item}`"))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Builds the full configuration for a run.
    pub fn load(config_file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        if let Some(path) = config_file {
            cfg.apply_file(path)?;
        }
        cfg.apply_overrides(overrides)?;
        Ok(cfg)
    }

    /// Horizons every bag gets labeled at: the eval list plus the single
    /// train/score horizon, deduplicated, ascending.
    pub fn label_horizons(&self) -> Vec<u32> {
        let mut all = self.horizons.clone();
        all.push(self.horizon_days);
        all.sort_unstable();
        all.dedup();
        all
    }
}
