//! On-disk formats: the binary signal and model files and the CSV tables.
//! Every writer assembles the full byte buffer before writing, so rerunning
//! a command overwrites outputs with bitwise-identical files. Floats print
//! through `Display`, the shortest representation that parses back exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use milbeat_core::aggregate::RiskScore;
use milbeat_core::eval::ReportRow;
use milbeat_core::instances::{Outcome, OutcomeRecord};
use milbeat_core::model::{init_params, ArchitectureDescriptor, ModelParams, Variant};
use milbeat_core::signal::{BeatAnnotations, SignalRecord};
use milbeat_core::synthgen::SyntheticCorpus;
use milbeat_core::training::EpochStats;

use crate::error::CliError;

pub const SIGNAL_MAGIC: &[u8; 4] = b"ECG1";
pub const MODEL_MAGIC: &[u8; 4] = b"MIL1";

pub const MANIFEST_HEADER: &str = "patient_id,signal_path,event,event_day,censor_day";
pub const SCORES_HEADER: &str = "patient_id,horizon,score,high_risk";
pub const HISTORY_HEADER: &str = "epoch,train_loss,val_auc";
pub const TRUTH_HEADER: &str = "patient_id,peak_index,is_abnormal";
pub const ANNOTATIONS_HEADER: &str = "patient_id,peak_index,peak_amplitude,is_ectopic";
pub const REPORT_HEADER: &str = "split_index,horizon_days,variant,beats_per_instance,\
aggregator,positive_fraction,auc,odds_ratio,corrected,a,b,c,d,n_test,n_flagged";

fn data(msg: String) -> CliError {
    CliError::Data(msg)
}

fn io_err(action: &str, path: &Path, e: std::io::Error) -> CliError {
    data(format!("cannot {action} `{}`: {e}", path.display()))
}

/// Writes `bytes`, creating parent directories as needed.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| io_err("create directory", parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| io_err("write", path, e))
}

/// Little-endian reader over a byte buffer with truncation checks.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self { bytes, pos: 0, path }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(
            || data(format!("`{}` is truncated", self.path.display())),
        )?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, CliError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, CliError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CliError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<(), CliError> {
        if self.pos != self.bytes.len() {
            return Err(data(format!(
                "`{}` has {} trailing bytes",
                self.path.display(),
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Writes a signal in the binary format: magic `ECG1`, u32 sample rate,
/// u64 sample count, then f32 samples, all little-endian.
pub fn write_signal(path: &Path, record: &SignalRecord) -> Result<(), CliError> {
    let mut bytes = Vec::with_capacity(16 + 4 * record.samples.len());
    bytes.extend_from_slice(SIGNAL_MAGIC);
    bytes.extend_from_slice(&record.sample_rate_hz.to_le_bytes());
    bytes.extend_from_slice(&(record.samples.len() as u64).to_le_bytes());
    for &s in &record.samples {
        bytes.extend_from_slice(&(s as f32).to_le_bytes());
    }
    write_bytes(path, &bytes)
}

/// Reads a signal file. Files starting with the `ECG1` magic parse as the
/// binary format; anything else parses as text, one decimal sample per
/// line, with `text_rate_hz` as the sample rate.
pub fn read_signal(
    path: &Path,
    patient_id: &str,
    text_rate_hz: u32,
) -> Result<SignalRecord, CliError> {
    let bytes = fs::read(path).map_err(|e| io_err("read signal", path, e))?;
    if bytes.starts_with(SIGNAL_MAGIC) {
        let mut cur = Cursor::new(&bytes, path);
        cur.take(4)?;
        let sample_rate_hz = cur.u32()?;
        let count = cur.u64()?;
        let count = usize::try_from(count)
            .map_err(|_| data(format!("`{}` sample count overflows", path.display())))?;
        let mut samples = Vec::with_capacity(count);
        for _ in 0..count {
            samples.push(f64::from(cur.f32()?));
        }
        cur.finish()?;
        return Ok(SignalRecord { patient_id: patient_id.to_string(), sample_rate_hz, samples });
    }

    let text = String::from_utf8(bytes).map_err(|_| {
        data(format!(
            "`{}` is neither an ECG1 file nor UTF-8 text samples",
            path.display()
        ))
    })?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let value: f64 = line.parse().map_err(|_| {
            data(format!("{}:{}: expected one decimal sample, got `{line}`", path.display(), i + 1))
        })?;
        samples.push(value);
    }
    Ok(SignalRecord {
        patient_id: patient_id.to_string(),
        sample_rate_hz: text_rate_hz,
        samples,
    })
}

/// A model file's contents.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedModel {
    pub params: ModelParams,
    pub beats_per_instance: usize,
}

/// Writes a model: magic `MIL1`, variant tag u8, beats-per-instance u8,
/// input length u32, layer count u8, then per layer its shape dims (u32
/// each) followed by the f64 weight and bias payloads in row-major order,
/// all little-endian. Parameterless layers contribute no bytes.
pub fn write_model(
    path: &Path,
    params: &ModelParams,
    beats_per_instance: usize,
) -> Result<(), CliError> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MODEL_MAGIC);
    bytes.push(params.descriptor.variant.tag());
    bytes.push(beats_per_instance as u8);
    bytes.extend_from_slice(&(params.descriptor.input_length as u32).to_le_bytes());
    bytes.push(params.layers.len() as u8);
    for layer in &params.layers {
        for &dim in &layer.shape {
            bytes.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for &w in &layer.weights {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        for &b in &layer.biases {
            bytes.extend_from_slice(&b.to_le_bytes());
        }
    }
    write_bytes(path, &bytes)
}

/// Reads a model file. The layer stack is rebuilt from the variant and
/// input length, so per-layer shapes are known before their dims are read;
/// any disagreement is a data error.
pub fn read_model(path: &Path) -> Result<LoadedModel, CliError> {
    let bytes = fs::read(path).map_err(|e| io_err("read model", path, e))?;
    let mut cur = Cursor::new(&bytes, path);
    if cur.take(4)? != MODEL_MAGIC {
        return Err(data(format!("`{}` is not a model file", path.display())));
    }
    let tag = cur.u8()?;
    let variant = Variant::from_tag(tag)
        .ok_or_else(|| data(format!("`{}`: unknown variant tag {tag}", path.display())))?;
    let beats_per_instance = usize::from(cur.u8()?);
    if !(1..=4).contains(&beats_per_instance) {
        return Err(data(format!(
            "`{}`: beats per instance must be 1..=4, got {beats_per_instance}",
            path.display()
        )));
    }
    let input_length = cur.u32()? as usize;
    let descriptor = ArchitectureDescriptor::new(variant, input_length)
        .map_err(|e| data(format!("`{}`: {e}", path.display())))?;
    // A zero-seed template supplies the expected shape and payload sizes.
    let mut template = init_params(&descriptor, 0);
    let layer_count = usize::from(cur.u8()?);
    if layer_count != template.layers.len() {
        return Err(data(format!(
            "`{}`: expected {} layers for {variant}, got {layer_count}",
            path.display(),
            template.layers.len()
        )));
    }
    for layer in &mut template.layers {
        for &expected in &layer.shape.clone() {
            let dim = cur.u32()? as usize;
            if dim != expected {
                return Err(data(format!(
                    "`{}`: layer shape dim {dim} does not match the architecture's {expected}",
                    path.display()
                )));
            }
        }
        for w in layer.weights.iter_mut() {
            *w = cur.f64()?;
        }
        for b in layer.biases.iter_mut() {
            *b = cur.f64()?;
        }
    }
    cur.finish()?;
    template.rng_seed = 0;
    Ok(LoadedModel { params: template, beats_per_instance })
}

/// One manifest row, `signal_path` resolved against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub patient_id: String,
    pub signal_path: PathBuf,
    pub outcome: OutcomeRecord,
}

/// Reads a cohort manifest CSV.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err("read manifest", path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l.trim()).unwrap_or_default();
    if header != MANIFEST_HEADER {
        return Err(data(format!(
            "`{}` must start with the header `{MANIFEST_HEADER}`",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| {
            data(format!("{}:{}: {what}, got `{line}`", path.display(), i + 1))
        };
        let fields: Vec<&str> = line.split(',').collect();
        let [patient_id, signal_path, event, event_day, censor_day]: [&str; 5] = fields
            .try_into()
            .map_err(|_| bad("expected 5 comma-separated fields"))?;
        if patient_id.is_empty() {
            return Err(bad("patient_id must not be empty"));
        }
        let day_field = |field: &str, name: &str| -> Result<u32, CliError> {
            field.trim().parse().map_err(|_| bad(&format!("{name} must be a whole number of days")))
        };
        let outcome = match event.trim() {
            "1" => Outcome::Event { day: day_field(event_day, "event_day")? },
            "0" => Outcome::Censored { day: day_field(censor_day, "censor_day")? },
            _ => return Err(bad("event must be 0 or 1")),
        };
        rows.push(ManifestRow {
            patient_id: patient_id.trim().to_string(),
            signal_path: base.join(signal_path.trim()),
            outcome: OutcomeRecord {
                patient_id: patient_id.trim().to_string(),
                outcome,
            },
        });
    }
    if rows.is_empty() {
        return Err(data(format!("`{}` lists no patients", path.display())));
    }
    Ok(rows)
}

/// Writes a manifest from (patient id, path as written, outcome) triples.
pub fn write_manifest(
    path: &Path,
    rows: &[(String, String, Outcome)],
) -> Result<(), CliError> {
    let mut text = String::from(MANIFEST_HEADER);
    text.push('\n');
    for (patient_id, signal_path, outcome) in rows {
        let (event, event_day, censor_day) = match outcome {
            Outcome::Event { day } => (1, day.to_string(), String::new()),
            Outcome::Censored { day } => (0, String::new(), day.to_string()),
        };
        let _ = writeln!(text, "{patient_id},{signal_path},{event},{event_day},{censor_day}");
    }
    write_bytes(path, text.as_bytes())
}

/// Writes the ground-truth sidecar of a synthetic corpus: one row per
/// placed beat.
pub fn write_truth(path: &Path, corpus: &SyntheticCorpus) -> Result<(), CliError> {
    let mut text = String::from(TRUTH_HEADER);
    text.push('\n');
    for p in &corpus.patients {
        for (&peak, &abnormal) in p.true_peaks.iter().zip(&p.abnormal_beats) {
            let _ = writeln!(
                text,
                "{},{peak},{}",
                p.record.patient_id,
                u8::from(abnormal)
            );
        }
    }
    write_bytes(path, text.as_bytes())
}

/// Writes detected-beat annotations for a whole cohort: one row per beat.
pub fn write_annotations(
    path: &Path,
    cohort: &[(String, BeatAnnotations)],
) -> Result<(), CliError> {
    let mut text = String::from(ANNOTATIONS_HEADER);
    text.push('\n');
    for (patient_id, ann) in cohort {
        for ((&peak, &amp), &ectopic) in
            ann.peak_indices.iter().zip(&ann.peak_amplitudes).zip(&ann.ectopic_flags)
        {
            let _ = writeln!(text, "{patient_id},{peak},{amp},{}", u8::from(ectopic));
        }
    }
    write_bytes(path, text.as_bytes())
}

/// Writes a training history CSV; `val_auc` is empty on epochs without a
/// validation pass.
pub fn write_history(path: &Path, history: &[EpochStats]) -> Result<(), CliError> {
    let mut text = String::from(HISTORY_HEADER);
    text.push('\n');
    for e in history {
        let val = e.val_auc.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(text, "{},{},{val}", e.epoch, e.train_loss);
    }
    write_bytes(path, text.as_bytes())
}

/// Writes risk scores with high-risk flags as 0/1.
pub fn write_scores(path: &Path, scores: &[RiskScore]) -> Result<(), CliError> {
    let mut text = String::from(SCORES_HEADER);
    text.push('\n');
    for s in scores {
        let _ = writeln!(
            text,
            "{},{},{},{}",
            s.patient_id,
            s.horizon_days,
            s.score,
            u8::from(s.high_risk)
        );
    }
    write_bytes(path, text.as_bytes())
}

/// Writes an evaluation report; `odds_ratio` is empty when a risk group
/// was empty.
pub fn write_report(path: &Path, rows: &[ReportRow]) -> Result<(), CliError> {
    let mut text = String::from(REPORT_HEADER);
    text.push('\n');
    for r in rows {
        let odds = r.odds_ratio.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{},{odds},{},{},{},{},{},{},{}",
            r.split_index,
            r.horizon_days,
            r.variant.name(),
            r.beats_per_instance,
            r.aggregator,
            r.positive_fraction,
            r.auc,
            u8::from(r.corrected),
            r.a,
            r.b,
            r.c,
            r.d,
            r.n_test,
            r.n_flagged
        );
    }
    write_bytes(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use milbeat_core::model::Variant;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn signal_roundtrips_through_the_binary_format() {
        let dir = tmp();
        let path = dir.path().join("sig.ecg1");
        let record = SignalRecord {
            patient_id: "p1".to_string(),
            sample_rate_hz: 128,
            samples: vec![0.0, 1.5, -0.25, 3.0],
        };
        write_signal(&path, &record).unwrap();
        let back = read_signal(&path, "p1", 1).unwrap();
        assert_eq!(back, record, "f32-exact samples survive the roundtrip");

        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 1);
        fs::write(&path, &bytes).unwrap();
        let err = read_signal(&path, "p1", 1).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn text_signals_parse_one_sample_per_line() {
        let dir = tmp();
        let path = dir.path().join("sig.txt");
        fs::write(&path, "0.5\n-1.25\n\n2\n").unwrap();
        let record = read_signal(&path, "p2", 250).unwrap();
        assert_eq!(record.sample_rate_hz, 250);
        assert_eq!(record.samples, vec![0.5, -1.25, 2.0]);

        fs::write(&path, "0.5\nnot-a-number\n").unwrap();
        let err = read_signal(&path, "p2", 250).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn model_roundtrips_and_validates_architecture() {
        let dir = tmp();
        let path = dir.path().join("m.mil1");
        let descriptor = ArchitectureDescriptor::new(Variant::Cnn, 256).unwrap();
        let params = init_params(&descriptor, 7);
        write_model(&path, &params, 2).unwrap();
        let loaded = read_model(&path).unwrap();
        assert_eq!(loaded.beats_per_instance, 2);
        assert_eq!(loaded.params.descriptor, params.descriptor);
        assert_eq!(loaded.params.layers, params.layers);
        assert_eq!(loaded.params.rng_seed, 0, "seed is unknown after loading");

        let mut bytes = fs::read(&path).unwrap();
        bytes[4] = 99;
        fs::write(&path, &bytes).unwrap();
        let err = read_model(&path).unwrap_err();
        assert!(err.to_string().contains("unknown variant tag 99"), "{err}");
    }

    #[test]
    fn model_files_reject_trailing_bytes() {
        let dir = tmp();
        let path = dir.path().join("m.mil1");
        let descriptor = ArchitectureDescriptor::new(Variant::Lr, 128).unwrap();
        write_model(&path, &init_params(&descriptor, 1), 1).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.push(0);
        fs::write(&path, &bytes).unwrap();
        let err = read_model(&path).unwrap_err();
        assert!(err.to_string().contains("trailing"), "{err}");
    }

    #[test]
    fn manifest_roundtrips_and_resolves_relative_paths() {
        let dir = tmp();
        let path = dir.path().join("nested").join("manifest.csv");
        let rows = vec![
            ("a".to_string(), "signals/a.ecg1".to_string(), Outcome::Event { day: 12 }),
            ("b".to_string(), "signals/b.ecg1".to_string(), Outcome::Censored { day: 400 }),
        ];
        write_manifest(&path, &rows).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].signal_path, dir.path().join("nested/signals/a.ecg1"));
        assert_eq!(back[0].outcome.outcome, Outcome::Event { day: 12 });
        assert_eq!(back[1].outcome.outcome, Outcome::Censored { day: 400 });

        fs::write(&path, "wrong,header\n").unwrap();
        assert!(read_manifest(&path).is_err());
        fs::write(&path, format!("{MANIFEST_HEADER}\na,s.ecg1,2,,\n")).unwrap();
        let err = read_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("event must be 0 or 1"), "{err}");
    }
}
