//! Conversion of heterogeneous recordings to the canonical form: the 19
//! channels of the 10-20 system in fixed order, common-average reference,
//! uniform sampling rate, BIDS layout.

mod channels;
mod resample;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use channels::{normalize_label, ChannelMap, CANONICAL_CHANNELS};
pub use resample::{rational_ratio, resample_channel, PolyphaseResampler, ResamplerConfig};

use crate::annotations::{self, bids_dir, Event, EventList, RecordingKey};
use crate::edf::{self, EdfHeader, SignalHeader, SignalMatrix};

#[derive(Debug, Error)]
pub enum StandardizeError {
    #[error("missing canonical channels: {}", .0.join(", "))]
    MissingChannels(Vec<String>),
    #[error("channels {first:?} and {second:?} both map to {canonical}")]
    AmbiguousChannel {
        canonical: String,
        first: String,
        second: String,
    },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Edf(#[from] edf::EdfError),
    #[error(transparent)]
    Annotation(#[from] annotations::AnnotationError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StandardizeConfig {
    pub target_fs: f64,
    pub resampler: ResamplerConfig,
    /// Upper bound on concurrent per-recording conversions.
    pub jobs: usize,
    pub task: String,
}

impl Default for StandardizeConfig {
    fn default() -> Self {
        Self {
            target_fs: 256.0,
            resampler: ResamplerConfig::default(),
            jobs: 1,
            task: annotations::DEFAULT_TASK.to_string(),
        }
    }
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    target_fs: Option<f64>,
    #[serde(default)]
    task: Option<String>,
    #[serde(default)]
    jobs: Option<usize>,
    #[serde(default)]
    resampler: Option<ResamplerConfig>,
    #[serde(default)]
    aliases: BTreeMap<String, String>,
}

/// Parses a TOML conversion config:
///
/// ```toml
/// target_fs = 256
/// task = "szMonitoring"
///
/// [resampler]
/// cutoff = 0.9
/// zero_crossings = 64
/// kaiser_beta = 8.0
///
/// [aliases]
/// "EEG T1" = "T3"
/// ```
pub fn parse_config(text: &str) -> Result<(StandardizeConfig, ChannelMap), StandardizeError> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| StandardizeError::Config(e.to_string()))?;
    let mut cfg = StandardizeConfig::default();
    if let Some(fs) = file.target_fs {
        cfg.target_fs = fs;
    }
    if let Some(task) = file.task {
        cfg.task = task;
    }
    if let Some(jobs) = file.jobs {
        cfg.jobs = jobs;
    }
    if let Some(r) = file.resampler {
        cfg.resampler = r;
    }
    let map = ChannelMap::default();
    for target in file.aliases.values() {
        if map.resolve(target).is_none() {
            return Err(StandardizeError::Config(format!("alias target {target:?} is not a canonical channel")));
        }
    }
    let mut map = map;
    map.extend(file.aliases);
    validate_config(&cfg)?;
    Ok((cfg, map))
}

pub fn load_config(path: impl AsRef<Path>) -> Result<(StandardizeConfig, ChannelMap), StandardizeError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| StandardizeError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

fn validate_config(cfg: &StandardizeConfig) -> Result<(), StandardizeError> {
    if !(cfg.target_fs.is_finite() && cfg.target_fs > 0.0) {
        return Err(StandardizeError::Config(format!("target_fs must be positive, got {}", cfg.target_fs)));
    }
    if cfg.target_fs.fract() != 0.0 {
        return Err(StandardizeError::Config(format!(
            "target_fs must be a whole number of samples per second, got {}",
            cfg.target_fs
        )));
    }
    if cfg.jobs == 0 {
        return Err(StandardizeError::Config("jobs must be at least 1".into()));
    }
    Ok(())
}

/// Selects and reorders channels into the canonical order.
pub fn map_channels(signals: &SignalMatrix, map: &ChannelMap) -> Result<SignalMatrix, StandardizeError> {
    let mut chosen: Vec<Option<usize>> = vec![None; map.canonical_order.len()];
    for (i, label) in signals.channels.iter().enumerate() {
        if let Some(c) = map.resolve(label) {
            if let Some(prev) = chosen[c] {
                return Err(StandardizeError::AmbiguousChannel {
                    canonical: map.canonical_order[c].clone(),
                    first: signals.channels[prev].clone(),
                    second: label.clone(),
                });
            }
            chosen[c] = Some(i);
        }
    }
    let missing: Vec<String> = chosen
        .iter()
        .zip(&map.canonical_order)
        .filter(|(c, _)| c.is_none())
        .map(|(_, name)| name.clone())
        .collect();
    if !missing.is_empty() {
        return Err(StandardizeError::MissingChannels(missing));
    }
    let idx: Vec<usize> = chosen.into_iter().flatten().collect();
    Ok(SignalMatrix {
        channels: map.canonical_order.clone(),
        fs: idx.iter().map(|&i| signals.fs[i]).collect(),
        samples: idx.iter().map(|&i| signals.samples[i].clone()).collect(),
        duration_s: signals.duration_s,
    })
}

/// Re-references every channel to the instantaneous mean of all channels.
pub fn common_average(signals: &SignalMatrix) -> Result<SignalMatrix, StandardizeError> {
    let nc = signals.num_channels();
    if nc < 2 {
        return Err(StandardizeError::Contract(format!(
            "common average needs at least 2 channels, got {nc}"
        )));
    }
    let n = signals.len();
    if signals.samples.iter().any(|c| c.len() != n) {
        return Err(StandardizeError::Contract("channels have unequal lengths".into()));
    }
    let mut mean = vec![0.0; n];
    for ch in &signals.samples {
        for (m, x) in mean.iter_mut().zip(ch) {
            *m += x;
        }
    }
    let inv = 1.0 / nc as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    let samples = signals
        .samples
        .iter()
        .map(|ch| ch.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    Ok(SignalMatrix {
        samples,
        ..signals.clone()
    })
}

/// Resamples every channel to `target_fs`.
pub fn resample(signals: &SignalMatrix, target_fs: f64, cfg: &ResamplerConfig) -> Result<SignalMatrix, StandardizeError> {
    if !(target_fs.is_finite() && target_fs > 0.0) {
        return Err(StandardizeError::Contract(format!("target rate must be positive, got {target_fs}")));
    }
    let mut cache: Vec<(f64, PolyphaseResampler)> = Vec::new();
    let mut samples = Vec::with_capacity(signals.num_channels());
    for (ch, &fs) in signals.samples.iter().zip(&signals.fs) {
        if fs == target_fs {
            samples.push(ch.clone());
            continue;
        }
        let pos = match cache.iter().position(|(f, _)| *f == fs) {
            Some(p) => p,
            None => {
                cache.push((fs, PolyphaseResampler::new(fs, target_fs, cfg)?));
                cache.len() - 1
            }
        };
        samples.push(cache[pos].1.process(ch));
    }
    let n = samples.iter().map(Vec::len).min().unwrap_or(0);
    samples.iter_mut().for_each(|c| c.truncate(n));
    Ok(SignalMatrix {
        channels: signals.channels.clone(),
        fs: vec![target_fs; signals.num_channels()],
        samples,
        duration_s: signals.duration_s,
    })
}

/// Microvolt multiplier for a physical dimension label.
fn microvolt_scale(dimension: &str) -> f64 {
    match dimension.trim() {
        "mV" => 1e3,
        "V" => 1e6,
        "nV" => 1e-3,
        _ => 1.0,
    }
}

/// A standardized recording ready to be written.
#[derive(Debug, Clone)]
pub struct StandardizedRecording {
    pub header: EdfHeader,
    pub signals: SignalMatrix,
    pub events: EventList,
}

/// Runs the signal pipeline on one decoded recording: channel selection,
/// unit scaling, resampling, common average.
pub fn standardize_recording(
    header: &EdfHeader,
    signals: &SignalMatrix,
    events: &EventList,
    cfg: &StandardizeConfig,
    map: &ChannelMap,
) -> Result<StandardizedRecording, StandardizeError> {
    validate_config(cfg)?;
    let mut selected = map_channels(signals, map)?;
    for (ch, label) in selected.samples.iter_mut().zip(&map.canonical_order) {
        let scale = signals
            .channels
            .iter()
            .position(|l| map.resolve(l).is_some_and(|c| &map.canonical_order[c] == label))
            .map(|i| microvolt_scale(&header.signals[i].physical_dimension))
            .unwrap_or(1.0);
        if scale != 1.0 {
            ch.iter_mut().for_each(|x| *x *= scale);
        }
    }
    let resampled = resample(&selected, cfg.target_fs, &cfg.resampler)?;
    let referenced = common_average(&resampled)?;

    let spr = cfg.target_fs as usize;
    let num_records = referenced.len() / spr;
    if num_records == 0 {
        return Err(StandardizeError::Contract("recording shorter than one second".into()));
    }
    if referenced.len() % spr != 0 {
        log::warn!(
            "dropping {} trailing samples that do not fill a whole one-second record",
            referenced.len() % spr
        );
    }
    let n = num_records * spr;
    let samples: Vec<Vec<f64>> = referenced.samples.iter().map(|c| c[..n].to_vec()).collect();
    let duration_s = num_records as f64;

    let sig_headers = samples
        .iter()
        .zip(&referenced.channels)
        .map(|(ch, label)| {
            let (lo, hi) = ch
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
            let (lo, hi) = if !(lo.is_finite() && hi.is_finite()) || hi - lo < 1e-3 {
                (lo.min(0.0) - 1.0, hi.max(0.0) + 1.0)
            } else {
                (lo, hi)
            };
            let (lo, hi) = ((lo * 100.0).floor() / 100.0, (hi * 100.0).ceil() / 100.0);
            let lo = edf::header_value(lo).unwrap_or(lo);
            let hi = edf::header_value(hi).unwrap_or(hi);
            let mut s = SignalHeader::new(format!("{label}-Avg"), "uV", lo, hi, spr);
            s.prefiltering = String::new();
            s
        })
        .collect();
    let out_header = EdfHeader {
        version: "0".into(),
        patient_id: "X X X X".into(),
        recording_id: header.recording_id.clone(),
        start_date: header.start_date,
        start_time: header.start_time,
        header_bytes: edf::HEADER_BLOCK * 20,
        num_records: Some(num_records as u64),
        record_duration_s: 1.0,
        reserved: String::new(),
        signals: sig_headers,
    };
    let out_signals = SignalMatrix::uniform(referenced.channels.clone(), cfg.target_fs, samples);

    let mut clipped = Vec::with_capacity(events.len());
    for e in &events.events {
        if e.onset_s >= duration_s {
            continue;
        }
        clipped.push(Event::span(e.onset_s, e.end_s().min(duration_s)));
    }
    Ok(StandardizedRecording {
        header: out_header,
        signals: out_signals,
        events: EventList::new(duration_s, clipped),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvertedRecording {
    pub source: PathBuf,
    pub recording: RecordingKey,
    pub eeg_path: PathBuf,
    pub events_path: PathBuf,
    pub num_events: usize,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConversionFailure {
    pub source: PathBuf,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ConversionReport {
    pub converted: Vec<ConvertedRecording>,
    pub failed: Vec<ConversionFailure>,
}

/// A source EDF together with its assigned BIDS identifiers.
#[derive(Debug, Clone)]
struct SourceRecording {
    path: PathBuf,
    events: Option<PathBuf>,
    key: RecordingKey,
}

fn sanitize_id(s: &str) -> String {
    s.chars().filter(|c| c.is_ascii_alphanumeric()).collect()
}

fn find_events_file(edf_path: &Path) -> Option<PathBuf> {
    let stem = edf_path.file_stem()?.to_str()?;
    let mut candidates = vec![format!("{stem}_events.tsv"), format!("{stem}.tsv")];
    if let Some(base) = stem.strip_suffix("_eeg") {
        candidates.insert(0, format!("{base}_events.tsv"));
    }
    candidates
        .into_iter()
        .map(|c| edf_path.with_file_name(c))
        .find(|p| p.is_file())
}

/// Assigns BIDS identifiers. BIDS-named sources keep theirs; other files
/// take the subject from their parent directory, session `01` and runs
/// numbered in path order.
fn discover_sources(src: &Path) -> Vec<SourceRecording> {
    let bids = Regex::new(r"^sub-([A-Za-z0-9]+)_ses-([A-Za-z0-9]+)_task-[A-Za-z0-9]+_run-([A-Za-z0-9]+)_eeg$").expect("static pattern");
    let mut paths: Vec<PathBuf> = walkdir::WalkDir::new(src)
        .into_iter()
        .flatten()
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .filter(|p| p.extension().and_then(|x| x.to_str()).is_some_and(|x| x.eq_ignore_ascii_case("edf")))
        .collect();
    paths.sort();
    let mut next_run: BTreeMap<String, usize> = BTreeMap::new();
    paths
        .into_iter()
        .map(|path| {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let key = match bids.captures(&stem) {
                Some(c) => RecordingKey {
                    subject: c[1].to_string(),
                    session: c[2].to_string(),
                    run: c[3].to_string(),
                },
                None => {
                    let parent = path
                        .parent()
                        .filter(|p| *p != src)
                        .and_then(|p| p.file_name())
                        .and_then(|n| n.to_str())
                        .map(sanitize_id)
                        .filter(|s| !s.is_empty())
                        .unwrap_or_else(|| "01".to_string());
                    let run = next_run.entry(parent.clone()).or_insert(0);
                    let key = RecordingKey {
                        subject: parent,
                        session: "01".to_string(),
                        run: format!("{:02}", *run),
                    };
                    *run += 1;
                    key
                }
            };
            SourceRecording {
                events: find_events_file(&path),
                path,
                key,
            }
        })
        .collect()
}

fn convert_one(
    source: &SourceRecording,
    dst: &Path,
    cfg: &StandardizeConfig,
    map: &ChannelMap,
) -> Result<ConvertedRecording, StandardizeError> {
    let (header, signals) = edf::read_edf(&source.path)?;
    let events = match &source.events {
        Some(p) => annotations::read_events_tsv(p, signals.duration_s)?,
        None => EventList::empty(signals.duration_s),
    };
    let out = standardize_recording(&header, &signals, &events, cfg, map)?;
    let dir = dst.join(bids_dir(&source.key.subject, &source.key.session));
    fs::create_dir_all(&dir).map_err(|e| StandardizeError::Io {
        path: dir.clone(),
        source: e,
    })?;
    let stem = format!(
        "sub-{}_ses-{}_task-{}_run-{}",
        source.key.subject, source.key.session, cfg.task, source.key.run
    );
    let eeg_path = dir.join(format!("{stem}_eeg.edf"));
    let events_path = dir.join(format!("{stem}_events.tsv"));
    edf::write_edf(&out.header, &out.signals, &eeg_path)?;
    annotations::write_events_tsv(&out.events, &events_path)?;
    Ok(ConvertedRecording {
        source: source.path.clone(),
        recording: source.key.clone(),
        eeg_path,
        events_path,
        num_events: out.events.len(),
        duration_s: out.events.recording_duration_s,
    })
}

/// Converts every EDF under `src` into a BIDS tree under `dst`. Per-file
/// failures are reported and do not stop the conversion.
pub fn standardize_dataset(
    src: impl AsRef<Path>,
    dst: impl AsRef<Path>,
    cfg: &StandardizeConfig,
    map: &ChannelMap,
) -> Result<ConversionReport, StandardizeError> {
    let (src, dst) = (src.as_ref(), dst.as_ref());
    validate_config(cfg)?;
    if !src.is_dir() {
        return Err(StandardizeError::Io {
            path: src.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "source is not a directory"),
        });
    }
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| StandardizeError::Io { path, source }
    };
    fs::create_dir_all(dst).map_err(io(dst))?;
    let desc = serde_json::json!({
        "Name": "Standardized seizure monitoring dataset",
        "BIDSVersion": "1.9.0",
        "DatasetType": "raw",
    });
    let desc_path = dst.join("dataset_description.json");
    fs::write(&desc_path, serde_json::to_string_pretty(&desc).expect("static json") + "\n").map_err(io(&desc_path))?;

    let sources = discover_sources(src);
    let mut seen = std::collections::HashSet::new();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| StandardizeError::Config(e.to_string()))?;
    let duplicates: Vec<bool> = sources.iter().map(|s| !seen.insert(s.key.clone())).collect();
    let results: Vec<Result<ConvertedRecording, StandardizeError>> = pool.install(|| {
        sources
            .par_iter()
            .zip(duplicates.par_iter())
            .map(|(s, &dup)| {
                if dup {
                    Err(StandardizeError::Contract(format!("recording {} is produced by an earlier source file", s.key)))
                } else {
                    convert_one(s, dst, cfg, map)
                }
            })
            .collect()
    });
    let mut report = ConversionReport::default();
    for (s, r) in sources.iter().zip(results) {
        match r {
            Ok(c) => report.converted.push(c),
            Err(e) => {
                log::warn!("{}: conversion failed: {e}", s.path.display());
                report.failed.push(ConversionFailure {
                    source: s.path.clone(),
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(labels: &[&str], n: usize) -> SignalMatrix {
        let samples = labels
            .iter()
            .enumerate()
            .map(|(c, _)| (0..n).map(|t| (c * 1000 + t) as f64).collect())
            .collect();
        SignalMatrix::uniform(labels.iter().map(|s| s.to_string()).collect(), 256.0, samples)
    }

    #[test]
    fn temple_style_labels_reordered() {
        let mut labels: Vec<String> = CANONICAL_CHANNELS
            .iter()
            .rev()
            .map(|c| format!("EEG {}-REF", c.to_uppercase()))
            .collect();
        labels.push("EEG EKG1-REF".into());
        let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
        let m = matrix(&refs, 4);
        let out = map_channels(&m, &ChannelMap::default()).unwrap();
        assert_eq!(out.channels, CANONICAL_CHANNELS.map(String::from).to_vec());
        // Fp1 was the 19th input channel (index 18).
        assert_eq!(out.samples[0][0], 18_000.0);
    }

    #[test]
    fn canonical_input_is_identity() {
        let m = matrix(&CANONICAL_CHANNELS, 8);
        let out = map_channels(&m, &ChannelMap::default()).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn missing_channel_named() {
        let m = matrix(&CANONICAL_CHANNELS[..18], 8);
        match map_channels(&m, &ChannelMap::default()) {
            Err(StandardizeError::MissingChannels(v)) => assert_eq!(v, vec!["T6".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_mapping_rejected() {
        let mut labels: Vec<&str> = CANONICAL_CHANNELS.to_vec();
        labels.push("EEG T8-REF");
        let m = matrix(&labels, 2);
        assert!(matches!(
            map_channels(&m, &ChannelMap::default()),
            Err(StandardizeError::AmbiguousChannel { .. })
        ));
    }

    #[test]
    fn common_average_examples() {
        let m = SignalMatrix::uniform(vec!["a".into(), "b".into()], 1.0, vec![vec![5.0], vec![-5.0]]);
        assert_eq!(common_average(&m).unwrap().samples, vec![vec![5.0], vec![-5.0]]);
        let m = SignalMatrix::uniform(
            (0..19).map(|i| i.to_string()).collect(),
            1.0,
            vec![vec![100.0; 3]; 19],
        );
        assert!(common_average(&m).unwrap().samples.iter().flatten().all(|&x| x == 0.0));
        let m = SignalMatrix::uniform(vec!["a".into()], 1.0, vec![vec![1.0]]);
        assert!(matches!(common_average(&m), Err(StandardizeError::Contract(_))));
    }

    #[test]
    fn identity_rate_is_bit_identical() {
        let m = matrix(&["a", "b"], 100);
        assert_eq!(resample(&m, 256.0, &ResamplerConfig::default()).unwrap(), m);
    }

    #[test]
    fn config_parsing() {
        let (cfg, map) = parse_config("target_fs = 128\n[resampler]\nkaiser_beta = 6.0\n[aliases]\n\"E1\" = \"Fz\"\n").unwrap();
        assert_eq!(cfg.target_fs, 128.0);
        assert_eq!(cfg.resampler.kaiser_beta, 6.0);
        assert_eq!(cfg.resampler.zero_crossings, 64);
        assert_eq!(map.resolve("E1"), Some(8));
        assert!(parse_config("[aliases]\n\"E1\" = \"X9\"\n").is_err());
        assert!(parse_config("target_fs = 0\n").is_err());
        assert!(parse_config("bogus = 1\n").is_err());
    }

    #[test]
    fn unit_scaling() {
        assert_eq!(microvolt_scale("mV"), 1000.0);
        assert_eq!(microvolt_scale("uV"), 1.0);
    }
}
