//! Seizure annotation files (one TSV per recording) and the BIDS-style
//! dataset layout that pairs recordings with their annotations.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edf;

/// Header line of every annotation file.
pub const TSV_HEADER: &str = "onset\tduration\teventType\tconfidence\tchannels\tdateTime\trecordingDuration";

/// Task label used in BIDS file names unless configured otherwise.
pub const DEFAULT_TASK: &str = "szMonitoring";

/// One seizure interval, half-open `[onset, onset + duration)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub onset_s: f64,
    pub duration_s: f64,
}

impl Event {
    pub fn new(onset_s: f64, duration_s: f64) -> Self {
        Self { onset_s, duration_s }
    }

    /// Builds an event from its start and end times.
    pub fn span(start: f64, end: f64) -> Self {
        Self {
            onset_s: start,
            duration_s: end - start,
        }
    }

    pub fn end_s(&self) -> f64 {
        self.onset_s + self.duration_s
    }

    /// Length of the intersection with `[start, end)`, zero if disjoint.
    pub fn overlap_with(&self, start: f64, end: f64) -> f64 {
        (self.end_s().min(end) - self.onset_s.max(start)).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventList {
    pub recording_duration_s: f64,
    pub events: Vec<Event>,
    pub regularized: bool,
}

impl EventList {
    pub fn new(recording_duration_s: f64, mut events: Vec<Event>) -> Self {
        events.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
        Self {
            recording_duration_s,
            events,
            regularized: false,
        }
    }

    pub fn empty(recording_duration_s: f64) -> Self {
        Self::new(recording_duration_s, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("{path}: i/o error: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: missing header row (expected onset and duration columns)")]
    MissingHeader { path: PathBuf },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate recording sub-{subject} ses-{session} run-{run}")]
    DuplicateRecording {
        subject: String,
        session: String,
        run: String,
    },
}

impl AnnotationError {
    /// Line number for row-level parse errors.
    pub fn line(&self) -> Option<usize> {
        match self {
            AnnotationError::Parse { line, .. } => Some(*line),
            _ => None,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AnnotationError + '_ {
    move |source| AnnotationError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_events_tsv(path: impl AsRef<Path>, recording_duration_s: f64) -> Result<EventList, AnnotationError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_events_tsv(&text, recording_duration_s, path)
}

/// Parses annotation text. `origin` is only used in error messages.
pub fn parse_events_tsv(text: &str, recording_duration_s: f64, origin: &Path) -> Result<EventList, AnnotationError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((_, l)) => break l,
            None => {
                return Err(AnnotationError::MissingHeader {
                    path: origin.to_path_buf(),
                })
            }
        }
    };
    let columns: Vec<&str> = header.split('\t').map(str::trim).collect();
    let find = |name: &str| columns.iter().position(|c| *c == name);
    let (onset_col, duration_col) = match (find("onset"), find("duration")) {
        (Some(o), Some(d)) => (o, d),
        _ => {
            return Err(AnnotationError::MissingHeader {
                path: origin.to_path_buf(),
            })
        }
    };
    let type_col = find("eventType");
    let rec_dur_col = find("recordingDuration");

    let parse_err = |line: usize, message: String| AnnotationError::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };

    let mut events = Vec::new();
    let mut clipped = 0usize;
    let mut duration_conflict = None;
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let field = |col: usize, name: &str| {
            fields
                .get(col)
                .map(|f| f.trim())
                .ok_or_else(|| parse_err(line_no, format!("missing {name} column")))
        };
        if let Some(tc) = type_col {
            let kind = field(tc, "eventType")?;
            if !kind.starts_with("sz") {
                continue;
            }
        }
        let number = |col: usize, name: &str| -> Result<f64, AnnotationError> {
            let raw = field(col, name)?;
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(parse_err(line_no, format!("{name} {raw:?} is not a finite number"))),
            }
        };
        let onset = number(onset_col, "onset")?;
        let duration = number(duration_col, "duration")?;
        if onset < 0.0 {
            return Err(parse_err(line_no, format!("negative onset {onset}")));
        }
        if duration <= 0.0 {
            return Err(parse_err(line_no, format!("non-positive duration {duration}")));
        }
        if let Some(rc) = rec_dur_col {
            if let Some(Ok(d)) = fields.get(rc).map(|f| f.trim().parse::<f64>()) {
                if (d - recording_duration_s).abs() > 1e-3 {
                    duration_conflict = Some(d);
                }
            }
        }
        let end = onset + duration;
        if end > recording_duration_s {
            clipped += 1;
            if onset >= recording_duration_s {
                continue;
            }
            events.push(Event::span(onset, recording_duration_s));
        } else {
            events.push(Event::new(onset, duration));
        }
    }
    if clipped > 0 {
        log::warn!(
            "{}: {clipped} event(s) extended past the recording end ({recording_duration_s} s) and were clipped",
            origin.display()
        );
    }
    if let Some(d) = duration_conflict {
        log::warn!(
            "{}: recordingDuration column says {d} s but the recording lasts {recording_duration_s} s; using the latter",
            origin.display()
        );
    }
    Ok(EventList::new(recording_duration_s, events))
}

/// Decimal rendering that always carries a fractional part and parses
/// back to the same value.
pub fn format_seconds(v: f64) -> String {
    let s = format!("{v}");
    if s.contains('.') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

pub fn render_events_tsv(list: &EventList) -> String {
    let mut out = String::with_capacity(TSV_HEADER.len() + 1 + 40 * list.len());
    out.push_str(TSV_HEADER);
    out.push('\n');
    let rec = format_seconds(list.recording_duration_s);
    for e in &list.events {
        out.push_str(&format!(
            "{}\t{}\tsz\tn/a\tn/a\tn/a\t{}\n",
            format_seconds(e.onset_s),
            format_seconds(e.duration_s),
            rec
        ));
    }
    out
}

pub fn write_events_tsv(list: &EventList, path: impl AsRef<Path>) -> Result<(), AnnotationError> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(render_events_tsv(list).as_bytes()).map_err(io_err(path))
}

/// One recording of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingRef {
    pub subject_id: String,
    pub session_id: String,
    pub task: String,
    pub run_id: String,
    pub eeg_path: PathBuf,
    pub events_path: Option<PathBuf>,
    pub duration_s: f64,
}

impl RecordingRef {
    /// BIDS stem shared by the EEG and events files, e.g.
    /// `sub-01_ses-01_task-szMonitoring_run-00`.
    pub fn stem(&self) -> String {
        format!(
            "sub-{}_ses-{}_task-{}_run-{}",
            self.subject_id, self.session_id, self.task, self.run_id
        )
    }

    /// Path of this recording's directory relative to a dataset root.
    pub fn relative_dir(&self) -> PathBuf {
        bids_dir(&self.subject_id, &self.session_id)
    }

    /// Where the annotation for this recording lives under `root`.
    pub fn events_path_under(&self, root: &Path) -> PathBuf {
        root.join(self.relative_dir()).join(format!("{}_events.tsv", self.stem()))
    }

    pub fn key(&self) -> RecordingKey {
        RecordingKey {
            subject: self.subject_id.clone(),
            session: self.session_id.clone(),
            run: self.run_id.clone(),
        }
    }
}

pub fn bids_dir(subject: &str, session: &str) -> PathBuf {
    PathBuf::from(format!("sub-{subject}"))
        .join(format!("ses-{session}"))
        .join("eeg")
}

/// (subject, session, run) triple identifying one recording.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordingKey {
    pub subject: String,
    pub session: String,
    pub run: String,
}

impl std::fmt::Display for RecordingKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "sub-{}_ses-{}_run-{}", self.subject, self.session, self.run)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexFileError {
    pub path: PathBuf,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetIndex {
    pub root: PathBuf,
    /// Sorted by (subject, session, run).
    pub recordings: Vec<RecordingRef>,
    /// Files that matched the layout but whose EDF header was unreadable.
    pub errors: Vec<IndexFileError>,
}

impl DatasetIndex {
    pub fn by_subject(&self) -> BTreeMap<&str, Vec<&RecordingRef>> {
        let mut out: BTreeMap<&str, Vec<&RecordingRef>> = BTreeMap::new();
        for r in &self.recordings {
            out.entry(r.subject_id.as_str()).or_default().push(r);
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.recordings.is_empty()
    }
}

fn bids_pattern(task: &str) -> Regex {
    Regex::new(&format!(
        r"^sub-([A-Za-z0-9]+)_ses-([A-Za-z0-9]+)_task-{}_run-([A-Za-z0-9]+)_eeg\.edf$",
        regex::escape(task)
    ))
    .expect("static pattern")
}

fn sorted_dirs(dir: &Path, prefix: &str) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .into_iter()
        .flatten()
        .flatten()
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with(prefix))
        })
        .collect();
    out.sort();
    out
}

pub fn index_dataset(root: impl AsRef<Path>) -> Result<DatasetIndex, AnnotationError> {
    index_dataset_with_task(root, DEFAULT_TASK)
}

/// Indexes `sub-*/ses-*/eeg/sub-*_ses-*_task-<task>_run-*_eeg.edf`.
pub fn index_dataset_with_task(root: impl AsRef<Path>, task: &str) -> Result<DatasetIndex, AnnotationError> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(io_err(root)(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            "dataset root is not a directory",
        )));
    }
    let pattern = bids_pattern(task);
    let mut recordings = Vec::new();
    let mut errors = Vec::new();
    for sub in sorted_dirs(root, "sub-") {
        for ses in sorted_dirs(&sub, "ses-") {
            let eeg = ses.join("eeg");
            let Ok(entries) = fs::read_dir(&eeg) else { continue };
            let mut files: Vec<PathBuf> = entries.flatten().map(|e| e.path()).collect();
            files.sort();
            for path in files {
                let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
                let Some(caps) = pattern.captures(name) else { continue };
                let events = path.with_file_name(name.replace("_eeg.edf", "_events.tsv"));
                let duration_s = match edf::read_edf_header(&path).and_then(|h| edf::recording_duration(&h)) {
                    Ok(d) if d > 0.0 => d,
                    Ok(d) => {
                        errors.push(IndexFileError {
                            path: path.clone(),
                            message: format!("recording has non-positive duration {d}"),
                        });
                        continue;
                    }
                    Err(e) => {
                        errors.push(IndexFileError {
                            path: path.clone(),
                            message: e.to_string(),
                        });
                        continue;
                    }
                };
                recordings.push(RecordingRef {
                    subject_id: caps[1].to_string(),
                    session_id: caps[2].to_string(),
                    task: task.to_string(),
                    run_id: caps[3].to_string(),
                    events_path: events.is_file().then_some(events),
                    eeg_path: path,
                    duration_s,
                });
            }
        }
    }
    recordings.sort_by_key(RecordingRef::key);
    let mut seen = HashSet::new();
    for r in &recordings {
        if !seen.insert(r.key()) {
            return Err(AnnotationError::DuplicateRecording {
                subject: r.subject_id.clone(),
                session: r.session_id.clone(),
                run: r.run_id.clone(),
            });
        }
    }
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        recordings,
        errors,
    })
}

/// Reference annotations of a recording; a missing file means no seizures.
pub fn load_reference(rec: &RecordingRef) -> Result<EventList, AnnotationError> {
    match &rec.events_path {
        Some(p) => read_events_tsv(p, rec.duration_s),
        None => Ok(EventList::empty(rec.duration_s)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum HypothesisStatus {
    Found,
    Missing,
    Unparsable { message: String, line: Option<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationEntry {
    pub recording: RecordingKey,
    pub path: PathBuf,
    #[serde(flatten)]
    pub status: HypothesisStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub entries: Vec<ValidationEntry>,
}

impl ValidationReport {
    /// Entries other than `Found`.
    pub fn findings(&self) -> impl Iterator<Item = &ValidationEntry> {
        self.entries
            .iter()
            .filter(|e| !matches!(e.status, HypothesisStatus::Found))
    }

    pub fn is_clean(&self) -> bool {
        self.findings().next().is_none()
    }
}

/// Loads a hypothesis annotation. Missing and unparsable files both count
/// as "no seizures predicted".
pub fn load_hypothesis(hyp_root: &Path, rec: &RecordingRef) -> (EventList, HypothesisStatus) {
    let path = rec.events_path_under(hyp_root);
    if !path.is_file() {
        return (EventList::empty(rec.duration_s), HypothesisStatus::Missing);
    }
    match read_events_tsv(&path, rec.duration_s) {
        Ok(list) => (list, HypothesisStatus::Found),
        Err(e) => (
            EventList::empty(rec.duration_s),
            HypothesisStatus::Unparsable {
                line: e.line(),
                message: e.to_string(),
            },
        ),
    }
}

pub fn validate_hypothesis_tree(hyp_root: impl AsRef<Path>, reference: &DatasetIndex) -> ValidationReport {
    let hyp_root = hyp_root.as_ref();
    let entries = reference
        .recordings
        .iter()
        .map(|rec| {
            let (_, status) = load_hypothesis(hyp_root, rec);
            ValidationEntry {
                recording: rec.key(),
                path: rec.events_path_under(hyp_root),
                status,
            }
        })
        .collect();
    ValidationReport { entries }
}
