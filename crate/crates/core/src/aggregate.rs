//! Per-subject and dataset-level aggregation, ranking, and cross-algorithm
//! agreement.
//!
//! Counts are summed over a subject's recordings before metrics are
//! derived; subject metrics are then averaged arithmetically, skipping
//! subjects for which a metric is undefined.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rayon::prelude::*;

use crate::annotations::{EventList, RecordingKey, RecordingRef};
use crate::score::{self, compute_metrics, Counts, Metrics, ScoreError, ScoringParams};

#[derive(Debug, Error, PartialEq)]
pub enum AggregateError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("duplicate algorithm name {0:?}")]
    DuplicateName(String),
    #[error(transparent)]
    Score(#[from] ScoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectScore {
    pub subject_id: String,
    pub counts: Counts,
    pub metrics: Metrics,
}

impl SubjectScore {
    /// Sums recording counts, then derives metrics once.
    pub fn from_counts(subject_id: impl Into<String>, recordings: &[Counts]) -> Result<Self, AggregateError> {
        let subject_id = subject_id.into();
        if recordings.is_empty() {
            return Err(AggregateError::Contract(format!("subject {subject_id:?} has no recordings")));
        }
        let counts: Counts = recordings.iter().copied().sum();
        Ok(Self {
            subject_id,
            metrics: compute_metrics(&counts),
            counts,
        })
    }
}

/// Scores each (reference, hypothesis) pair and aggregates the subject.
pub fn score_subject(
    subject_id: impl Into<String>,
    recordings: &[(EventList, EventList)],
    params: &ScoringParams,
) -> Result<SubjectScore, AggregateError> {
    let counts = recordings
        .iter()
        .map(|(r, h)| score::score_event_based(r, h, params))
        .collect::<Result<Vec<_>, _>>()?;
    SubjectScore::from_counts(subject_id, &counts)
}

/// Number of subjects entering each mean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSupport {
    pub sensitivity: usize,
    pub precision: usize,
    pub f1: usize,
    pub fp_per_day: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetScore {
    /// Sorted by subject id.
    pub per_subject: Vec<SubjectScore>,
    pub mean_metrics: Metrics,
    pub n_subjects_defined: MetricSupport,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> (Option<f64>, usize) {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    ((n > 0).then(|| sum / n as f64), n)
}

pub fn score_dataset(mut subjects: Vec<SubjectScore>) -> Result<DatasetScore, AggregateError> {
    if subjects.is_empty() {
        return Err(AggregateError::Contract("dataset has no subjects".into()));
    }
    subjects.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    let (sensitivity, ns) = mean_defined(subjects.iter().map(|s| s.metrics.sensitivity));
    let (precision, np) = mean_defined(subjects.iter().map(|s| s.metrics.precision));
    let (f1, nf) = mean_defined(subjects.iter().map(|s| s.metrics.f1));
    let (fp_per_day, nd) = mean_defined(subjects.iter().map(|s| s.metrics.fp_per_day));
    Ok(DatasetScore {
        per_subject: subjects,
        mean_metrics: Metrics {
            sensitivity,
            precision,
            f1,
            fp_per_day,
        },
        n_subjects_defined: MetricSupport {
            sensitivity: ns,
            precision: np,
            f1: nf,
            fp_per_day: nd,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub algorithm_name: String,
    pub dataset_score: DatasetScore,
    pub self_reported_f1: Option<f64>,
}

/// Descending by value, undefined last.
fn desc_defined_last(a: Option<f64>, b: Option<f64>) -> Ordering {
    match (a, b) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
}

fn asc_defined_last(a: Option<f64>, b: Option<f64>) -> Ordering {
    match (a, b) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
}

/// Leaderboard order: mean F1 descending, then FP/day ascending, then name.
pub fn leaderboard_order(a: &LeaderboardEntry, b: &LeaderboardEntry) -> Ordering {
    let (ma, mb) = (&a.dataset_score.mean_metrics, &b.dataset_score.mean_metrics);
    desc_defined_last(ma.f1, mb.f1)
        .then_with(|| asc_defined_last(ma.fp_per_day, mb.fp_per_day))
        .then_with(|| a.algorithm_name.cmp(&b.algorithm_name))
}

pub fn rank(mut entries: Vec<LeaderboardEntry>) -> Result<Vec<LeaderboardEntry>, AggregateError> {
    if entries.is_empty() {
        return Err(AggregateError::Contract("leaderboard has no entries".into()));
    }
    let mut seen = HashSet::new();
    for e in &entries {
        if !seen.insert(e.algorithm_name.as_str()) {
            return Err(AggregateError::DuplicateName(e.algorithm_name.clone()));
        }
    }
    entries.sort_by(leaderboard_order);
    Ok(entries)
}

/// How many algorithms detected one reference event.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionAgreement {
    pub recording: RecordingKey,
    pub onset_s: f64,
    pub duration_s: f64,
    pub detected_by: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FpMember {
    pub algorithm: String,
    pub onset_s: f64,
    pub duration_s: f64,
}

/// False positives of several algorithms linked by transitive overlap.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FpCluster {
    pub recording: RecordingKey,
    pub start_s: f64,
    pub end_s: f64,
    pub members: Vec<FpMember>,
    pub algorithms: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementReport {
    pub n_algorithms: usize,
    pub detections: Vec<DetectionAgreement>,
    pub fp_clusters: Vec<FpCluster>,
}

impl AgreementReport {
    /// Share of false-positive clusters on which fewer than `fraction` of
    /// the algorithms agree.
    pub fn fp_clusters_below(&self, fraction: f64) -> Option<f64> {
        if self.fp_clusters.is_empty() {
            return None;
        }
        let n = self.fp_clusters.iter().filter(|c| c.fraction < fraction).count();
        Some(n as f64 / self.fp_clusters.len() as f64)
    }
}

/// Groups pooled intervals `(algorithm, start, end)` into clusters of
/// transitive positive overlap. Returns member indices per cluster.
pub fn cluster_overlapping(intervals: &[(usize, f64, f64)]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..intervals.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&intervals[a], &intervals[b]);
        x.1.total_cmp(&y.1).then(x.2.total_cmp(&y.2)).then(x.0.cmp(&y.0))
    });
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut reach = f64::NEG_INFINITY;
    for i in order {
        let (_, start, end) = intervals[i];
        match clusters.last_mut() {
            Some(c) if start < reach => {
                c.push(i);
                reach = reach.max(end);
            }
            _ => {
                clusters.push(vec![i]);
                reach = end;
            }
        }
    }
    clusters
}

/// Detection agreement on reference events and clustering of false
/// positives across algorithms. An algorithm missing a recording is
/// treated as predicting no seizures there.
pub fn agreement(
    references: &BTreeMap<RecordingKey, EventList>,
    hypotheses: &[(String, BTreeMap<RecordingKey, EventList>)],
    params: &ScoringParams,
) -> Result<AgreementReport, AggregateError> {
    let n_alg = hypotheses.len();
    if n_alg < 2 {
        return Err(AggregateError::Contract(format!(
            "agreement needs at least 2 algorithms, got {n_alg}"
        )));
    }
    let mut names = HashSet::new();
    for (name, _) in hypotheses {
        if !names.insert(name.as_str()) {
            return Err(AggregateError::DuplicateName(name.clone()));
        }
    }
    let mut detections = Vec::new();
    let mut fp_clusters = Vec::new();
    for (key, reference) in references {
        let reg_ref = score::regularize(reference, params);
        let mut detected_by = vec![0usize; reg_ref.len()];
        let mut pooled: Vec<(usize, f64, f64)> = Vec::new();
        for (a, (_, hyps)) in hypotheses.iter().enumerate() {
            let empty = EventList::empty(reference.recording_duration_s);
            let hyp = hyps.get(key).unwrap_or(&empty);
            let reg_hyp = score::regularize(hyp, params);
            let (_, detail) = score::match_events(&reg_ref, &reg_hyp, params)?;
            for (d, &hit) in detected_by.iter_mut().zip(&detail.ref_detected) {
                *d += hit as usize;
            }
            for (e, &fp) in reg_hyp.events.iter().zip(&detail.hyp_is_fp) {
                if fp {
                    pooled.push((a, e.onset_s, e.end_s()));
                }
            }
        }
        for (e, &n) in reg_ref.events.iter().zip(&detected_by) {
            detections.push(DetectionAgreement {
                recording: key.clone(),
                onset_s: e.onset_s,
                duration_s: e.duration_s,
                detected_by: n,
                fraction: n as f64 / n_alg as f64,
            });
        }
        for members in cluster_overlapping(&pooled) {
            let algs: HashSet<usize> = members.iter().map(|&i| pooled[i].0).collect();
            let start_s = members.iter().map(|&i| pooled[i].1).fold(f64::INFINITY, f64::min);
            let end_s = members.iter().map(|&i| pooled[i].2).fold(f64::NEG_INFINITY, f64::max);
            fp_clusters.push(FpCluster {
                recording: key.clone(),
                start_s,
                end_s,
                members: members
                    .iter()
                    .map(|&i| FpMember {
                        algorithm: hypotheses[pooled[i].0].0.clone(),
                        onset_s: pooled[i].1,
                        duration_s: pooled[i].2 - pooled[i].1,
                    })
                    .collect(),
                algorithms: algs.len(),
                fraction: algs.len() as f64 / n_alg as f64,
            });
        }
    }
    Ok(AgreementReport {
        n_algorithms: n_alg,
        detections,
        fp_clusters,
    })
}

/// Counts of one recording for one algorithm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordingScore {
    pub recording: RecordingKey,
    pub counts: Counts,
}

/// Scores one algorithm over a dataset. Recordings absent from
/// `hypotheses` count as predicting no seizures.
pub fn score_algorithm(
    references: &[(RecordingRef, EventList)],
    hypotheses: &BTreeMap<RecordingKey, EventList>,
    params: &ScoringParams,
) -> Result<(DatasetScore, Vec<RecordingScore>), AggregateError> {
    let per_recording = references
        .par_iter()
        .map(|(rec, reference)| {
            let key = rec.key();
            let counts = match hypotheses.get(&key) {
                Some(h) => score::score_event_based(reference, h, params)?,
                None => score::score_event_based(reference, &EventList::empty(reference.recording_duration_s), params)?,
            };
            Ok(RecordingScore { recording: key, counts })
        })
        .collect::<Result<Vec<_>, ScoreError>>()?;
    let mut by_subject: BTreeMap<&str, Vec<Counts>> = BTreeMap::new();
    for ((rec, _), s) in references.iter().zip(&per_recording) {
        by_subject.entry(rec.subject_id.as_str()).or_default().push(s.counts);
    }
    let subjects = by_subject
        .into_iter()
        .map(|(id, c)| SubjectScore::from_counts(id, &c))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((score_dataset(subjects)?, per_recording))
}
