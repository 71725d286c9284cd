//! Event-based and sample-based scoring of hypothesis annotations against
//! a reference.
//!
//! Intervals are half-open `[onset, onset + duration)` in real-valued
//! seconds; nothing in this module rasterizes events.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{Event, EventList};

/// Any positive overlap counts as a detection.
pub const DEFAULT_MIN_OVERLAP_S: f64 = 0.0;
/// "We use a 30 seconds pre-ictal tolerance."
pub const DEFAULT_PREICTAL_TOLERANCE_S: f64 = 30.0;
/// "We use a 60 seconds post-ictal tolerance."
pub const DEFAULT_POSTICTAL_TOLERANCE_S: f64 = 60.0;
/// Events separated by less than 90 s are merged (the combined tolerances).
pub const DEFAULT_MERGE_GAP_S: f64 = 90.0;
/// Events longer than 5 minutes are split.
pub const DEFAULT_MAX_EVENT_S: f64 = 300.0;
/// Sample-based scoring granularity.
pub const DEFAULT_SAMPLE_PERIOD_S: f64 = 1.0;

/// Two recording durations closer than this are considered equal.
const DURATION_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringParams {
    pub min_overlap_s: f64,
    pub preictal_tolerance_s: f64,
    pub postictal_tolerance_s: f64,
    pub merge_gap_s: f64,
    pub max_event_s: f64,
    pub sample_period_s: f64,
}

impl Default for ScoringParams {
    fn default() -> Self {
        Self {
            min_overlap_s: DEFAULT_MIN_OVERLAP_S,
            preictal_tolerance_s: DEFAULT_PREICTAL_TOLERANCE_S,
            postictal_tolerance_s: DEFAULT_POSTICTAL_TOLERANCE_S,
            merge_gap_s: DEFAULT_MERGE_GAP_S,
            max_event_s: DEFAULT_MAX_EVENT_S,
            sample_period_s: DEFAULT_SAMPLE_PERIOD_S,
        }
    }
}

impl ScoringParams {
    pub fn validate(&self) -> Result<(), ScoreError> {
        let all = [
            ("min_overlap_s", self.min_overlap_s),
            ("preictal_tolerance_s", self.preictal_tolerance_s),
            ("postictal_tolerance_s", self.postictal_tolerance_s),
            ("merge_gap_s", self.merge_gap_s),
            ("max_event_s", self.max_event_s),
            ("sample_period_s", self.sample_period_s),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ScoreError::InvalidParams(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if self.max_event_s <= 0.0 {
            return Err(ScoreError::InvalidParams("max_event_s must be positive".into()));
        }
        if self.sample_period_s <= 0.0 {
            return Err(ScoreError::InvalidParams("sample_period_s must be positive".into()));
        }
        Ok(())
    }

    /// `key=value` pairs, in field order, for report headers.
    pub fn describe(&self) -> String {
        format!(
            "min_overlap_s={} preictal_tolerance_s={} postictal_tolerance_s={} merge_gap_s={} max_event_s={} sample_period_s={}",
            self.min_overlap_s,
            self.preictal_tolerance_s,
            self.postictal_tolerance_s,
            self.merge_gap_s,
            self.max_event_s,
            self.sample_period_s
        )
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ScoreError {
    #[error("reference lasts {reference} s but hypothesis lasts {hypothesis} s")]
    DurationMismatch { reference: f64, hypothesis: f64 },
    #[error("invalid scoring parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub ref_total: u64,
    pub hyp_total: u64,
    pub duration_s: f64,
}

impl Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            ref_total: self.ref_total + o.ref_total,
            hyp_total: self.hyp_total + o.hyp_total,
            duration_s: self.duration_s + o.duration_s,
        }
    }
}

impl AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        *self = *self + o;
    }
}

impl std::iter::Sum for Counts {
    fn sum<I: Iterator<Item = Counts>>(iter: I) -> Counts {
        iter.fold(Counts::default(), Add::add)
    }
}

/// Derived metrics; `None` marks an undefined value (e.g. 0/0).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub sensitivity: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    pub fp_per_day: Option<f64>,
}

pub fn compute_metrics(c: &Counts) -> Metrics {
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    let sensitivity = ratio(c.tp, c.tp + c.fn_);
    let precision = ratio(c.tp, c.tp + c.fp);
    let f1 = match (sensitivity, precision) {
        (Some(s), Some(p)) if s + p > 0.0 => Some(2.0 * s * p / (s + p)),
        _ => None,
    };
    let fp_per_day = (c.duration_s > 0.0).then(|| c.fp as f64 * 86_400.0 / c.duration_s);
    Metrics {
        sensitivity,
        precision,
        f1,
        fp_per_day,
    }
}

/// Merges consecutive events separated by less than `merge_gap_s`.
/// Overlapping and touching events are always merged.
pub fn merge_events(list: &EventList, merge_gap_s: f64) -> EventList {
    let mut out: Vec<Event> = Vec::with_capacity(list.events.len());
    let mut current: Option<(f64, f64)> = None;
    for e in &list.events {
        current = match current {
            None => Some((e.onset_s, e.end_s())),
            Some((start, end)) => {
                let gap = e.onset_s - end;
                if gap < merge_gap_s || gap <= 0.0 {
                    Some((start, end.max(e.end_s())))
                } else {
                    out.push(Event::span(start, end));
                    Some((e.onset_s, e.end_s()))
                }
            }
        };
    }
    if let Some((start, end)) = current {
        out.push(Event::span(start, end));
    }
    EventList {
        recording_duration_s: list.recording_duration_s,
        events: out,
        regularized: false,
    }
}

/// Splits events longer than `max_event_s` into back-to-back fragments of
/// `max_event_s`, the last fragment holding the remainder.
pub fn split_events(list: &EventList, max_event_s: f64) -> EventList {
    let mut out = Vec::with_capacity(list.events.len());
    for e in &list.events {
        let end = e.end_s();
        let mut start = e.onset_s;
        let mut k = 0u64;
        while end - start > max_event_s {
            let next = e.onset_s + (k + 1) as f64 * max_event_s;
            out.push(Event::span(start, next));
            start = next;
            k += 1;
        }
        out.push(Event::span(start, end));
    }
    EventList {
        recording_duration_s: list.recording_duration_s,
        events: out,
        regularized: false,
    }
}

/// Merge, then split.
pub fn regularize(list: &EventList, params: &ScoringParams) -> EventList {
    let mut sorted = list.clone();
    sorted.events.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
    let mut out = split_events(&merge_events(&sorted, params.merge_gap_s), params.max_event_s);
    out.regularized = true;
    out
}

/// Tolerance window `[start, end)` around a reference event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extended {
    pub start: f64,
    pub end: f64,
}

pub fn extend_reference(reference: &EventList, params: &ScoringParams) -> Vec<Extended> {
    reference
        .events
        .iter()
        .map(|e| Extended {
            start: (e.onset_s - params.preictal_tolerance_s).max(0.0),
            end: (e.end_s() + params.postictal_tolerance_s).min(reference.recording_duration_s),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MatchDetail {
    /// Per reference event: whether it was detected.
    pub ref_detected: Vec<bool>,
    /// Per reference event: hypothesis indices overlapping its extended window.
    pub ref_overlaps: Vec<Vec<usize>>,
    /// Per hypothesis event: whether it supports at least one true positive.
    pub hyp_supports_tp: Vec<bool>,
    /// Per hypothesis event: whether it counts as a false positive.
    pub hyp_is_fp: Vec<bool>,
}

fn check_durations(reference: &EventList, hypothesis: &EventList) -> Result<(), ScoreError> {
    if (reference.recording_duration_s - hypothesis.recording_duration_s).abs() > DURATION_EPS {
        return Err(ScoreError::DurationMismatch {
            reference: reference.recording_duration_s,
            hypothesis: hypothesis.recording_duration_s,
        });
    }
    Ok(())
}

/// Matches regularized lists.
pub fn match_events(
    reference: &EventList,
    hypothesis: &EventList,
    params: &ScoringParams,
) -> Result<(Counts, MatchDetail), ScoreError> {
    check_durations(reference, hypothesis)?;
    let extended = extend_reference(reference, params);
    let hyp = &hypothesis.events;
    // Regularized hypotheses are sorted and non-overlapping, so their end
    // times are sorted too.
    let sorted_ends = hyp.windows(2).all(|w| w[0].end_s() <= w[1].end_s());

    let mut detail = MatchDetail {
        ref_detected: vec![false; extended.len()],
        ref_overlaps: vec![Vec::new(); extended.len()],
        hyp_supports_tp: vec![false; hyp.len()],
        hyp_is_fp: vec![true; hyp.len()],
    };
    for (r, ext) in extended.iter().enumerate() {
        let first = if sorted_ends {
            hyp.partition_point(|h| h.end_s() <= ext.start)
        } else {
            0
        };
        for (j, h) in hyp.iter().enumerate().skip(first) {
            if sorted_ends && h.onset_s >= ext.end {
                break;
            }
            let overlap = h.overlap_with(ext.start, ext.end);
            if overlap <= 0.0 {
                continue;
            }
            detail.ref_overlaps[r].push(j);
            detail.hyp_is_fp[j] = false;
            if overlap > params.min_overlap_s {
                detail.ref_detected[r] = true;
                detail.hyp_supports_tp[j] = true;
            }
        }
    }
    let tp = detail.ref_detected.iter().filter(|&&d| d).count() as u64;
    let fp = detail.hyp_is_fp.iter().filter(|&&f| f).count() as u64;
    let counts = Counts {
        tp,
        fp,
        fn_: extended.len() as u64 - tp,
        ref_total: extended.len() as u64,
        hyp_total: hyp.len() as u64,
        duration_s: reference.recording_duration_s,
    };
    Ok((counts, detail))
}

/// Regularizes both lists and matches them.
pub fn score_event_based_detailed(
    reference: &EventList,
    hypothesis: &EventList,
    params: &ScoringParams,
) -> Result<(Counts, MatchDetail, EventList, EventList), ScoreError> {
    check_durations(reference, hypothesis)?;
    let r = regularize(reference, params);
    let h = regularize(hypothesis, params);
    let (counts, detail) = match_events(&r, &h, params)?;
    Ok((counts, detail, r, h))
}

pub fn score_event_based(reference: &EventList, hypothesis: &EventList, params: &ScoringParams) -> Result<Counts, ScoreError> {
    score_event_based_detailed(reference, hypothesis, params).map(|(c, ..)| c)
}

fn sample_mask(list: &EventList, period: f64, n: usize) -> Vec<bool> {
    let mut mask = vec![false; n];
    let dur = list.recording_duration_s;
    let sample_start = |i: usize| i as f64 * period;
    let sample_end = |i: usize| ((i + 1) as f64 * period).min(dur);
    for e in &list.events {
        let (a, b) = (e.onset_s, e.end_s());
        if b <= a || n == 0 {
            continue;
        }
        // First sample whose end lies after the onset.
        let mut i = ((a / period).floor().max(0.0) as usize).min(n - 1);
        while i > 0 && sample_end(i - 1) > a {
            i -= 1;
        }
        while i < n && sample_end(i) <= a {
            i += 1;
        }
        while i < n && sample_start(i) < b {
            mask[i] = true;
            i += 1;
        }
    }
    mask
}

/// Per-sample counts on raw lists, without tolerances or regularization.
pub fn score_sample_based(reference: &EventList, hypothesis: &EventList, params: &ScoringParams) -> Result<Counts, ScoreError> {
    check_durations(reference, hypothesis)?;
    let period = params.sample_period_s;
    let n = (reference.recording_duration_s / period).ceil().max(0.0) as usize;
    let r = sample_mask(reference, period, n);
    let h = sample_mask(hypothesis, period, n);
    let mut c = Counts {
        duration_s: reference.recording_duration_s,
        ..Counts::default()
    };
    for (&rv, &hv) in r.iter().zip(&h) {
        match (rv, hv) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => {}
        }
        c.ref_total += rv as u64;
        c.hyp_total += hv as u64;
    }
    Ok(c)
}
