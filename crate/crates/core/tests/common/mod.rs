#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use szbench::annotations::{self, bids_dir, Event, EventList};
use szbench::edf::{self, EdfHeader, SignalHeader, SignalMatrix};
use szbench::standardize::CANONICAL_CHANNELS;
use szbench::ScoringParams;

/// Grid resolution of the brute-force scoring oracle.
pub const STEP: f64 = 0.25;

fn cells(x: f64) -> usize {
    let c = (x / STEP).round();
    assert!((c * STEP - x).abs() < 1e-9, "{x} is not on the oracle grid");
    c as usize
}

fn rasterize(spans: &[(f64, f64)], n: usize) -> Vec<bool> {
    let mut mask = vec![false; n];
    for &(a, b) in spans {
        for m in &mut mask[cells(a).min(n)..cells(b).min(n)] {
            *m = true;
        }
    }
    mask
}

fn runs(mask: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < mask.len() {
        if mask[i] {
            let s = i;
            while i < mask.len() && mask[i] {
                i += 1;
            }
            out.push((s, i));
        } else {
            i += 1;
        }
    }
    out
}

/// Regularization on the grid: union, bridge short gaps, cut long runs.
/// Returns half-open cell ranges.
pub fn oracle_regularize(spans: &[(f64, f64)], duration_s: f64, p: &ScoringParams) -> Vec<(usize, usize)> {
    let n = cells(duration_s);
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for (s, e) in runs(&rasterize(spans, n)) {
        match merged.last_mut() {
            Some(last) if ((s - last.1) as f64 * STEP) < p.merge_gap_s => last.1 = e,
            _ => merged.push((s, e)),
        }
    }
    let max_cells = cells(p.max_event_s);
    let mut out = Vec::new();
    for (mut s, e) in merged {
        while e - s > max_cells {
            out.push((s, s + max_cells));
            s += max_cells;
        }
        out.push((s, e));
    }
    out
}

/// Event-based (tp, fp, fn) by literal application of the matching rules
/// on rasterized intervals.
pub fn oracle_counts(
    reference: &[(f64, f64)],
    hypothesis: &[(f64, f64)],
    duration_s: f64,
    p: &ScoringParams,
) -> (u64, u64, u64) {
    let n = cells(duration_s);
    let refs = oracle_regularize(reference, duration_s, p);
    let hyps = oracle_regularize(hypothesis, duration_s, p);
    let pre = cells(p.preictal_tolerance_s);
    let post = cells(p.postictal_tolerance_s);
    let extended: Vec<Vec<bool>> = refs
        .iter()
        .map(|&(s, e)| {
            let mut m = vec![false; n];
            for c in &mut m[s.saturating_sub(pre)..(e + post).min(n)] {
                *c = true;
            }
            m
        })
        .collect();
    let overlap = |m: &[bool], (s, e): (usize, usize)| m[s..e].iter().filter(|&&x| x).count();
    let mut tp = 0;
    for m in &extended {
        if hyps.iter().any(|&h| overlap(m, h) as f64 * STEP > p.min_overlap_s) {
            tp += 1;
        }
    }
    let fp = hyps
        .iter()
        .filter(|&&h| extended.iter().all(|m| overlap(m, h) == 0))
        .count() as u64;
    (tp, fp, refs.len() as u64 - tp)
}

pub fn spans_to_list(duration_s: f64, spans: &[(f64, f64)]) -> EventList {
    EventList::new(duration_s, spans.iter().map(|&(a, b)| Event::span(a, b)).collect())
}

/// Random grid-aligned instance: recording 60-7200 s, 0-10 events per
/// side, durations 1-600 s, all inside the recording.
pub fn random_instance(rng: &mut impl Rng) -> (f64, Vec<(f64, f64)>, Vec<(f64, f64)>) {
    let duration = rng.gen_range(240..=28800) as f64 * STEP;
    let gen = |rng: &mut dyn rand::RngCore| {
        let k = rng.gen_range(0..=10);
        (0..k)
            .map(|_| {
                let max_d = (duration.min(600.0) / STEP) as u32;
                let d = rng.gen_range(4..=max_d.max(4)) as f64 * STEP;
                let d = d.min(duration);
                let latest = ((duration - d) / STEP) as u32;
                let onset = rng.gen_range(0..=latest) as f64 * STEP;
                (onset, onset + d)
            })
            .collect::<Vec<_>>()
    };
    let r = gen(rng);
    let h = gen(rng);
    (duration, r, h)
}

pub fn start_time() -> chrono::NaiveDateTime {
    NaiveDate::from_ymd_opt(2024, 5, 1).unwrap().and_hms_opt(8, 0, 0).unwrap()
}

/// Noisy multichannel recording with 10 Hz, 200 uV bursts on a subset of
/// channels during `bursts`.
pub fn synthetic_signals(
    labels: &[String],
    fs: f64,
    seconds: usize,
    bursts: &[(f64, f64)],
    burst_channels: &[usize],
    seed: u64,
) -> SignalMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (fs as usize) * seconds;
    let samples = (0..labels.len())
        .map(|ch| {
            (0..n)
                .map(|i| {
                    let t = i as f64 / fs;
                    let mut v = rng.gen_range(-10.0..10.0) + 5.0 * (2.0 * PI * 1.3 * t + ch as f64).sin();
                    if burst_channels.contains(&ch) && bursts.iter().any(|&(a, b)| t >= a && t < b) {
                        v += 200.0 * (2.0 * PI * 10.0 * t).sin();
                    }
                    v
                })
                .collect()
        })
        .collect();
    SignalMatrix::uniform(labels.to_vec(), fs, samples)
}

pub fn write_recording(path: &Path, signals: &SignalMatrix, dimension: &str, range: f64) {
    let fs = signals.fs[0] as usize;
    let records = signals.len() / fs;
    let sigs = signals
        .channels
        .iter()
        .map(|l| SignalHeader::new(l.clone(), dimension, -range, range, fs))
        .collect();
    let header = EdfHeader::new("X X X X", "Startdate X", start_time(), 1.0, records as u64, sigs);
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    edf::write_edf(&header, signals, path).unwrap();
}

pub fn canonical_labels() -> Vec<String> {
    CANONICAL_CHANNELS.iter().map(|s| s.to_string()).collect()
}

/// Writes a BIDS tree of standardized-looking recordings with references.
/// `seizures(subject, run)` gives the planted events.
pub fn write_bids_dataset(
    root: &Path,
    subjects: usize,
    runs: usize,
    seconds: usize,
    channels: usize,
    seizures: impl Fn(usize, usize) -> Vec<(f64, f64)>,
) -> Vec<PathBuf> {
    let labels: Vec<String> = canonical_labels().into_iter().take(channels).collect();
    let mut paths = Vec::new();
    for s in 0..subjects {
        for r in 0..runs {
            let sub = format!("{:02}", s + 1);
            let run = format!("{:02}", r);
            let dir = root.join(bids_dir(&sub, "01"));
            let stem = format!("sub-{sub}_ses-01_task-szMonitoring_run-{run}");
            let sz = seizures(s, r);
            let sig = synthetic_signals(&labels, 256.0, seconds, &sz, &[0, 1], (s * 100 + r) as u64);
            let eeg = dir.join(format!("{stem}_eeg.edf"));
            write_recording(&eeg, &sig, "uV", 1000.0);
            annotations::write_events_tsv(&spans_to_list(seconds as f64, &sz), dir.join(format!("{stem}_events.tsv")))
                .unwrap();
            paths.push(eeg);
        }
    }
    paths
}
