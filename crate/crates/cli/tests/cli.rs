use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use szbench::annotations::{self, bids_dir, Event, EventList};
use szbench::edf::{self, EdfHeader, SignalHeader, SignalMatrix};
use szbench::standardize::CANONICAL_CHANNELS;

fn szbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_szbench")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SECONDS: usize = 300;
const FS: usize = 256;

/// Seizures per (subject, run).
fn seizures(s: usize, r: usize) -> Vec<(f64, f64)> {
    match (s, r) {
        (0, 0) => vec![(20.0, 40.0)],
        (0, 1) => vec![],
        (1, 0) => vec![(10.0, 25.0), (80.0, 100.0)],
        _ => vec![(60.0, 75.0)],
    }
}

fn stem(s: usize, r: usize) -> String {
    format!("sub-{:02}_ses-01_task-szMonitoring_run-{:02}", s + 1, r)
}

fn events_rel(s: usize, r: usize) -> PathBuf {
    bids_dir(&format!("{:02}", s + 1), "01").join(format!("{}_events.tsv", stem(s, r)))
}

fn list(spans: &[(f64, f64)]) -> EventList {
    EventList::new(SECONDS as f64, spans.iter().map(|&(a, b)| Event::span(a, b)).collect())
}

/// Two subjects with two recordings each. Seizure spans carry a 10 Hz
/// burst on two channels so the baseline detector has something to find.
fn dataset(root: &Path) {
    for s in 0..2 {
        for r in 0..2 {
            let sz = seizures(s, r);
            let mut state = (s * 7 + r + 1) as u64;
            let samples: Vec<Vec<f64>> = (0..CANONICAL_CHANNELS.len())
                .map(|ch| {
                    (0..SECONDS * FS)
                        .map(|i| {
                            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                            let t = i as f64 / FS as f64;
                            let mut v = ((state >> 33) as f64 / (1u64 << 31) as f64 - 0.5) * 20.0;
                            if ch < 2 && sz.iter().any(|&(a, b)| t >= a && t < b) {
                                v += 200.0 * (2.0 * std::f64::consts::PI * 10.0 * t).sin();
                            }
                            v
                        })
                        .collect()
                })
                .collect();
            let labels: Vec<String> = CANONICAL_CHANNELS.iter().map(|c| c.to_string()).collect();
            let m = SignalMatrix::uniform(labels.clone(), FS as f64, samples);
            let sigs = labels.into_iter().map(|l| SignalHeader::new(l, "uV", -1000.0, 1000.0, FS)).collect();
            let start = chrono::NaiveDate::from_ymd_opt(2024, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
            let header = EdfHeader::new("X X X X", "Startdate X", start, 1.0, SECONDS as u64, sigs);
            let dir = root.join(bids_dir(&format!("{:02}", s + 1), "01"));
            fs::create_dir_all(&dir).unwrap();
            edf::write_edf(&header, &m, dir.join(format!("{}_eeg.edf", stem(s, r)))).unwrap();
            annotations::write_events_tsv(&list(&sz), root.join(events_rel(s, r))).unwrap();
        }
    }
}

fn hypotheses(root: &Path, f: impl Fn(usize, usize) -> Vec<(f64, f64)>) {
    for s in 0..2 {
        for r in 0..2 {
            let path = root.join(events_rel(s, r));
            fs::create_dir_all(path.parent().unwrap()).unwrap();
            annotations::write_events_tsv(&list(&f(s, r)), path).unwrap();
        }
    }
}

fn csv_row<'a>(text: &'a str, name: &str) -> Vec<&'a str> {
    text.lines()
        .find(|l| l.split(',').nth(1) == Some(name))
        .unwrap_or_else(|| panic!("no row for {name} in {text}"))
        .split(',')
        .collect()
}

#[test]
fn validate_accepts_a_clean_dataset() {
    let d = tempfile::tempdir().unwrap();
    dataset(d.path());
    let o = szbench(&["validate", "--dataset", p(d.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["recordings"], 4);
    assert_eq!(v["ok"], true);
}

#[test]
fn validate_reports_malformed_hypothesis_with_line() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    let hyp = d.path().join("hyp");
    dataset(&data);
    hypotheses(&hyp, seizures);
    let bad = hyp.join(events_rel(1, 0));
    let mut text = fs::read_to_string(&bad).unwrap();
    text.push_str("not-a-number\tten\tsz\n");
    fs::write(&bad, text).unwrap();
    fs::remove_file(hyp.join(events_rel(0, 1))).unwrap();
    let o = szbench(&["validate", "--dataset", p(&data), "--hypothesis", &format!("algo={}", p(&hyp))]);
    assert_eq!(o.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let findings = v["findings"].as_array().unwrap();
    assert_eq!(findings.len(), 2, "{findings:?}");
    let malformed = findings.iter().find(|f| f["path"].as_str().unwrap().ends_with(&format!("{}_events.tsv", stem(1, 0)))).unwrap();
    assert_eq!(malformed["line"], 4);
    assert!(findings.iter().any(|f| f["message"] == "hypothesis file missing"));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(szbench(&["validate"]).status.code(), Some(2));
    assert_eq!(szbench(&["score", "--dataset", "x", "--out", "y"]).status.code(), Some(2));
    assert_eq!(szbench(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn missing_dataset_is_an_internal_error() {
    let d = tempfile::tempdir().unwrap();
    let o = szbench(&["validate", "--dataset", p(&d.path().join("nope"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn score_writes_every_output_and_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    dataset(&data);
    let (perfect, silent) = (d.path().join("perfect"), d.path().join("silent"));
    hypotheses(&perfect, seizures);
    hypotheses(&silent, |_, _| vec![]);
    let run = |out: &Path| {
        szbench(&[
            "score",
            "--dataset",
            p(&data),
            "--hypothesis",
            &format!("perfect={}", p(&perfect)),
            "--hypothesis",
            &format!("silent={}", p(&silent)),
            "--out",
            p(out),
            "--jobs",
            "2",
        ])
    };
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    let o = run(&a);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("| 1 | perfect | 100.0 | 100.0 | 100.0 | 0.0 |"), "{}", stdout(&o));
    assert_eq!(run(&b).status.code(), Some(0));
    let files = [
        "leaderboard.json",
        "leaderboard.csv",
        "per_subject.csv",
        "scatter.csv",
        "leaderboard.md",
        "agreement.csv",
        "agreement.json",
    ];
    for f in files {
        let (x, y) = (fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
        assert!(x == y, "{f} differs between runs");
    }
    let lb = fs::read_to_string(a.join("leaderboard.csv")).unwrap();
    assert!(lb.starts_with("# "));
    assert_eq!(csv_row(&lb, "perfect")[..6], ["1", "perfect", "100.0", "100.0", "100.0", "0.0"]);
    // No detections: precision and F1 are undefined, so their cells are blank.
    assert_eq!(csv_row(&lb, "silent")[..6], ["2", "silent", "", "0.0", "", "0.0"]);
    let per_subject = fs::read_to_string(a.join("per_subject.csv")).unwrap();
    assert_eq!(per_subject.lines().filter(|l| l.starts_with("perfect,")).count(), 2);
}

#[test]
fn score_honours_parameter_flags() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    let late = d.path().join("late");
    dataset(&data);
    // Every detection starts 40 s after its seizure ends. Only the one
    // that also falls inside the next seizure's pre-ictal window survives a
    // 30 s post-ictal tolerance.
    hypotheses(&late, |s, r| seizures(s, r).iter().map(|&(_, b)| (b + 40.0, b + 45.0)).filter(|&(_, b)| b <= SECONDS as f64).collect());
    let score = |extra: &[&str], out: &str| {
        let out = d.path().join(out);
        let mut args = vec!["score", "--dataset", p(&data), "--format", "csv", "--out"];
        let hyp = format!("late={}", p(&late));
        args.push(p(&out));
        args.extend(["--hypothesis", &hyp]);
        args.extend(extra);
        let o = szbench(&args);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(!out.join("leaderboard.json").exists());
        csv_row(&fs::read_to_string(out.join("leaderboard.csv")).unwrap(), "late").iter().map(|s| s.to_string()).collect::<Vec<_>>()
    };
    let default = score(&[], "d");
    let strict = score(&["--postictal", "30"], "s");
    assert_eq!(default[3], "100.0");
    assert_eq!(strict[3], "25.0");
}

#[test]
fn report_joins_self_reported_scores() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    let hyp = d.path().join("hyp");
    dataset(&data);
    hypotheses(&hyp, seizures);
    let scored = d.path().join("scored");
    let o = szbench(&["score", "--dataset", p(&data), "--hypothesis", &format!("mine={}", p(&hyp)), "--out", p(&scored)]);
    assert_eq!(o.status.code(), Some(0));
    let table = d.path().join("claims.csv");
    fs::write(&table, "algorithm,self_reported_f1\nmine,0.9\nothers,n/a\n").unwrap();
    let out = d.path().join("report");
    let o = szbench(&[
        "report",
        "--leaderboard",
        p(&scored.join("leaderboard.json")),
        "--out",
        p(&out),
        "--self-reported",
        p(&table),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let joined = fs::read_to_string(out.join("self_reported.csv")).unwrap();
    let row: Vec<&str> = joined.lines().find(|l| l.starts_with("mine,")).unwrap().split(',').collect();
    let (claimed, diff): (f64, f64) = (row[row.len() - 2].parse().unwrap(), row[row.len() - 1].parse().unwrap());
    assert_eq!(claimed, 0.9, "{row:?}");
    assert!((diff - 0.1).abs() < 1e-12, "{row:?}");
    let md = fs::read_to_string(out.join("report.md")).unwrap();
    assert!(md.contains("mine"));
    assert!(fs::read_to_string(out.join("scatter.csv")).unwrap().contains("mine"));
}

#[test]
fn detect_then_score_finds_the_bursts() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    let hyp = d.path().join("hyp");
    dataset(&data);
    for s in 0..2 {
        for r in 0..2 {
            let eeg = data.join(bids_dir(&format!("{:02}", s + 1), "01")).join(format!("{}_eeg.edf", stem(s, r)));
            let out = hyp.join(events_rel(s, r));
            let o = szbench(&["detect", "--input", p(&eeg), "--output", p(&out)]);
            assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        }
    }
    let out = d.path().join("out");
    let o = szbench(&["score", "--dataset", p(&data), "--hypothesis", &format!("baseline={}", p(&hyp)), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let lb = fs::read_to_string(out.join("leaderboard.csv")).unwrap();
    let row = csv_row(&lb, "baseline");
    assert_eq!(row[3], "100.0", "sensitivity in {row:?}");
}

#[test]
fn run_invokes_the_command_per_recording() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    dataset(&data);
    let work = d.path().join("work");
    let cmd = format!("{} detect --input {{input}} --output {{output}}", env!("CARGO_BIN_EXE_szbench"));
    let o = szbench(&["run", "--dataset", p(&data), "--command", &cmd, "--out", p(&work), "--jobs", "2", "--timeout", "60"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(work.join("run_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["total"], 4);
    assert_eq!(summary["outcomes"]["produced"], 4);
    let o = szbench(&["validate", "--dataset", p(&data), "--hypothesis", p(&work.join("hypotheses"))]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}
