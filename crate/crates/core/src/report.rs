//! Rendering of leaderboards, per-subject breakdowns, agreement data and
//! self-reported comparisons.
//!
//! CSV files start with one `#` comment line carrying the scoring
//! parameters. Undefined metrics render as empty cells.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{AgreementReport, LeaderboardEntry};
use crate::score::ScoringParams;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("self-reported table line {line}: {message}")]
    SelfReported { line: u64, message: String },
    #[error("leaderboard file: {0}")]
    Json(#[from] serde_json::Error),
}

pub const DEFAULT_PRECISION: usize = 1;

/// Everything `score` produces that `report` needs again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardReport {
    pub params: ScoringParams,
    /// In rank order.
    pub entries: Vec<LeaderboardEntry>,
}

impl LeaderboardReport {
    pub fn to_json(&self) -> Result<String, ReportError> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        Ok(serde_json::from_str(text)?)
    }
}

/// A fraction as a percentage; undefined is blank.
pub fn fmt_pct(v: Option<f64>, precision: usize) -> String {
    v.map(|x| format!("{:.*}", precision, x * 100.0)).unwrap_or_default()
}

pub fn fmt_num(v: Option<f64>, precision: usize) -> String {
    v.map(|x| format!("{:.*}", precision, x)).unwrap_or_default()
}

fn fmt_full(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn params_comment(params: &ScoringParams) -> String {
    format!("# {}\n", params.describe())
}

fn csv_string(header: &[&str], rows: Vec<Vec<String>>, params: &ScoringParams) -> Result<String, ReportError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?).expect("csv output is utf-8");
    Ok(params_comment(params) + &body)
}

/// `leaderboard.csv`: metrics as percentages at the given precision.
pub fn leaderboard_csv(report: &LeaderboardReport, precision: usize) -> Result<String, ReportError> {
    let rows = report
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let m = &e.dataset_score.mean_metrics;
            let n = &e.dataset_score.n_subjects_defined;
            vec![
                (i + 1).to_string(),
                e.algorithm_name.clone(),
                fmt_pct(m.f1, precision),
                fmt_pct(m.sensitivity, precision),
                fmt_pct(m.precision, precision),
                fmt_num(m.fp_per_day, precision),
                e.dataset_score.per_subject.len().to_string(),
                n.f1.to_string(),
                n.precision.to_string(),
            ]
        })
        .collect();
    csv_string(
        &[
            "rank",
            "algorithm",
            "f1_pct",
            "sensitivity_pct",
            "precision_pct",
            "fp_per_day",
            "n_subjects",
            "n_subjects_f1",
            "n_subjects_precision",
        ],
        rows,
        &report.params,
    )
}

fn md_cell(s: &str) -> String {
    s.replace('|', r"\|")
}

/// `leaderboard.md`: name, F1, sensitivity, precision (percent) and FP/day.
pub fn leaderboard_markdown(report: &LeaderboardReport, precision: usize) -> String {
    let mut out = format!("Scoring parameters: `{}`\n\n", report.params.describe());
    out.push_str("| Rank | Algorithm | F1 (%) | Sensitivity (%) | Precision (%) | FP/day |\n");
    out.push_str("|---:|---|---:|---:|---:|---:|\n");
    for (i, e) in report.entries.iter().enumerate() {
        let m = &e.dataset_score.mean_metrics;
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} |\n",
            i + 1,
            md_cell(&e.algorithm_name),
            fmt_pct(m.f1, precision),
            fmt_pct(m.sensitivity, precision),
            fmt_pct(m.precision, precision),
            fmt_num(m.fp_per_day, precision),
        ));
    }
    out
}

/// `per_subject.csv`: summed counts and metrics (fractions, full precision).
pub fn per_subject_csv(report: &LeaderboardReport) -> Result<String, ReportError> {
    let mut rows = Vec::new();
    for e in &report.entries {
        for s in &e.dataset_score.per_subject {
            let c = &s.counts;
            let m = &s.metrics;
            rows.push(vec![
                e.algorithm_name.clone(),
                s.subject_id.clone(),
                c.tp.to_string(),
                c.fp.to_string(),
                c.fn_.to_string(),
                c.ref_total.to_string(),
                c.hyp_total.to_string(),
                c.duration_s.to_string(),
                fmt_full(m.sensitivity),
                fmt_full(m.precision),
                fmt_full(m.f1),
                fmt_full(m.fp_per_day),
            ]);
        }
    }
    csv_string(
        &[
            "algorithm",
            "subject",
            "tp",
            "fp",
            "fn",
            "ref_total",
            "hyp_total",
            "duration_s",
            "sensitivity",
            "precision",
            "f1",
            "fp_per_day",
        ],
        rows,
        &report.params,
    )
}

/// `scatter.csv`: one point per algorithm for iso-F1 and self-reported plots.
pub fn scatter_csv(report: &LeaderboardReport) -> Result<String, ReportError> {
    let rows = report
        .entries
        .iter()
        .map(|e| {
            let m = &e.dataset_score.mean_metrics;
            vec![
                e.algorithm_name.clone(),
                fmt_full(m.sensitivity),
                fmt_full(m.precision),
                fmt_full(m.f1),
                fmt_full(m.fp_per_day),
                fmt_full(e.self_reported_f1),
            ]
        })
        .collect();
    csv_string(
        &["algorithm", "sensitivity", "precision", "f1", "fp_per_day", "self_reported_f1"],
        rows,
        &report.params,
    )
}

/// `agreement.csv`: `detection` rows per reference event, `fp` rows per
/// false-positive cluster.
pub fn agreement_csv(agreement: &AgreementReport, params: &ScoringParams) -> Result<String, ReportError> {
    let mut rows = Vec::new();
    for d in &agreement.detections {
        rows.push(vec![
            "detection".to_string(),
            d.recording.to_string(),
            d.onset_s.to_string(),
            (d.onset_s + d.duration_s).to_string(),
            d.detected_by.to_string(),
            agreement.n_algorithms.to_string(),
            d.fraction.to_string(),
            String::new(),
        ]);
    }
    for c in &agreement.fp_clusters {
        let mut names: Vec<&str> = c.members.iter().map(|m| m.algorithm.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        rows.push(vec![
            "fp".to_string(),
            c.recording.to_string(),
            c.start_s.to_string(),
            c.end_s.to_string(),
            c.algorithms.to_string(),
            agreement.n_algorithms.to_string(),
            c.fraction.to_string(),
            names.join(";"),
        ]);
    }
    csv_string(
        &["panel", "recording", "start_s", "end_s", "algorithms", "n_algorithms", "fraction", "members"],
        rows,
        params,
    )
}

/// Parses `algorithm,self_reported_f1` rows; F1 is a fraction, blank or
/// `n/a` means not reported.
pub fn parse_self_reported(text: &str) -> Result<BTreeMap<String, Option<f64>>, ReportError> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(ia), Some(iv)) = (col("algorithm"), col("self_reported_f1")) else {
        return Err(ReportError::SelfReported {
            line: 1,
            message: "header must contain `algorithm` and `self_reported_f1`".into(),
        });
    };
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let name = rec.get(ia).unwrap_or("").to_string();
        let raw = rec.get(iv).unwrap_or("");
        let value = match raw {
            "" | "n/a" | "NA" => None,
            v => {
                let x: f64 = v.parse().map_err(|_| ReportError::SelfReported {
                    line,
                    message: format!("not a number: {v:?}"),
                })?;
                if !(0.0..=1.0).contains(&x) {
                    return Err(ReportError::SelfReported {
                        line,
                        message: format!("F1 {x} is not a fraction in [0, 1]"),
                    });
                }
                Some(x)
            }
        };
        if out.insert(name.clone(), value).is_some() {
            return Err(ReportError::SelfReported {
                line,
                message: format!("duplicate algorithm {name:?}"),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub algorithm: String,
    pub measured_f1: Option<f64>,
    pub self_reported_f1: Option<f64>,
    /// Measured minus self-reported.
    pub difference: Option<f64>,
}

/// Joins self-reported values onto the leaderboard, in leaderboard order.
/// Names that match no algorithm are logged and skipped.
pub fn join_self_reported(report: &LeaderboardReport, table: &BTreeMap<String, Option<f64>>) -> Vec<ComparisonRow> {
    for name in table.keys() {
        if !report.entries.iter().any(|e| &e.algorithm_name == name) {
            log::warn!("self-reported entry {name:?} matches no scored algorithm; skipped");
        }
    }
    report
        .entries
        .iter()
        .filter_map(|e| {
            let reported = *table.get(&e.algorithm_name)?;
            let measured = e.dataset_score.mean_metrics.f1;
            Some(ComparisonRow {
                algorithm: e.algorithm_name.clone(),
                measured_f1: measured,
                self_reported_f1: reported,
                difference: measured.zip(reported).map(|(m, r)| m - r),
            })
        })
        .collect()
}

/// Copies self-reported values onto the entries so scatter data carries them.
pub fn attach_self_reported(report: &mut LeaderboardReport, table: &BTreeMap<String, Option<f64>>) {
    for e in &mut report.entries {
        if let Some(v) = table.get(&e.algorithm_name) {
            e.self_reported_f1 = *v;
        }
    }
}

pub fn comparison_markdown(rows: &[ComparisonRow], precision: usize) -> String {
    let na = |s: String| if s.is_empty() { "n/a".to_string() } else { s };
    let mut out = String::from("| Algorithm | Measured F1 (%) | Self-reported F1 (%) | Difference (pp) |\n");
    out.push_str("|---|---:|---:|---:|\n");
    for r in rows {
        out.push_str(&format!(
            "| {} | {} | {} | {} |\n",
            md_cell(&r.algorithm),
            na(fmt_pct(r.measured_f1, precision)),
            na(fmt_pct(r.self_reported_f1, precision)),
            na(fmt_pct(r.difference, precision)),
        ));
    }
    out
}

pub fn comparison_csv(rows: &[ComparisonRow], params: &ScoringParams) -> Result<String, ReportError> {
    let na = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| x.to_string());
    let rows = rows
        .iter()
        .map(|r| {
            vec![
                r.algorithm.clone(),
                fmt_full(r.measured_f1),
                fmt_full(r.self_reported_f1),
                na(r.difference),
            ]
        })
        .collect();
    csv_string(&["algorithm", "measured_f1", "self_reported_f1", "difference"], rows, params)
}

/// Full Markdown report: leaderboard, then the comparison when any
/// self-reported rows matched.
pub fn render_markdown_report(report: &LeaderboardReport, comparison: &[ComparisonRow], precision: usize) -> String {
    let mut out = String::from("# Leaderboard\n\n");
    out.push_str(&leaderboard_markdown(report, precision));
    if !comparison.is_empty() {
        out.push_str("\n# Self-reported vs measured F1\n\n");
        out.push_str(&comparison_markdown(comparison, precision));
    }
    out
}
