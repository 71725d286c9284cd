//! Runs an external detector once per recording of a dataset.
//!
//! The detector is a shell command template containing `{input}` and
//! `{output}`. Each job writes to a private temporary path which is renamed
//! into the hypothesis tree only after the process exits successfully and
//! the output parses. Anything else leaves no file behind, so downstream
//! scoring treats the recording as "no seizures predicted".

use std::collections::BTreeMap;
use std::fs;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{self, DatasetIndex, RecordingRef};

/// Per-file limit; challenge recordings mostly last about an hour.
pub const DEFAULT_TIMEOUT_S: f64 = 3600.0;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("invalid runner configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunnerConfig {
    pub command_template: String,
    pub max_concurrency: usize,
    pub per_file_timeout_s: f64,
    /// Receives `hypotheses/` (the output tree), `logs/` and scratch files.
    pub workdir: PathBuf,
    pub continue_on_error: bool,
}

impl RunnerConfig {
    pub fn new(command_template: impl Into<String>, workdir: impl Into<PathBuf>) -> Self {
        Self {
            command_template: command_template.into(),
            max_concurrency: 1,
            per_file_timeout_s: DEFAULT_TIMEOUT_S,
            workdir: workdir.into(),
            continue_on_error: true,
        }
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        for ph in ["{input}", "{output}"] {
            if !self.command_template.contains(ph) {
                return Err(RunnerError::Config(format!("command template lacks the {ph} placeholder")));
            }
        }
        if self.max_concurrency == 0 {
            return Err(RunnerError::Config("max_concurrency must be at least 1".into()));
        }
        if !(self.per_file_timeout_s.is_finite() && self.per_file_timeout_s > 0.0) {
            return Err(RunnerError::Config("per_file_timeout_s must be positive".into()));
        }
        Ok(())
    }

    pub fn hypothesis_root(&self) -> PathBuf {
        self.workdir.join("hypotheses")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Produced,
    MissingOutput,
    NonzeroExit,
    Timeout,
    Crashed,
    /// Not started because an earlier failure aborted the run.
    Skipped,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Produced => "produced",
            Outcome::MissingOutput => "missing-output",
            Outcome::NonzeroExit => "nonzero-exit",
            Outcome::Timeout => "timeout",
            Outcome::Crashed => "crashed",
            Outcome::Skipped => "skipped",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub recording: RecordingRef,
    pub outcome: Outcome,
    pub wall_time_s: f64,
    pub output_path: Option<PathBuf>,
    pub exit_code: Option<i32>,
}

/// Single-quotes a path for `sh`.
fn shell_quote(path: &Path) -> String {
    let s = path.to_string_lossy();
    format!("'{}'", s.replace('\'', r"'\''"))
}

pub fn render_command(template: &str, input: &Path, output: &Path) -> String {
    template
        .replace("{input}", &shell_quote(input))
        .replace("{output}", &shell_quote(output))
}

fn kill_group(child: &mut Child) {
    // The child leads its own process group; take the whole group down.
    let pid = child.id() as libc::pid_t;
    unsafe {
        libc::kill(-pid, libc::SIGKILL);
    }
    let _ = child.kill();
}

fn wait_with_timeout(child: &mut Child, timeout: Duration) -> std::io::Result<Option<ExitStatus>> {
    let start = Instant::now();
    let mut sleep = Duration::from_millis(2);
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok(Some(status));
        }
        if start.elapsed() >= timeout {
            kill_group(child);
            child.wait()?;
            return Ok(None);
        }
        std::thread::sleep(sleep);
        sleep = (sleep * 2).min(Duration::from_millis(50));
    }
}

fn run_one(index: usize, rec: &RecordingRef, cfg: &RunnerConfig) -> RunRecord {
    let started = Instant::now();
    let stem = rec.stem();
    let scratch = cfg.workdir.join("tmp");
    let tmp_out = scratch.join(format!("{index:06}_{stem}_events.tsv"));
    let final_out = rec.events_path_under(&cfg.hypothesis_root());
    let log_path = cfg.workdir.join("logs").join(format!("{stem}.log"));
    let finish = |outcome, exit_code, output_path| RunRecord {
        recording: rec.clone(),
        outcome,
        wall_time_s: started.elapsed().as_secs_f64(),
        output_path,
        exit_code,
    };
    let _ = fs::remove_file(&tmp_out);

    let log = fs::File::create(&log_path).ok();
    let mut cmd = Command::new("sh");
    cmd.arg("-c")
        .arg(render_command(&cfg.command_template, &rec.eeg_path, &tmp_out))
        .stdin(Stdio::null())
        .process_group(0);
    match log.as_ref().and_then(|f| Some((f.try_clone().ok()?, f.try_clone().ok()?))) {
        Some((out, err)) => {
            cmd.stdout(out).stderr(err);
        }
        None => {
            cmd.stdout(Stdio::null()).stderr(Stdio::null());
        }
    }
    let mut child = match cmd.spawn() {
        Ok(c) => c,
        Err(e) => {
            log::error!("{stem}: failed to start detector: {e}");
            return finish(Outcome::Crashed, None, None);
        }
    };
    let status = match wait_with_timeout(&mut child, Duration::from_secs_f64(cfg.per_file_timeout_s)) {
        Ok(Some(s)) => s,
        Ok(None) => {
            let _ = fs::remove_file(&tmp_out);
            log::warn!("{stem}: detector timed out after {} s", cfg.per_file_timeout_s);
            return finish(Outcome::Timeout, None, None);
        }
        Err(e) => {
            log::error!("{stem}: waiting for detector failed: {e}");
            kill_group(&mut child);
            let _ = fs::remove_file(&tmp_out);
            return finish(Outcome::Crashed, None, None);
        }
    };
    if let Some(sig) = status.signal() {
        let _ = fs::remove_file(&tmp_out);
        log::warn!("{stem}: detector killed by signal {sig}");
        return finish(Outcome::Crashed, None, None);
    }
    let code = status.code();
    // A shell wrapping the detector reports a signal death as 128 + n.
    if let Some(c @ 129..=192) = code {
        let _ = fs::remove_file(&tmp_out);
        log::warn!("{stem}: detector killed by signal {}", c - 128);
        return finish(Outcome::Crashed, code, None);
    }
    if code != Some(0) {
        let _ = fs::remove_file(&tmp_out);
        log::warn!("{stem}: detector exited with {code:?}");
        return finish(Outcome::NonzeroExit, code, None);
    }
    if !tmp_out.is_file() {
        log::warn!("{stem}: detector wrote no output");
        return finish(Outcome::MissingOutput, code, None);
    }
    if let Err(e) = annotations::read_events_tsv(&tmp_out, rec.duration_s) {
        log::warn!("{stem}: detector output is unparsable: {e}");
        let _ = fs::remove_file(&tmp_out);
        return finish(Outcome::MissingOutput, code, None);
    }
    let placed = final_out
        .parent()
        .map_or(Ok(()), fs::create_dir_all)
        .and_then(|_| fs::rename(&tmp_out, &final_out));
    match placed {
        Ok(()) => finish(Outcome::Produced, code, Some(final_out)),
        Err(e) => {
            log::error!("{stem}: could not move output into place: {e}");
            let _ = fs::remove_file(&tmp_out);
            finish(Outcome::MissingOutput, code, None)
        }
    }
}

/// Runs the detector over every recording. Records come back in index
/// order regardless of completion order.
pub fn run_dataset(index: &DatasetIndex, cfg: &RunnerConfig) -> Result<Vec<RunRecord>, RunnerError> {
    cfg.validate()?;
    let hyp_root = cfg.hypothesis_root();
    for dir in [cfg.workdir.join("tmp"), cfg.workdir.join("logs"), hyp_root.clone()] {
        fs::create_dir_all(&dir).map_err(|source| RunnerError::Io { path: dir.clone(), source })?;
    }
    for rec in &index.recordings {
        // Stale outputs from an earlier run must not count as produced.
        let _ = fs::remove_file(rec.events_path_under(&hyp_root));
    }
    let started = Instant::now();
    let n = index.recordings.len();
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let results: Mutex<Vec<Option<RunRecord>>> = Mutex::new(vec![None; n]);
    let workers = cfg.max_concurrency.min(n.max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let rec = &index.recordings[i];
                let record = if abort.load(Ordering::SeqCst) {
                    RunRecord {
                        recording: rec.clone(),
                        outcome: Outcome::Skipped,
                        wall_time_s: 0.0,
                        output_path: None,
                        exit_code: None,
                    }
                } else {
                    let r = run_one(i, rec, cfg);
                    if r.outcome != Outcome::Produced && !cfg.continue_on_error {
                        abort.store(true, Ordering::SeqCst);
                    }
                    r
                };
                results.lock().expect("results lock")[i] = Some(record);
            });
        }
    });
    let records: Vec<RunRecord> = results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|r| r.expect("every job records a result"))
        .collect();
    log::info!(
        "ran detector on {n} recordings in {:.1} s",
        started.elapsed().as_secs_f64()
    );
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileTiming {
    pub recording: String,
    pub outcome: Outcome,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RunSummary {
    pub total: usize,
    pub outcomes: BTreeMap<String, usize>,
    pub failures: Vec<FileTiming>,
    pub total_wall_time_s: f64,
    pub per_file: Vec<FileTiming>,
}

impl RunSummary {
    pub fn produced(&self) -> usize {
        self.outcomes.get(Outcome::Produced.as_str()).copied().unwrap_or(0)
    }
}

pub fn summarize_run(records: &[RunRecord]) -> RunSummary {
    let mut s = RunSummary {
        total: records.len(),
        ..RunSummary::default()
    };
    for r in records {
        *s.outcomes.entry(r.outcome.as_str().to_string()).or_default() += 1;
        s.total_wall_time_s += r.wall_time_s;
        let t = FileTiming {
            recording: r.recording.stem(),
            outcome: r.outcome,
            wall_time_s: r.wall_time_s,
        };
        if r.outcome != Outcome::Produced {
            s.failures.push(t.clone());
        }
        s.per_file.push(t);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_needs_placeholders() {
        let mut cfg = RunnerConfig::new("detect {input}", "/tmp/x");
        assert!(cfg.validate().is_err());
        cfg.command_template = "detect {input} {output}".into();
        assert!(cfg.validate().is_ok());
        cfg.max_concurrency = 0;
        assert!(cfg.validate().is_err());
        cfg.max_concurrency = 1;
        cfg.per_file_timeout_s = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn paths_are_quoted() {
        let cmd = render_command("d {input} -o {output}", Path::new("/a b/it's.edf"), Path::new("/o.tsv"));
        assert_eq!(cmd, r"d '/a b/it'\''s.edf' -o '/o.tsv'");
    }

    fn rec(run: &str) -> RecordingRef {
        RecordingRef {
            subject_id: "01".into(),
            session_id: "01".into(),
            task: "szMonitoring".into(),
            run_id: run.into(),
            eeg_path: PathBuf::from("x.edf"),
            events_path: None,
            duration_s: 60.0,
        }
    }

    fn record(run: &str, outcome: Outcome) -> RunRecord {
        RunRecord {
            recording: rec(run),
            outcome,
            wall_time_s: 0.5,
            output_path: None,
            exit_code: None,
        }
    }

    #[test]
    fn summaries() {
        let s = summarize_run(&[]);
        assert_eq!((s.total, s.produced(), s.failures.len()), (0, 0, 0));
        let all: Vec<RunRecord> = (0..10).map(|i| record(&format!("{i:02}"), Outcome::Produced)).collect();
        let s = summarize_run(&all);
        assert_eq!((s.produced(), s.failures.len()), (10, 0));
        let mixed = vec![
            record("00", Outcome::Produced),
            record("01", Outcome::Timeout),
            record("02", Outcome::NonzeroExit),
            record("03", Outcome::Crashed),
        ];
        let s = summarize_run(&mixed);
        assert_eq!(s.outcomes.values().sum::<usize>(), 4);
        assert_eq!(s.failures.len(), 3);
        assert!((s.total_wall_time_s - 2.0).abs() < 1e-12);
    }
}
