use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use szbench::aggregate::{self, LeaderboardEntry};
use szbench::annotations::{self, DatasetIndex, EventList, HypothesisStatus, RecordingKey, RecordingRef};
use szbench::baseline::{self, BaselineConfig};
use szbench::report::{self, LeaderboardReport};
use szbench::runner::{self, RunnerConfig};
use szbench::standardize::{self, ChannelMap, StandardizeConfig};
use szbench::{edf, ScoringParams};

/// Exit status when validation or conversion reports findings.
const EXIT_FINDINGS: u8 = 1;
/// Exit status for internal and I/O errors. Usage errors exit with 2.
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "szbench", version, about = "Benchmark seizure-detection algorithms on long-term EEG")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a dataset and, optionally, a hypothesis tree against it.
    Validate {
        #[arg(long)]
        dataset: PathBuf,
        /// Hypothesis tree, as PATH or NAME=PATH.
        #[arg(long)]
        hypothesis: Vec<String>,
    },
    /// Convert a directory of EDF recordings into a standardized dataset.
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// TOML file with target_fs, task, jobs, [resampler] and [aliases].
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run the band-power baseline detector on one EDF file.
    Detect {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// TOML file with detector settings.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score hypothesis trees against a dataset and write the leaderboard.
    Score {
        #[arg(long)]
        dataset: PathBuf,
        /// Hypothesis tree as NAME=PATH; repeat for several algorithms.
        #[arg(long, required = true)]
        hypothesis: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        scoring: ScoringArgs,
        #[command(flatten)]
        output: OutputArgs,
        /// CSV with columns algorithm,self_reported_f1 (fractions).
        #[arg(long)]
        self_reported: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run an external detector over every recording of a dataset.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        /// Shell command with {input} and {output} placeholders.
        #[arg(long)]
        command: String,
        /// Working directory; hypotheses land in OUT/hypotheses.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Per-file timeout in seconds.
        #[arg(long, default_value_t = runner::DEFAULT_TIMEOUT_S)]
        timeout: f64,
        /// Stop launching new jobs after the first failure.
        #[arg(long)]
        fail_fast: bool,
    },
    /// Render reports from a leaderboard.json written by `score`.
    Report {
        #[arg(long)]
        leaderboard: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        self_reported: Option<PathBuf>,
        #[arg(long, default_value_t = report::DEFAULT_PRECISION)]
        precision: usize,
    },
}

#[derive(Args, Debug)]
struct ScoringArgs {
    /// TOML file with scoring parameters; flags below override it.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    preictal: Option<f64>,
    #[arg(long)]
    postictal: Option<f64>,
    #[arg(long)]
    merge_gap: Option<f64>,
    #[arg(long)]
    max_event: Option<f64>,
    #[arg(long)]
    sample_period: Option<f64>,
    #[arg(long)]
    min_overlap: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
    Markdown,
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// Output formats; all when omitted.
    #[arg(long, value_enum, value_delimiter = ',')]
    format: Vec<Format>,
    /// Decimal places for percentages and FP/day.
    #[arg(long, default_value_t = report::DEFAULT_PRECISION)]
    precision: usize,
}

impl OutputArgs {
    fn wants(&self, f: Format) -> bool {
        self.format.is_empty() || self.format.contains(&f)
    }
}

impl ScoringArgs {
    fn resolve(&self) -> Result<ScoringParams> {
        let mut p = match &self.params {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => ScoringParams::default(),
        };
        let overrides = [
            (self.preictal, &mut p.preictal_tolerance_s),
            (self.postictal, &mut p.postictal_tolerance_s),
            (self.merge_gap, &mut p.merge_gap_s),
            (self.max_event, &mut p.max_event_s),
            (self.sample_period, &mut p.sample_period_s),
            (self.min_overlap, &mut p.min_overlap_s),
        ];
        for (value, slot) in overrides {
            if let Some(v) = value {
                *slot = v;
            }
        }
        p.validate()?;
        Ok(p)
    }
}

/// Parses `NAME=PATH`, or a bare `PATH` named after its last component.
fn parse_named(spec: &str) -> Result<(String, PathBuf)> {
    if let Some((name, path)) = spec.split_once('=') {
        if name.is_empty() || path.is_empty() {
            bail!("expected NAME=PATH, got {spec:?}");
        }
        return Ok((name.to_string(), PathBuf::from(path)));
    }
    let path = PathBuf::from(spec);
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .with_context(|| format!("cannot derive a name from {spec:?}; use NAME=PATH"))?;
    Ok((name, path))
}

fn parse_hypotheses(specs: &[String]) -> Result<Vec<(String, PathBuf)>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for s in specs {
        let (name, path) = parse_named(s)?;
        if !seen.insert(name.clone()) {
            bail!("algorithm name {name:?} given more than once");
        }
        if !path.is_dir() {
            bail!("hypothesis tree {} is not a directory", path.display());
        }
        out.push((name, path));
    }
    Ok(out)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn configure_jobs(jobs: Option<usize>) -> Result<()> {
    if let Some(n) = jobs {
        if n == 0 {
            bail!("--jobs must be at least 1");
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn index(root: &Path) -> Result<DatasetIndex> {
    annotations::index_dataset(root).with_context(|| format!("indexing {}", root.display()))
}

#[derive(Debug, Serialize)]
struct Finding {
    kind: &'static str,
    path: PathBuf,
    line: Option<usize>,
    message: String,
}

#[derive(Debug, Serialize)]
struct ValidateOutput {
    recordings: usize,
    ok: bool,
    findings: Vec<Finding>,
}

fn cmd_validate(dataset: &Path, hypotheses: &[String]) -> Result<u8> {
    let idx = index(dataset)?;
    let mut findings: Vec<Finding> = idx
        .errors
        .iter()
        .map(|e| Finding {
            kind: "dataset",
            path: e.path.clone(),
            line: None,
            message: e.message.clone(),
        })
        .collect();
    if idx.is_empty() {
        findings.push(Finding {
            kind: "dataset",
            path: dataset.to_path_buf(),
            line: None,
            message: "no recordings found".into(),
        });
    }
    for rec in &idx.recordings {
        match &rec.events_path {
            None => findings.push(Finding {
                kind: "reference",
                path: rec.events_path_under(&idx.root),
                line: None,
                message: "annotation file missing".into(),
            }),
            Some(path) => {
                if let Err(e) = annotations::load_reference(rec) {
                    findings.push(Finding {
                        kind: "reference",
                        path: path.clone(),
                        line: e.line(),
                        message: e.to_string(),
                    });
                }
            }
        }
    }
    for (_, root) in parse_hypotheses(hypotheses)? {
        let report = annotations::validate_hypothesis_tree(&root, &idx);
        for entry in report.findings() {
            let (line, message) = match &entry.status {
                HypothesisStatus::Missing => (None, "hypothesis file missing".to_string()),
                HypothesisStatus::Unparsable { message, line } => (*line, message.clone()),
                HypothesisStatus::Found => unreachable!("findings exclude found files"),
            };
            findings.push(Finding {
                kind: "hypothesis",
                path: entry.path.clone(),
                line,
                message,
            });
        }
    }
    let out = ValidateOutput {
        recordings: idx.recordings.len(),
        ok: findings.is_empty(),
        findings,
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(if out.ok { 0 } else { EXIT_FINDINGS })
}

fn cmd_convert(input: &Path, out: &Path, config: Option<&Path>, jobs: Option<usize>) -> Result<u8> {
    let (mut cfg, map) = match config {
        Some(p) => standardize::load_config(p)?,
        None => (StandardizeConfig::default(), ChannelMap::default()),
    };
    if let Some(j) = jobs {
        cfg.jobs = j;
    }
    let report = standardize::standardize_dataset(input, out, &cfg, &map)?;
    write_json(&out.join("conversion_report.json"), &report)?;
    for f in &report.failed {
        log::error!("{}: {}", f.source.display(), f.message);
    }
    println!("converted {} recordings, {} failed", report.converted.len(), report.failed.len());
    Ok(if report.failed.is_empty() { 0 } else { EXIT_FINDINGS })
}

fn cmd_detect(input: &Path, output: &Path, config: Option<&Path>) -> Result<u8> {
    let cfg: BaselineConfig = match config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => BaselineConfig::default(),
    };
    let (_, signals) = edf::read_edf(input).with_context(|| format!("reading {}", input.display()))?;
    let events = baseline::detect(&signals, &cfg)?;
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    annotations::write_events_tsv(&events, output)?;
    log::info!("{}: {} events", input.display(), events.len());
    Ok(0)
}

fn load_references(idx: &DatasetIndex) -> Result<Vec<(RecordingRef, EventList)>> {
    idx.recordings
        .iter()
        .map(|rec| {
            let list = annotations::load_reference(rec).with_context(|| format!("reference for {}", rec.stem()))?;
            Ok((rec.clone(), list))
        })
        .collect()
}

fn load_tree(idx: &DatasetIndex, name: &str, root: &Path) -> BTreeMap<RecordingKey, EventList> {
    let mut out = BTreeMap::new();
    let (mut missing, mut bad) = (0, 0);
    for rec in &idx.recordings {
        let (list, status) = annotations::load_hypothesis(root, rec);
        match status {
            HypothesisStatus::Found => {}
            HypothesisStatus::Missing => missing += 1,
            HypothesisStatus::Unparsable { message, .. } => {
                bad += 1;
                log::warn!("{name}: {message}; scored as no seizures");
            }
        }
        out.insert(rec.key(), list);
    }
    if missing > 0 || bad > 0 {
        log::warn!("{name}: {missing} missing and {bad} unparsable hypothesis files scored as no seizures");
    }
    out
}

fn read_self_reported(path: &Path) -> Result<BTreeMap<String, Option<f64>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(report::parse_self_reported(&text)?)
}

fn write_comparison(
    lb: &LeaderboardReport,
    table: &BTreeMap<String, Option<f64>>,
    out: &Path,
) -> Result<Vec<report::ComparisonRow>> {
    let rows = report::join_self_reported(lb, table);
    if !rows.is_empty() {
        write_file(&out.join("self_reported.csv"), &report::comparison_csv(&rows, &lb.params)?)?;
    }
    Ok(rows)
}

#[allow(clippy::too_many_arguments)]
fn cmd_score(
    dataset: &Path,
    hypotheses: &[String],
    out: &Path,
    scoring: &ScoringArgs,
    output: &OutputArgs,
    self_reported: Option<&Path>,
    jobs: Option<usize>,
) -> Result<u8> {
    configure_jobs(jobs)?;
    let params = scoring.resolve()?;
    let trees = parse_hypotheses(hypotheses)?;
    let idx = index(dataset)?;
    if idx.is_empty() {
        bail!("no recordings found under {}", dataset.display());
    }
    let references = load_references(&idx)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let loaded: Vec<(String, BTreeMap<RecordingKey, EventList>)> =
        trees.iter().map(|(name, root)| (name.clone(), load_tree(&idx, name, root))).collect();
    let mut entries = Vec::new();
    for (name, hyps) in &loaded {
        let (dataset_score, _) = aggregate::score_algorithm(&references, hyps, &params)?;
        entries.push(LeaderboardEntry {
            algorithm_name: name.clone(),
            dataset_score,
            self_reported_f1: None,
        });
    }
    let mut lb = LeaderboardReport {
        params,
        entries: aggregate::rank(entries)?,
    };
    let table = self_reported.map(read_self_reported).transpose()?;
    if let Some(t) = &table {
        report::attach_self_reported(&mut lb, t);
    }
    let p = output.precision;
    if output.wants(Format::Json) {
        write_file(&out.join("leaderboard.json"), &lb.to_json()?)?;
    }
    if output.wants(Format::Csv) {
        write_file(&out.join("leaderboard.csv"), &report::leaderboard_csv(&lb, p)?)?;
        write_file(&out.join("per_subject.csv"), &report::per_subject_csv(&lb)?)?;
        write_file(&out.join("scatter.csv"), &report::scatter_csv(&lb)?)?;
    }
    let comparison = match &table {
        Some(t) => write_comparison(&lb, t, out)?,
        None => Vec::new(),
    };
    if output.wants(Format::Markdown) {
        write_file(&out.join("leaderboard.md"), &report::render_markdown_report(&lb, &comparison, p))?;
    }
    if loaded.len() >= 2 {
        let refs: BTreeMap<RecordingKey, EventList> =
            references.iter().map(|(r, l)| (r.key(), l.clone())).collect();
        let agreement = aggregate::agreement(&refs, &loaded, &params)?;
        if output.wants(Format::Csv) {
            write_file(&out.join("agreement.csv"), &report::agreement_csv(&agreement, &params)?)?;
        }
        if output.wants(Format::Json) {
            write_json(&out.join("agreement.json"), &agreement)?;
        }
    }
    print!("{}", report::leaderboard_markdown(&lb, p));
    Ok(0)
}

fn cmd_run(dataset: &Path, command: &str, out: &Path, jobs: usize, timeout: f64, fail_fast: bool) -> Result<u8> {
    let idx = index(dataset)?;
    let cfg = RunnerConfig {
        command_template: command.to_string(),
        max_concurrency: jobs,
        per_file_timeout_s: timeout,
        workdir: out.to_path_buf(),
        continue_on_error: !fail_fast,
    };
    let records = runner::run_dataset(&idx, &cfg)?;
    let summary = runner::summarize_run(&records);
    write_json(&out.join("run_summary.json"), &summary)?;
    println!(
        "{} recordings: {}; hypotheses in {}",
        summary.total,
        summary
            .outcomes
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(", "),
        cfg.hypothesis_root().display()
    );
    Ok(0)
}

fn cmd_report(leaderboard: &Path, out: &Path, self_reported: Option<&Path>, precision: usize) -> Result<u8> {
    let text = fs::read_to_string(leaderboard).with_context(|| format!("reading {}", leaderboard.display()))?;
    let mut lb = LeaderboardReport::from_json(&text)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let comparison = match self_reported {
        Some(p) => {
            let t = read_self_reported(p)?;
            report::attach_self_reported(&mut lb, &t);
            write_comparison(&lb, &t, out)?
        }
        None => Vec::new(),
    };
    write_file(&out.join("report.md"), &report::render_markdown_report(&lb, &comparison, precision))?;
    write_file(&out.join("leaderboard.csv"), &report::leaderboard_csv(&lb, precision)?)?;
    write_file(&out.join("scatter.csv"), &report::scatter_csv(&lb)?)?;
    Ok(0)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Validate { dataset, hypothesis } => cmd_validate(&dataset, &hypothesis),
        Command::Convert { input, out, config, jobs } => cmd_convert(&input, &out, config.as_deref(), jobs),
        Command::Detect { input, output, config } => cmd_detect(&input, &output, config.as_deref()),
        Command::Score {
            dataset,
            hypothesis,
            out,
            scoring,
            output,
            self_reported,
            jobs,
        } => cmd_score(&dataset, &hypothesis, &out, &scoring, &output, self_reported.as_deref(), jobs),
        Command::Run {
            dataset,
            command,
            out,
            jobs,
            timeout,
            fail_fast,
        } => cmd_run(&dataset, &command, &out, jobs, timeout, fail_fast),
        Command::Report {
            leaderboard,
            out,
            self_reported,
            precision,
        } => cmd_report(&leaderboard, &out, self_reported.as_deref(), precision),
    }
}

/// Error chain on one line, skipping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(EXIT_INTERNAL)
        }
    }
}
