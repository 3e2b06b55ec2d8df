//! Experiment plans, run orchestration, and results files.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run_seed, SeededStreams};
use crate::error::{ConfigError, PlanError, ResultsError, SimError};
use crate::metrics::MetricsSample;
use crate::sensors::DetectionMode;
use crate::simulation::{simulate, NoopObserver, Observer, RunConfig, Strategy};
use crate::world::{RateSpec, WorldConfig};
use crate::SimTime;

/// Request levels by grid row.
pub const TABLE1_REQUESTS: [u32; 3] = [1, 50, 100];
/// Change levels by grid column.
pub const TABLE1_CHANGES: [u32; 3] = [1, 5, 10];

pub const SUMMARY_FILE: &str = "summary.csv";
pub const RUN_CSV_HEADER: &str = "t,freshness_pct,bytes_cumulative";
pub const SUMMARY_HEADER: &str = "series,strategy,mean_freshness_last_half,final_bytes_mean,final_gb_mean,final_bytes_min,final_bytes_max,runs";

const BYTES_PER_GB: f64 = (1u64 << 30) as f64;

/// One cell of the rate grid, labelled `[row-col]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Series {
    pub label: String,
    pub changes: u32,
    pub requests: u32,
}

impl Series {
    pub fn rates(&self) -> RateSpec {
        RateSpec::new(self.changes, self.requests)
    }

    /// `(row, col)` parsed from the label.
    pub fn cell(&self) -> Option<(u32, u32)> {
        parse_label(&self.label)
    }
}

pub fn series_label(row: u32, col: u32) -> String {
    format!("[{row}-{col}]")
}

fn parse_label(label: &str) -> Option<(u32, u32)> {
    let inner = label.strip_prefix('[')?.strip_suffix(']')?;
    let (r, c) = inner.split_once('-')?;
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if !digits(r) || !digits(c) {
        return None;
    }
    Some((r.parse().ok()?, c.parse().ok()?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

impl Preset {
    pub fn world(self) -> WorldConfig {
        match self {
            Preset::Desk => WorldConfig::desk(),
            Preset::Paper => WorldConfig::paper(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub series: Vec<Series>,
    pub runs_per_series: u32,
    pub base_seed: u64,
    pub world: WorldConfig,
    pub strategies: Vec<Strategy>,
    #[serde(default)]
    pub detection_mode: DetectionMode,
    #[serde(default = "default_warm_start")]
    pub warm_start: bool,
}

fn default_warm_start() -> bool {
    true
}

pub const DEFAULT_SEED: u64 = 20_030_101;

/// The 3x3 grid: row selects the request rate, column the change rate,
/// three runs per cell, both strategies.
pub fn table1_plan(world: WorldConfig) -> ExperimentPlan {
    let mut series = Vec::with_capacity(9);
    for (r, &requests) in TABLE1_REQUESTS.iter().enumerate() {
        for (c, &changes) in TABLE1_CHANGES.iter().enumerate() {
            series.push(Series {
                label: series_label(r as u32 + 1, c as u32 + 1),
                changes,
                requests,
            });
        }
    }
    ExperimentPlan {
        series,
        runs_per_series: 3,
        base_seed: DEFAULT_SEED,
        world,
        strategies: vec![Strategy::Robot, Strategy::Sensors],
        detection_mode: DetectionMode::ChangeTriggered,
        warm_start: true,
    }
}

/// One `(series, run, strategy)` tuple of a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunKey<'a> {
    pub series: &'a Series,
    pub run_index: u32,
    pub strategy: Strategy,
}

impl ExperimentPlan {
    pub fn from_json(text: &str) -> Result<Self, PlanError> {
        let plan: ExperimentPlan = serde_json::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self, PlanError> {
        let text = fs::read_to_string(path).map_err(|source| PlanError::Read {
            path: path.to_owned(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.world.validate()?;
        if self.world.horizon.0 < self.world.measurement_interval {
            return Err(ConfigError::new(
                "world.horizon",
                "must cover at least one measurement interval",
            ));
        }
        if self.series.is_empty() {
            return Err(ConfigError::new("series", "must not be empty"));
        }
        let mut labels = HashSet::new();
        for (i, s) in self.series.iter().enumerate() {
            if s.cell().is_none() {
                return Err(ConfigError::new(
                    format!("series[{i}].label"),
                    format!("`{}` is not of the form [row-col]", s.label),
                ));
            }
            if !labels.insert(s.label.as_str()) {
                return Err(ConfigError::new(
                    format!("series[{i}].label"),
                    format!("duplicate label `{}`", s.label),
                ));
            }
        }
        if self.runs_per_series == 0 {
            return Err(ConfigError::new("runs_per_series", "must be at least 1"));
        }
        if self.strategies.is_empty() {
            return Err(ConfigError::new("strategies", "must not be empty"));
        }
        let unique: HashSet<_> = self.strategies.iter().collect();
        if unique.len() != self.strategies.len() {
            return Err(ConfigError::new("strategies", "contains duplicates"));
        }
        Ok(())
    }

    /// Every run of the plan, ordered by series, run index, then strategy.
    pub fn runs(&self) -> Vec<RunKey<'_>> {
        let mut strategies = self.strategies.clone();
        strategies.sort();
        let mut keys = Vec::new();
        for series in &self.series {
            for run_index in 1..=self.runs_per_series {
                for &strategy in &strategies {
                    keys.push(RunKey {
                        series,
                        run_index,
                        strategy,
                    });
                }
            }
        }
        keys
    }

    pub fn run_config(&self, series: &Series, strategy: Strategy) -> RunConfig {
        RunConfig {
            world: self.world.clone(),
            rates: series.rates(),
            strategy,
            mode: self.detection_mode,
            warm_start: self.warm_start,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub series: String,
    pub run_index: u32,
    pub strategy: Strategy,
    pub samples: Vec<MetricsSample>,
    pub rounds_completed: Option<u64>,
    pub notifications_sent: Option<u64>,
    pub downloads_completed: u64,
    pub seed: u64,
}

impl RunResult {
    pub fn file_name(&self) -> String {
        run_file_name(&self.series, self.run_index, self.strategy)
    }

    pub fn final_bytes(&self) -> u64 {
        self.samples.last().map_or(0, |s| s.bytes_cumulative)
    }

    pub fn view(&self) -> RunView<'_> {
        RunView {
            series: &self.series,
            strategy: self.strategy,
            samples: &self.samples,
        }
    }
}

pub fn run_file_name(label: &str, run_index: u32, strategy: Strategy) -> String {
    let (r, c) = parse_label(label).unwrap_or_else(|| panic!("bad series label {label}"));
    format!("series-{r}-{c}_run{run_index}_{strategy}.csv")
}

pub fn run_simulation(
    plan: &ExperimentPlan,
    series: &Series,
    run_index: u32,
    strategy: Strategy,
) -> Result<RunResult, SimError> {
    run_simulation_observed(plan, series, run_index, strategy, &mut NoopObserver)
}

/// Like [`run_simulation`], reporting every event to `observer`.
pub fn run_simulation_observed(
    plan: &ExperimentPlan,
    series: &Series,
    run_index: u32,
    strategy: Strategy,
    observer: &mut dyn Observer,
) -> Result<RunResult, SimError> {
    let seed = run_seed(plan.base_seed, run_index);
    let outcome = simulate(
        &plan.run_config(series, strategy),
        &SeededStreams { seed },
        observer,
    )?;
    Ok(RunResult {
        series: series.label.clone(),
        run_index,
        strategy,
        samples: outcome.samples,
        rounds_completed: outcome.rounds_completed,
        notifications_sent: outcome.notifications_sent,
        downloads_completed: outcome.downloads_completed,
        seed,
    })
}

/// Runs the whole plan on up to `jobs` threads. The result order is that of
/// [`ExperimentPlan::runs`] whatever the thread count.
pub fn run_plan(plan: &ExperimentPlan, jobs: usize) -> Result<Vec<RunResult>, SimError> {
    plan.validate()?;
    let keys = plan.runs();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| {
        keys.par_iter()
            .map(|k| run_simulation(plan, k.series, k.run_index, k.strategy))
            .collect()
    })
}

pub fn run_csv(samples: &[MetricsSample]) -> String {
    let mut out = String::with_capacity(32 * (samples.len() + 1));
    out.push_str(RUN_CSV_HEADER);
    out.push('\n');
    for s in samples {
        writeln!(out, "{},{:.4},{}", s.t, s.freshness_pct, s.bytes_cumulative).unwrap();
    }
    out
}

/// Writes one CSV per run plus `summary.csv`. On failure every file
/// written by this call is removed again.
pub fn write_results(results: &[RunResult], out_dir: &Path) -> Result<Vec<PathBuf>, ResultsError> {
    let mut written = Vec::new();
    let outcome = write_all(results, out_dir, &mut written);
    if outcome.is_err() {
        for path in &written {
            let _ = fs::remove_file(path);
        }
    }
    outcome.map(|()| written)
}

fn write_all(
    results: &[RunResult],
    out_dir: &Path,
    written: &mut Vec<PathBuf>,
) -> Result<(), ResultsError> {
    fs::create_dir_all(out_dir).map_err(|source| ResultsError::Io {
        path: out_dir.to_owned(),
        source,
    })?;
    let mut ordered: Vec<&RunResult> = results.iter().collect();
    ordered.sort_by_key(|r| r.file_name());
    for result in ordered {
        let path = out_dir.join(result.file_name());
        write_file(&path, &run_csv(&result.samples), written)?;
    }
    let rows = summarize(results.iter().map(RunResult::view));
    write_file(&out_dir.join(SUMMARY_FILE), &summary_csv(&rows), written)
}

fn write_file(path: &Path, contents: &str, written: &mut Vec<PathBuf>) -> Result<(), ResultsError> {
    // record first so a partially written file is cleaned up too
    written.push(path.to_owned());
    fs::write(path, contents).map_err(|source| ResultsError::Io {
        path: path.to_owned(),
        source,
    })
}

/// A run as far as summaries are concerned.
#[derive(Debug, Clone, Copy)]
pub struct RunView<'a> {
    pub series: &'a str,
    pub strategy: Strategy,
    pub samples: &'a [MetricsSample],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub series: String,
    pub strategy: Strategy,
    pub mean_freshness_last_half: f64,
    pub final_bytes_mean: f64,
    pub final_gb_mean: f64,
    pub final_bytes_min: u64,
    pub final_bytes_max: u64,
    pub runs: u32,
}

/// Mean freshness over samples in the second half of the run, i.e. with
/// `t > T/2` where `T` is the last sample time.
pub fn last_half_freshness(samples: &[MetricsSample]) -> Option<f64> {
    let end = samples.last()?.t;
    let tail: Vec<f64> = samples
        .iter()
        .filter(|s| 2 * s.t.0 > end.0)
        .map(|s| s.freshness_pct)
        .collect();
    Some(tail.iter().sum::<f64>() / tail.len() as f64)
}

/// Aggregates runs per `(series, strategy)`, ordered by grid cell then
/// strategy. Runs without samples are skipped.
pub fn summarize<'a>(runs: impl IntoIterator<Item = RunView<'a>>) -> Vec<SummaryRow> {
    type Group = ((u32, u32), String, Strategy);
    let mut groups: BTreeMap<Group, Vec<(f64, u64)>> = BTreeMap::new();
    for run in runs {
        let Some(freshness) = last_half_freshness(run.samples) else {
            continue;
        };
        let final_bytes = run.samples.last().map_or(0, |s| s.bytes_cumulative);
        let cell = parse_label(run.series).unwrap_or((u32::MAX, u32::MAX));
        groups
            .entry((cell, run.series.to_owned(), run.strategy))
            .or_default()
            .push((freshness, final_bytes));
    }
    groups
        .into_iter()
        .map(|((_, series, strategy), runs)| {
            let n = runs.len() as f64;
            let bytes_mean = runs.iter().map(|&(_, b)| b as f64).sum::<f64>() / n;
            SummaryRow {
                series,
                strategy,
                mean_freshness_last_half: runs.iter().map(|&(f, _)| f).sum::<f64>() / n,
                final_bytes_mean: bytes_mean,
                final_gb_mean: bytes_mean / BYTES_PER_GB,
                final_bytes_min: runs.iter().map(|&(_, b)| b).min().unwrap_or(0),
                final_bytes_max: runs.iter().map(|&(_, b)| b).max().unwrap_or(0),
                runs: runs.len() as u32,
            }
        })
        .collect()
}

/// Gb columns are in units of 2^30 bytes.
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    out.push_str(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{:.4},{:.1},{:.6},{},{},{}",
            r.series,
            r.strategy,
            r.mean_freshness_last_half,
            r.final_bytes_mean,
            r.final_gb_mean,
            r.final_bytes_min,
            r.final_bytes_max,
            r.runs
        )
        .unwrap();
    }
    out
}

/// A run CSV read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredRun {
    pub path: PathBuf,
    pub series: String,
    pub run_index: u32,
    pub strategy: Strategy,
    pub samples: Vec<MetricsSample>,
}

impl StoredRun {
    pub fn view(&self) -> RunView<'_> {
        RunView {
            series: &self.series,
            strategy: self.strategy,
            samples: &self.samples,
        }
    }
}

/// Parses `series-<r>-<c>_run<k>_<strategy>.csv`.
pub fn parse_run_file_name(name: &str) -> Option<(String, u32, Strategy)> {
    let stem = name.strip_prefix("series-")?.strip_suffix(".csv")?;
    let mut parts = stem.split('_');
    let cell = parts.next()?;
    let run = parts.next()?.strip_prefix("run")?;
    let strategy: Strategy = parts.next()?.parse().ok()?;
    if parts.next().is_some() {
        return None;
    }
    let (r, c) = cell.split_once('-')?;
    let label = format!("[{r}-{c}]");
    parse_label(&label)?;
    if run.is_empty() || !run.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((label, run.parse().ok()?, strategy))
}

pub fn read_run_csv(path: &Path) -> Result<Vec<MetricsSample>, ResultsError> {
    let malformed = |reason: String| ResultsError::Malformed {
        path: path.to_owned(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|source| ResultsError::Csv {
            path: path.to_owned(),
            source,
        })?;
    let header = reader.headers().map_err(|source| ResultsError::Csv {
        path: path.to_owned(),
        source,
    })?;
    if header.iter().collect::<Vec<_>>().join(",") != RUN_CSV_HEADER {
        return Err(malformed(format!("expected header `{RUN_CSV_HEADER}`")));
    }
    let mut samples = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|source| ResultsError::Csv {
            path: path.to_owned(),
            source,
        })?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let row = line + 2;
        let t: u64 = field(0)
            .parse()
            .map_err(|_| malformed(format!("line {row}: bad t `{}`", field(0))))?;
        let freshness_pct: f64 = field(1)
            .parse()
            .ok()
            .filter(|f: &f64| (0.0..=100.0).contains(f))
            .ok_or_else(|| malformed(format!("line {row}: bad freshness `{}`", field(1))))?;
        let bytes_cumulative: u64 = field(2)
            .parse()
            .map_err(|_| malformed(format!("line {row}: bad bytes `{}`", field(2))))?;
        samples.push(MetricsSample {
            t: SimTime(t),
            freshness_pct,
            bytes_cumulative,
        });
    }
    if samples.is_empty() {
        return Err(malformed("no samples".into()));
    }
    Ok(samples)
}

/// Loads every run CSV in `dir`, ordered by file name. Other files are
/// ignored.
pub fn read_results(dir: &Path) -> Result<Vec<StoredRun>, ResultsError> {
    let io = |source| ResultsError::Io {
        path: dir.to_owned(),
        source,
    };
    let mut found = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let entry = entry.map_err(io)?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(key) = parse_run_file_name(&name) {
            found.push((name, key, entry.path()));
        }
    }
    if found.is_empty() {
        return Err(ResultsError::Empty(dir.to_owned()));
    }
    found.sort_by(|a, b| a.0.cmp(&b.0));
    found
        .into_iter()
        .map(|(_, (series, run_index, strategy), path)| {
            Ok(StoredRun {
                samples: read_run_csv(&path)?,
                path,
                series,
                run_index,
                strategy,
            })
        })
        .collect()
}
