//! Paired OCP/baseline sweeps over one configuration axis.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use clap::{Args, ValueEnum};
use ocp_core::diagnostics::DEFAULT_QUANTILE;
use ocp_core::synth::DEFAULT_HOLDOUT;
use ocp_core::{hit_at_k, stratified_se, trainer, InteractionLog, ProjectionMode, TrainConfig};

use crate::commands::{dataset_spec, load_config, HIT_KS};
use crate::error::CliError;

pub const SWEEP_HEADER: &str = "axis,value,seed,mode,final_loss,se_all,se_bottom,se_top,\
                                hit1,hit5,hit10,effective_vocab,error";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    /// Item vocabulary size; one log is generated per value.
    Vocab,
    /// Projected dimension D′.
    Dim,
    /// Vocabulary access threshold.
    Threshold,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Vocab => "vocab",
            Axis::Dim => "dim",
            Axis::Threshold => "threshold",
        }
    }

    fn apply(self, config: &mut TrainConfig, value: u64) -> Result<(), String> {
        let as_usize = || usize::try_from(value).map_err(|_| format!("value {value} too large"));
        match self {
            Axis::Vocab => config.v = as_usize()?,
            Axis::Dim => config.d_prime = as_usize()?,
            Axis::Threshold => config.access_threshold = value,
        }
        Ok(())
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub axis: Axis,
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Interaction log for the dim and threshold axes.
    #[arg(long, required_unless_present = "generate_logs")]
    pub log: Option<PathBuf>,
    /// Generate one log per value (vocab axis) instead of reading --log.
    #[arg(long, default_value_t = false)]
    pub generate_logs: bool,
    #[arg(long, default_value_t = 1.2)]
    pub zipf_s: f64,
    #[arg(long, default_value_t = 2_000_000)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    #[arg(long, default_value_t = 16)]
    pub rank: usize,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long, default_value_t = DEFAULT_QUANTILE)]
    pub quantile: f64,
    #[arg(long, default_value_t = DEFAULT_HOLDOUT)]
    pub holdout: usize,
    /// Concurrent training runs.
    #[arg(long, env = "OCP_LAB_JOBS")]
    pub jobs: Option<usize>,
}

impl SweepArgs {
    pub fn new(axis: Axis, values: Vec<u64>, seeds: Vec<u64>, out: PathBuf) -> Self {
        SweepArgs {
            axis,
            values,
            config: None,
            seeds,
            out,
            log: None,
            generate_logs: false,
            zipf_s: 1.2,
            pairs: 2_000_000,
            data_seed: 0,
            rank: 16,
            tau: 1.0,
            quantile: DEFAULT_QUANTILE,
            holdout: DEFAULT_HOLDOUT,
            jobs: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunMetrics {
    pub final_loss: f64,
    pub se_all: f64,
    pub se_bottom: f64,
    pub se_top: f64,
    pub hit1: f64,
    pub hit5: f64,
    pub hit10: f64,
    pub effective_vocab: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub axis: Axis,
    pub value: u64,
    pub seed: u64,
    pub mode: ProjectionMode,
    pub outcome: Result<RunMetrics, String>,
}

impl SweepRow {
    pub fn metrics(&self) -> Option<&RunMetrics> {
        self.outcome.as_ref().ok()
    }

    fn csv_line(&self) -> String {
        let mut line = format!("{},{},{},{}", self.axis, self.value, self.seed, self.mode);
        match &self.outcome {
            Ok(m) => {
                let _ = write!(
                    line,
                    ",{},{},{},{},{},{},{},{},",
                    m.final_loss,
                    m.se_all,
                    m.se_bottom,
                    m.se_top,
                    m.hit1,
                    m.hit5,
                    m.hit10,
                    m.effective_vocab
                );
            }
            Err(e) => {
                let _ = write!(line, ",,,,,,,,,{}", csv_escape(e));
            }
        }
        line
    }
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\"").replace('\n', " "))
    } else {
        s.to_string()
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.csv_line());
        out.push('\n');
    }
    out
}

/// Parses the rows written by [`sweep_csv`].
pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(SWEEP_HEADER) {
        return Err("missing sweep header".into());
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = |what: &str| format!("row {}: bad {what}", i + 1);
            let fields: Vec<&str> = line.splitn(13, ',').collect();
            if fields.len() != 13 {
                return Err(bad("field count"));
            }
            let axis = Axis::from_str(fields[0], true).map_err(|_| bad("axis"))?;
            let value = fields[1].parse().map_err(|_| bad("value"))?;
            let seed = fields[2].parse().map_err(|_| bad("seed"))?;
            let mode = ProjectionMode::from_str(fields[3]).map_err(|_| bad("mode"))?;
            let outcome = if fields[4].is_empty() {
                Err(fields[12].trim_matches('"').to_string())
            } else {
                let f = |j: usize| fields[j].parse::<f64>().map_err(|_| bad("number"));
                Ok(RunMetrics {
                    final_loss: f(4)?,
                    se_all: f(5)?,
                    se_bottom: f(6)?,
                    se_top: f(7)?,
                    hit1: f(8)?,
                    hit5: f(9)?,
                    hit10: f(10)?,
                    effective_vocab: fields[11].parse().map_err(|_| bad("effective_vocab"))?,
                })
            };
            Ok(SweepRow {
                axis,
                value,
                seed,
                mode,
                outcome,
            })
        })
        .collect()
}

struct Job {
    value: u64,
    seed: u64,
    mode: ProjectionMode,
    log: usize,
}

fn run_dir(out: &Path, job: &Job, axis: Axis) -> PathBuf {
    out.join("runs")
        .join(format!("{axis}-{}", job.value))
        .join(format!("seed-{}", job.seed))
        .join(job.mode.as_str())
}

fn run_one(
    args: &SweepArgs,
    base: &TrainConfig,
    job: &Job,
    log: &InteractionLog,
) -> Result<RunMetrics, String> {
    let mut config = base.clone();
    args.axis.apply(&mut config, job.value)?;
    config.seed = job.seed;
    config.mode = job.mode;

    let (train_log, eval) = log.split_holdout(args.holdout);
    let outcome = trainer::train(&config, &train_log).map_err(|e| e.to_string())?;
    let state = &outcome.state;
    let strata = stratified_se(state.table.matrix(), &state.counts, args.quantile)
        .map_err(|e| e.to_string())?;
    let hits = hit_at_k(state, &eval, &HIT_KS, &outcome.vocab_map).map_err(|e| e.to_string())?;

    let dir = run_dir(&args.out, job, args.axis);
    fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let loss_csv = dir.join("loss.csv");
    fs::write(&loss_csv, outcome.curve.to_csv())
        .map_err(|e| format!("{}: {e}", loss_csv.display()))?;

    let hit = |k| hits.at(k).unwrap_or(f64::NAN);
    Ok(RunMetrics {
        final_loss: outcome.curve.final_loss().unwrap_or(f64::NAN),
        se_all: strata.se_all,
        se_bottom: strata.se_bottom,
        se_top: strata.se_top,
        hit1: hit(1),
        hit5: hit(5),
        hit10: hit(10),
        effective_vocab: outcome.vocab_map.size(),
    })
}

fn prepare_logs(args: &SweepArgs) -> Result<Vec<Result<InteractionLog, String>>, CliError> {
    if args.generate_logs {
        if args.axis != Axis::Vocab {
            return Err(CliError::Usage(
                "--generate-logs requires --axis vocab".into(),
            ));
        }
        let data_dir = args.out.join("data");
        fs::create_dir_all(&data_dir).map_err(|e| CliError::io(&data_dir, e))?;
        let mut logs = Vec::with_capacity(args.values.len());
        for &value in &args.values {
            let vocab = usize::try_from(value)
                .map_err(|_| CliError::Usage(format!("vocabulary {value} too large")))?;
            let spec = dataset_spec(
                vocab,
                args.zipf_s,
                args.pairs,
                args.data_seed,
                args.rank,
                args.tau,
            )?;
            let log = spec.generate().and_then(|log| {
                log.save(&data_dir.join(format!("vocab-{value}.ocpl")))?;
                Ok(log)
            });
            logs.push(log.map_err(|e| e.to_string()));
        }
        Ok(logs)
    } else {
        let path = args
            .log
            .as_deref()
            .ok_or_else(|| CliError::Usage("--log is required".into()))?;
        Ok(vec![Ok(InteractionLog::load(path)?)])
    }
}

pub fn default_jobs() -> usize {
    thread::available_parallelism().map_or(1, |n| n.get())
}

/// Runs the sweep, writes `sweep.csv` under `--out` and returns the sorted rows.
pub fn run(args: &SweepArgs) -> Result<Vec<SweepRow>, CliError> {
    if args.values.is_empty() || args.seeds.is_empty() {
        return Err(CliError::Usage(
            "--values and --seeds must be non-empty".into(),
        ));
    }
    if !(args.quantile > 0.0 && args.quantile < 1.0) {
        return Err(CliError::Usage(format!(
            "--quantile must be in (0, 1), got {}",
            args.quantile
        )));
    }
    let jobs_limit = args.jobs.unwrap_or_else(default_jobs);
    if jobs_limit == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let base = load_config(args.config.as_deref())?;
    fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    let logs = prepare_logs(args)?;

    let mut jobs = Vec::new();
    for (i, &value) in args.values.iter().enumerate() {
        for &seed in &args.seeds {
            for mode in [ProjectionMode::Baseline, ProjectionMode::Ocp] {
                let log = if args.generate_logs { i } else { 0 };
                jobs.push(Job {
                    value,
                    seed,
                    mode,
                    log,
                });
            }
        }
    }

    let next = AtomicUsize::new(0);
    let rows = Mutex::new(Vec::with_capacity(jobs.len()));
    thread::scope(|scope| {
        for _ in 0..jobs_limit.min(jobs.len()) {
            scope.spawn(|| {
                while let Some(job) = jobs.get(next.fetch_add(1, Ordering::Relaxed)) {
                    let outcome = match &logs[job.log] {
                        Ok(log) => run_one(args, &base, job, log),
                        Err(e) => Err(format!("data generation failed: {e}")),
                    };
                    let row = SweepRow {
                        axis: args.axis,
                        value: job.value,
                        seed: job.seed,
                        mode: job.mode,
                        outcome,
                    };
                    rows.lock().unwrap().push(row);
                }
            });
        }
    });

    let mut rows = rows.into_inner().unwrap();
    rows.sort_by(|a, b| {
        (a.value, a.seed, a.mode.as_str()).cmp(&(b.value, b.seed, b.mode.as_str()))
    });
    let path = args.out.join("sweep.csv");
    fs::write(&path, sweep_csv(&rows)).map_err(|e| CliError::io(&path, e))?;
    Ok(rows)
}
