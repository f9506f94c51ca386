//! Noisy-permutation experiments.
//!
//! A source graph `A` is aligned to `A* = P̄AP̄ᵀ` with every edge removed
//! independently with probability `p`. Each trial re-draws the permutation,
//! the edge noise and the minibatch stream from a master seed. Within a trial
//! the draws are shared across noise levels, so higher noise removes a
//! superset of the edges removed at lower noise.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! experiment.json          resolved configuration
//! aggregate.csv            mean / std of accuracy and MNC per noise level
//! runs/p0.05_t0.json       one record per (noise, trial)
//! runs/p0.05_t0.*.csv      per-node, alignment and trace CSVs (diagnostics)
//! run.log                  timestamps and stage timings
//! ```
//!
//! Everything except `run.log` is byte-for-byte reproducible.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval;
use crate::graph::{self, EdgeListFormat, GroundTruthPermutation, SparseGraph};
use crate::pipeline::{self, PipelineConfig, StageTimings};
use crate::seeds::{self, Stage};
use crate::subspace;
use crate::synth::{self, GraphKind};

/// Where the source graph comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSpec {
    EdgeList {
        path: PathBuf,
    },
    Synthetic {
        kind: GraphKind,
        n: usize,
        seed: u64,
    },
}

impl DatasetSpec {
    pub fn load(&self) -> Result<SparseGraph> {
        match self {
            DatasetSpec::EdgeList { path } => graph::load_edge_list(path, EdgeListFormat::Auto),
            DatasetSpec::Synthetic { kind, n, seed } => synth::synth_graph(kind, *n, *seed),
        }
    }
}

impl std::fmt::Display for DatasetSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DatasetSpec::EdgeList { path } => write!(f, "{}", path.display()),
            DatasetSpec::Synthetic { kind, n, seed } => write!(f, "synth:{n}:{seed}:{kind}"),
        }
    }
}

/// `synth:<n>:<seed>:<generator>` selects a synthetic graph; anything else
/// is an edge-list path.
impl FromStr for DatasetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let Some(rest) = s.strip_prefix("synth:") else {
            return Ok(DatasetSpec::EdgeList { path: s.into() });
        };
        let mut parts = rest.splitn(3, ':');
        let bad = || Error::invalid(format!("expected synth:<n>:<seed>:<generator>, got {s:?}"));
        let n = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        let seed = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        let kind = parts.next().ok_or_else(bad)?.parse()?;
        Ok(DatasetSpec::Synthetic { kind, n, seed })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub dataset: DatasetSpec,
    pub noise_levels: Vec<f64>,
    pub trials: usize,
    pub master_seed: u64,
    pub pipeline: PipelineConfig,
    pub output_dir: PathBuf,
    /// Also write per-node, alignment and optimization-trace CSVs.
    pub diagnostics: bool,
    /// Runs executed concurrently.
    pub parallel: usize,
}

pub const DEFAULT_NOISE_LEVELS: [f64; 5] = [0.05, 0.10, 0.15, 0.20, 0.25];

impl ExperimentSpec {
    pub fn new(dataset: DatasetSpec, output_dir: impl Into<PathBuf>) -> Self {
        ExperimentSpec {
            dataset,
            noise_levels: DEFAULT_NOISE_LEVELS.to_vec(),
            trials: 5,
            master_seed: 0,
            pipeline: PipelineConfig::default(),
            output_dir: output_dir.into(),
            diagnostics: false,
            parallel: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        if self.noise_levels.is_empty() {
            return Err(Error::invalid("no noise levels given"));
        }
        if let Some(p) = self.noise_levels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid(format!("noise level {p} not in [0, 1]")));
        }
        Ok(())
    }
}

/// Outcome of one (noise, trial) run. Contains no wall-clock data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub noise: f64,
    pub trial: usize,
    pub nodes: usize,
    pub source_edges: usize,
    pub target_edges: usize,
    pub accuracy: Option<f64>,
    pub mean_mnc: Option<f64>,
    pub undefined_mnc: Option<usize>,
    pub mean_mnc_correct: Option<f64>,
    pub mean_mnc_incorrect: Option<f64>,
    /// Per degree bucket: (nodes, mean MNC of correct, mean MNC of incorrect).
    pub degree_buckets: Vec<(usize, Option<f64>, Option<f64>)>,
    pub init_objective: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub noise: f64,
    pub runs: usize,
    pub failed: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub mnc_mean: f64,
    pub mnc_std: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub runs: Vec<RunRecord>,
    pub aggregate: Vec<AggregateRow>,
    pub timings: Vec<(f64, usize, StageTimings)>,
    pub total_time: Duration,
}

impl ExperimentResult {
    pub fn aggregate_for(&self, noise: f64) -> Option<&AggregateRow> {
        self.aggregate.iter().find(|r| r.noise == noise)
    }
}

fn run_file_stem(noise: f64, trial: usize) -> String {
    format!("p{noise:.2}_t{trial}")
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

struct RunOutput {
    record: RunRecord,
    timings: StageTimings,
    files: Vec<(String, Vec<u8>)>,
}

fn single_run(
    source: &SparseGraph,
    spec: &ExperimentSpec,
    cfg: &PipelineConfig,
    noise: f64,
    trial: usize,
) -> RunOutput {
    let t = trial as u64;
    let truth = GroundTruthPermutation::random(
        source.n(),
        seeds::stage_seed(spec.master_seed, t, Stage::Permutation),
    );
    let mut record = RunRecord {
        noise,
        trial,
        nodes: source.n(),
        source_edges: source.num_edges(),
        target_edges: 0,
        accuracy: None,
        mean_mnc: None,
        undefined_mnc: None,
        mean_mnc_correct: None,
        mean_mnc_incorrect: None,
        degree_buckets: Vec::new(),
        init_objective: Vec::new(),
        error: None,
    };
    let mut files = Vec::new();
    let mut timings = StageTimings::default();
    let outcome = (|| -> Result<()> {
        let permuted = graph::permute_graph(source, &truth)?;
        let target = graph::drop_edges(
            &permuted,
            noise,
            seeds::stage_seed(spec.master_seed, t, Stage::Noise),
        )?;
        record.target_edges = target.num_edges();
        let mut cfg = cfg.clone();
        cfg.subspace.seed = seeds::stage_seed(spec.master_seed, t, Stage::Minibatch);
        let out = pipeline::align_graphs(source, &target, &cfg)?;
        timings = out.timings;
        let report = eval::evaluate(source, &target, &out.alignment, &truth)?;
        record.accuracy = Some(report.accuracy);
        record.mean_mnc = report.mean_mnc;
        record.undefined_mnc = Some(report.undefined_mnc);
        record.mean_mnc_correct = report.mean_mnc_where(true);
        record.mean_mnc_incorrect = report.mean_mnc_where(false);
        record.degree_buckets = report
            .degree_groups
            .buckets
            .iter()
            .map(|b| (b.nodes, b.mean_correct(), b.mean_incorrect()))
            .collect();
        record.init_objective = out.subspace.init_objective.clone();
        if spec.diagnostics {
            let stem = run_file_stem(noise, trial);
            let mut buf = Vec::new();
            report.write_per_node_csv(&mut buf)?;
            files.push((format!("{stem}.nodes.csv"), buf));
            let mut buf = Vec::new();
            out.alignment.write_csv(&mut buf)?;
            files.push((format!("{stem}.alignment.csv"), buf));
            let mut buf = Vec::new();
            subspace::write_trace_csv(&mut buf, &out.subspace.trace)?;
            files.push((format!("{stem}.trace.csv"), buf));
            let mut buf = Vec::new();
            truth.write_csv(&mut buf)?;
            files.push((format!("{stem}.truth.csv"), buf));
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        log::error!("run p={noise} trial={trial} failed: {e}");
        record.error = Some(e.to_string());
    }
    RunOutput {
        record,
        timings,
        files,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Run every (noise level, trial) combination and write results under
/// `spec.output_dir`. Failed runs are recorded and do not stop the others.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let started = std::time::Instant::now();
    let wall_start = SystemTime::now();
    let source = spec.dataset.load()?;
    let cfg = spec.pipeline.clone().fit(source.n());
    cfg.embed.validate(source.n())?;
    cfg.subspace.validate(source.n())?;

    let runs_dir = spec.output_dir.join("runs");
    fs::create_dir_all(&runs_dir).map_err(|e| Error::io(&runs_dir, e))?;
    let mut resolved = spec.clone();
    resolved.pipeline = cfg.clone();
    resolved.output_dir = PathBuf::new();
    resolved.parallel = 0;
    write_file(
        &spec.output_dir.join("experiment.json"),
        serde_json::to_string_pretty(&resolved)?.as_bytes(),
    )?;

    let jobs: Vec<(f64, usize)> = spec
        .noise_levels
        .iter()
        .flat_map(|&p| (0..spec.trials).map(move |t| (p, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.parallel.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let outputs: Vec<RunOutput> = pool.install(|| {
        jobs.par_iter()
            .map(|&(p, t)| single_run(&source, spec, &cfg, p, t))
            .collect()
    });

    let mut log = String::new();
    let since_epoch = |t: SystemTime| {
        t.duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0)
    };
    let _ = writeln!(log, "started_unix={:.3}", since_epoch(wall_start));
    let _ = writeln!(
        log,
        "host={} threads={}",
        std::env::var("HOSTNAME").unwrap_or_else(|_| "unknown".into()),
        spec.parallel.max(1)
    );
    let _ = writeln!(
        log,
        "dataset={} nodes={} edges={}",
        spec.dataset,
        source.n(),
        source.num_edges()
    );

    for out in &outputs {
        let stem = run_file_stem(out.record.noise, out.record.trial);
        write_file(
            &runs_dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&out.record)?.as_bytes(),
        )?;
        for (name, bytes) in &out.files {
            write_file(&runs_dir.join(name), bytes)?;
        }
        let t = &out.timings;
        let _ = writeln!(
            log,
            "run {stem}: embed={:.3}s subspace={:.3}s matching={:.3}s total={:.3}s{}",
            t.embed.as_secs_f64(),
            t.subspace.as_secs_f64(),
            t.matching.as_secs_f64(),
            t.total().as_secs_f64(),
            out.record
                .error
                .as_deref()
                .map(|e| format!(" error={e}"))
                .unwrap_or_default()
        );
    }

    let aggregate: Vec<AggregateRow> = spec
        .noise_levels
        .iter()
        .map(|&p| {
            let recs: Vec<&RunRecord> = outputs
                .iter()
                .map(|o| &o.record)
                .filter(|r| r.noise == p)
                .collect();
            let acc: Vec<f64> = recs.iter().filter_map(|r| r.accuracy).collect();
            let mnc: Vec<f64> = recs.iter().filter_map(|r| r.mean_mnc).collect();
            let (accuracy_mean, accuracy_std) = mean_std(&acc);
            let (mnc_mean, mnc_std) = mean_std(&mnc);
            AggregateRow {
                noise: p,
                runs: recs.len(),
                failed: recs.iter().filter(|r| r.error.is_some()).count(),
                accuracy_mean,
                accuracy_std,
                mnc_mean,
                mnc_std,
            }
        })
        .collect();
    let agg_path = spec.output_dir.join("aggregate.csv");
    {
        let file = fs::File::create(&agg_path).map_err(|e| Error::io(&agg_path, e))?;
        let mut wtr = csv::Writer::from_writer(BufWriter::new(file));
        for row in &aggregate {
            wtr.serialize(row)?;
        }
        wtr.flush().map_err(|e| Error::io(&agg_path, e))?;
    }

    let total_time = started.elapsed();
    let _ = writeln!(
        log,
        "finished_unix={:.3} elapsed={:.3}s",
        since_epoch(SystemTime::now()),
        total_time.as_secs_f64()
    );
    let log_path = spec.output_dir.join("run.log");
    let mut f = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    f.write_all(log.as_bytes())
        .map_err(|e| Error::io(&log_path, e))?;

    let timings = outputs
        .iter()
        .map(|o| (o.record.noise, o.record.trial, o.timings))
        .collect();
    Ok(ExperimentResult {
        runs: outputs.into_iter().map(|o| o.record).collect(),
        aggregate,
        timings,
        total_time,
    })
}
