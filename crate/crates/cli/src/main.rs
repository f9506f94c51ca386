use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use embalign::cache::{self, EmbeddingCache};
use embalign::experiment::{self, DatasetSpec, ExperimentSpec};
use embalign::graph::{self, EdgeListFormat};
use embalign::matching::Alignment;
use embalign::pipeline::{self, PipelineConfig};
use embalign::synth::{self, GraphKind};
use embalign::{eval, subspace, GroundTruthPermutation, NetmfMode, NormKind, SparseGraph};

#[derive(Parser)]
#[command(
    name = "embalign",
    version,
    about = "Unsupervised graph alignment via embedding subspaces"
)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Noisy-permutation experiment over several noise levels and trials.
    Run(RunArgs),
    /// Align two edge lists.
    Align(AlignArgs),
    /// Write a synthetic graph, optionally with a permuted noisy copy.
    Synth(SynthArgs),
    /// Compute a node embedding and write it in the binary cache format.
    Embed(EmbedArgs),
    /// Score an alignment against a ground-truth permutation.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exact,
    Approx,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    Spectral,
    Frobenius,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Auto,
    Whitespace,
    Comma,
}

impl From<FormatArg> for EdgeListFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Auto => EdgeListFormat::Auto,
            FormatArg::Whitespace => EdgeListFormat::Whitespace,
            FormatArg::Comma => EdgeListFormat::Comma,
        }
    }
}

/// Pipeline hyperparameters. Each one overrides the config file.
#[derive(Args, Default)]
struct Hyper {
    /// TOML config file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Embedding dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Random-walk window size.
    #[arg(long)]
    window: Option<usize>,
    /// Negative-sampling parameter.
    #[arg(long)]
    negative: Option<f64>,
    /// Eigenpairs kept in approximate mode.
    #[arg(long)]
    eigenpairs: Option<usize>,
    #[arg(long, value_enum)]
    norm: Option<NormArg>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Frank–Wolfe iterations for the convex initialization.
    #[arg(long)]
    init_iters: Option<usize>,
    /// Sinkhorn regularization inside Frank–Wolfe.
    #[arg(long)]
    init_lambda: Option<f64>,
    /// Wasserstein–Procrustes iterations.
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Sinkhorn regularization for minibatch plans.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    sinkhorn_max_iter: Option<usize>,
    #[arg(long)]
    sinkhorn_tol: Option<f64>,
    /// Round minibatch plans to hard assignments.
    #[arg(long)]
    hard_rounding: bool,
    /// Seed for minibatch sampling (ignored by `run`, which derives its own).
    #[arg(long)]
    minibatch_seed: Option<u64>,
    /// Candidates kept per node.
    #[arg(long)]
    top_k: Option<usize>,
    /// One-to-one matching through a rounded transport plan.
    #[arg(long)]
    bijective: bool,
    #[arg(long)]
    bijective_lambda: Option<f64>,
}

impl Hyper {
    fn apply(&self, cfg: &mut PipelineConfig) {
        let e = &mut cfg.embed;
        set(&mut e.dim, self.dim);
        set(&mut e.window, self.window);
        set(&mut e.negative, self.negative);
        set(&mut e.eigenpairs, self.eigenpairs);
        if let Some(n) = self.norm {
            e.norm = match n {
                NormArg::Spectral => NormKind::Spectral,
                NormArg::Frobenius => NormKind::Frobenius,
            };
        }
        if let Some(m) = self.mode {
            cfg.mode = match m {
                ModeArg::Exact => NetmfMode::Exact,
                ModeArg::Approx => NetmfMode::Approx,
            };
        }
        let s = &mut cfg.subspace;
        set(&mut s.init_iters, self.init_iters);
        set(&mut s.init_lambda, self.init_lambda);
        set(&mut s.iterations, self.iterations);
        set(&mut s.batch_size, self.batch_size);
        set(&mut s.learning_rate, self.learning_rate);
        set(&mut s.lambda, self.lambda);
        set(&mut s.sinkhorn_max_iter, self.sinkhorn_max_iter);
        set(&mut s.sinkhorn_tol, self.sinkhorn_tol);
        set(&mut s.seed, self.minibatch_seed);
        s.hard_rounding |= self.hard_rounding;
        set(&mut cfg.top_k, self.top_k);
        cfg.bijective |= self.bijective;
        set(&mut cfg.bijective_lambda, self.bijective_lambda);
    }

    fn resolve(&self) -> Result<(FileConfig, PipelineConfig)> {
        let file = match &self.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let mut cfg = file.pipeline.clone();
        self.apply(&mut cfg);
        Ok((file, cfg))
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    dataset: Option<String>,
    noise_levels: Option<Vec<f64>>,
    trials: Option<usize>,
    master_seed: Option<u64>,
    output_dir: Option<PathBuf>,
    diagnostics: Option<bool>,
    parallel: Option<usize>,
    pipeline: PipelineConfig,
}

impl FileConfig {
    fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

#[derive(Args)]
struct RunArgs {
    /// Edge-list path, or `synth:<n>:<seed>:<generator>`.
    #[arg(long)]
    dataset: Option<String>,
    /// Comma-separated edge-removal probabilities.
    #[arg(long, value_delimiter = ',')]
    noise: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Write per-node, alignment and trace CSVs for every run.
    #[arg(long)]
    diagnostics: bool,
    /// Runs executed concurrently.
    #[arg(long, short = 'j')]
    parallel: Option<usize>,
    #[command(flatten)]
    hyper: Hyper,
}

#[derive(Args)]
struct AlignArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    format: FormatArg,
    /// Alignment CSV; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Ground-truth CSV; prints evaluation metrics when given.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Top-k candidate lists as JSON.
    #[arg(long)]
    top_k_out: Option<PathBuf>,
    /// Wasserstein–Procrustes trace CSV.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Directory for cached embeddings.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[command(flatten)]
    hyper: Hyper,
}

#[derive(Args)]
struct SynthArgs {
    /// Generator: regular:<d>, er:<p>, barbell, social:<m>:<exponent>:<closure>.
    #[arg(long)]
    kind: GraphKind,
    #[arg(long)]
    nodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    out: PathBuf,
    /// Also write a permuted copy with edges removed at rate `--noise`.
    #[arg(long, requires = "truth_out")]
    target_out: Option<PathBuf>,
    #[arg(long, requires = "target_out")]
    truth_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    format: FormatArg,
    #[arg(long, short)]
    out: PathBuf,
    #[command(flatten)]
    hyper: Hyper,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    format: FormatArg,
    #[arg(long)]
    alignment: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Per-node CSV with MNC, correctness and degree.
    #[arg(long)]
    per_node: Option<PathBuf>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn load(path: &Path, format: FormatArg) -> Result<SparseGraph> {
    graph::load_edge_list(path, format.into())
        .with_context(|| format!("loading {}", path.display()))
}

fn read_truth(path: &Path) -> Result<GroundTruthPermutation> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(GroundTruthPermutation::read_csv(f)?)
}

fn summary(report: &eval::EvalReport) -> serde_json::Value {
    serde_json::json!({
        "accuracy": report.accuracy,
        "mean_mnc": report.mean_mnc,
        "undefined_mnc": report.undefined_mnc,
        "mean_mnc_correct": report.mean_mnc_where(true),
        "mean_mnc_incorrect": report.mean_mnc_where(false),
        "degree_groups": report.degree_groups.buckets.iter().map(|b| serde_json::json!({
            "lower": b.lower,
            "upper": b.upper,
            "nodes": b.nodes,
            "undefined": b.undefined,
            "mean_mnc_correct": b.mean_correct(),
            "mean_mnc_incorrect": b.mean_incorrect(),
        })).collect::<Vec<_>>(),
    })
}

fn run(args: RunArgs) -> Result<()> {
    let (file, pipeline) = args.hyper.resolve()?;
    let Some(dataset) = args.dataset.or(file.dataset) else {
        bail!("no dataset given (use --dataset or set `dataset` in the config file)");
    };
    let dataset: DatasetSpec = dataset.parse()?;
    let out = args
        .out
        .or(file.output_dir)
        .unwrap_or_else(|| PathBuf::from("results"));
    let mut spec = ExperimentSpec::new(dataset, out);
    set(&mut spec.noise_levels, file.noise_levels);
    set(&mut spec.noise_levels, args.noise);
    set(&mut spec.trials, file.trials);
    set(&mut spec.trials, args.trials);
    set(&mut spec.master_seed, file.master_seed);
    set(&mut spec.master_seed, args.seed);
    set(&mut spec.parallel, file.parallel);
    set(&mut spec.parallel, args.parallel);
    spec.diagnostics = args.diagnostics || file.diagnostics.unwrap_or(false);
    spec.pipeline = pipeline;

    let result = experiment::run_experiment(&spec)?;
    let stdout = io::stdout();
    let mut w = stdout.lock();
    writeln!(w, "noise\truns\tfailed\taccuracy\tmnc")?;
    for row in &result.aggregate {
        writeln!(
            w,
            "{:.2}\t{}\t{}\t{:.4} ± {:.4}\t{:.4} ± {:.4}",
            row.noise,
            row.runs,
            row.failed,
            row.accuracy_mean,
            row.accuracy_std,
            row.mnc_mean,
            row.mnc_std
        )?;
    }
    log::info!("results written to {}", spec.output_dir.display());
    let failed: usize = result.aggregate.iter().map(|r| r.failed).sum();
    if failed > 0 {
        bail!(
            "{failed} run(s) failed; see {}",
            spec.output_dir.join("run.log").display()
        );
    }
    Ok(())
}

fn align(args: AlignArgs) -> Result<()> {
    let (_, cfg) = args.hyper.resolve()?;
    let g1 = load(&args.source, args.format)?;
    let g2 = load(&args.target, args.format)?;
    let cfg = cfg.fit(g1.n().max(g2.n()));
    let cache = args.cache_dir.map(EmbeddingCache::new).transpose()?;
    let out = pipeline::align_graphs_cached(&g1, &g2, &cfg, cache.as_ref())?;
    log::info!("stage timings: {:?}", out.timings);

    match &args.out {
        Some(path) => out.alignment.write_csv(create(path)?)?,
        None => out.alignment.write_csv(io::stdout().lock())?,
    }
    if let Some(path) = &args.top_k_out {
        out.alignment.write_top_k_json(create(path)?)?;
    }
    if let Some(path) = &args.trace_out {
        subspace::write_trace_csv(create(path)?, &out.subspace.trace)?;
    }
    if let Some(path) = &args.truth {
        let truth = read_truth(path)?;
        let report = eval::evaluate(&g1, &g2, &out.alignment, &truth)?;
        eprintln!("{}", serde_json::to_string_pretty(&summary(&report))?);
    }
    Ok(())
}

fn synth_cmd(args: SynthArgs) -> Result<()> {
    let g = synth::synth_graph(&args.kind, args.nodes, args.seed)?;
    g.write_edge_list(create(&args.out)?)?;
    if let (Some(target), Some(truth_path)) = (&args.target_out, &args.truth_out) {
        use embalign::seeds::{self, Stage};
        let truth = GroundTruthPermutation::random(
            g.n(),
            seeds::stage_seed(args.seed, 0, Stage::Permutation),
        );
        let g2 = graph::drop_edges(
            &graph::permute_graph(&g, &truth)?,
            args.noise,
            seeds::stage_seed(args.seed, 0, Stage::Noise),
        )?;
        g2.write_edge_list(create(target)?)?;
        truth.write_csv(create(truth_path)?)?;
    }
    Ok(())
}

fn embed_cmd(args: EmbedArgs) -> Result<()> {
    let (_, cfg) = args.hyper.resolve()?;
    let g = load(&args.graph, args.format)?;
    let cfg = cfg.fit(g.n());
    let y = embalign::embed::embed_graph(&g, &cfg.embed, cfg.mode)?;
    let mut w = create(&args.out)?;
    cache::write_embedding(&mut w, &y)?;
    w.flush()?;
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    let g1 = load(&args.source, args.format)?;
    let g2 = load(&args.target, args.format)?;
    let f = File::open(&args.alignment)
        .with_context(|| format!("opening {}", args.alignment.display()))?;
    let alignment = Alignment::read_csv(f)?;
    let truth = read_truth(&args.truth)?;
    let report = eval::evaluate(&g1, &g2, &alignment, &truth)?;
    if let Some(path) = &args.per_node {
        report.write_per_node_csv(create(path)?)?;
    }
    println!("{}", serde_json::to_string_pretty(&summary(&report))?);
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match cli.command {
        Command::Run(a) => run(a),
        Command::Align(a) => align(a),
        Command::Synth(a) => synth_cmd(a),
        Command::Embed(a) => embed_cmd(a),
        Command::Eval(a) => eval_cmd(a),
    }
}
