//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Criteria 4 to 6 run on the email-network edge list named by
//! `EMBALIGN_ARENAS` or found at `data/arenas.edges` in the workspace root.
//! Without it they run on a seeded synthetic graph with the same node and edge
//! counts, and the output lines are tagged `[surrogate]`.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::*;
use embalign::embed::{self, EmbedConfig, NetmfMode};
use embalign::eval;
use embalign::experiment::{self, DatasetSpec, ExperimentResult, ExperimentSpec};
use embalign::graph::{self, GroundTruthPermutation};
use embalign::matching::KdTree;
use embalign::otlin;
use embalign::pipeline::{self, PipelineConfig};
use embalign::subspace::{self, SubspaceConfig};
use embalign::synth::{self, GraphKind};
use nalgebra::DMatrix;
use rand::Rng;

const SURROGATE: &str = "synth:1133:1:social:5451:4.2:0.4";

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn exact_oracles() -> Outcome {
    let start = Instant::now();
    let mut r = rng(101);
    let mut worst_netmf = 0.0f64;
    for trial in 0..10 {
        let n = 10 + 4 * trial;
        let g = random_graph(n, r.gen_range(0.05..0.3), &mut r);
        let cfg = EmbedConfig {
            dim: 2,
            eigenpairs: n,
            ..EmbedConfig::default()
        };
        let exact = embed::netmf_matrix_exact(&g, &cfg).unwrap();
        let approx = embed::netmf_matrix_approx(&g, &cfg).unwrap();
        worst_netmf = worst_netmf.max(max_abs_diff(&exact, &approx));
    }

    let mut assignment_misses = 0;
    for trial in 0..100 {
        let n = 1 + trial % 6;
        let cost = DMatrix::from_fn(n, n, |_, _| r.gen_range(0.0..1.0));
        let (best, best_cost) = brute_assignment(&cost);
        let got = otlin::sinkhorn(&cost, 1e-3, 20_000, 1e-9)
            .unwrap()
            .round_to_assignment();
        let got_cost: f64 = got.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
        if got != best && (got_cost - best_cost).abs() > 1e-12 {
            assignment_misses += 1;
        }
    }

    let mut kd_misses = 0;
    for trial in 0..100 {
        let n = 1 + r.gen_range(0..500);
        let d = 1 + trial % 16;
        let pts = uniform(n, d, &mut r);
        let tree = KdTree::new(&pts);
        for _ in 0..10 {
            let q: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
            if tree.nearest(&q).unwrap().0 != brute_nearest(&pts, &q).0 {
                kd_misses += 1;
            }
        }
    }
    outcome(
        worst_netmf < 1e-6 && assignment_misses == 0 && kd_misses == 0,
        format!(
            "netmf max-abs {worst_netmf:.2e} (< 1e-6); assignment mismatches {assignment_misses}/100; \
             k-d mismatches {kd_misses}/1000 queries; {:.2?}",
            start.elapsed()
        ),
    )
}

fn procrustes_recovery() -> Outcome {
    let mut r = rng(102);
    let y1 = uniform(200, 32, &mut r);
    let rot = random_orthogonal(32, &mut r);
    let y2 = &y1 * &rot;
    let start = Instant::now();
    let q = otlin::procrustes_fit(&y1, &y2).unwrap().transform;
    let elapsed = start.elapsed();
    let err = (q.values() - &rot).norm();
    outcome(
        err < 1e-6 && elapsed < Duration::from_secs(1),
        format!("‖Q − R‖_F = {err:.2e} (< 1e-6) in {elapsed:.2?} (< 1 s)"),
    )
}

fn noiseless_recovery() -> Outcome {
    let start = Instant::now();
    let n = 100;
    let mut worst = (1.0f64, 1.0f64);
    let mut per_seed = Vec::new();
    for seed in 0..5u64 {
        let g =
            synth::synth_graph(&GraphKind::RandomRegular { degree: 6 }, n, 1000 + seed).unwrap();
        let truth = GroundTruthPermutation::random(n, seed);
        let g2 = graph::permute_graph(&g, &truth).unwrap();
        let mut cfg = PipelineConfig::fitted_to(n);
        cfg.subspace.seed = seed;
        let out = pipeline::align_graphs(&g, &g2, &cfg).unwrap();
        let report = eval::evaluate(&g, &g2, &out.alignment, &truth).unwrap();
        let mnc = report.mean_mnc.unwrap_or(0.0);
        worst = (worst.0.min(report.accuracy), worst.1.min(mnc));
        per_seed.push(format!("{:.2}/{:.2}", report.accuracy, mnc));
    }
    let elapsed = start.elapsed();
    outcome(
        worst.0 >= 0.9 && worst.1 >= 0.9 && elapsed < Duration::from_secs(60),
        format!(
            "accuracy/MNC per seed [{}], min {:.3}/{:.3} (≥ 0.9); {elapsed:.2?} (< 60 s)",
            per_seed.join(", "),
            worst.0,
            worst.1
        ),
    )
}

fn arenas_dataset() -> (DatasetSpec, bool) {
    let workspace = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let candidates = std::env::var_os("EMBALIGN_ARENAS")
        .map(PathBuf::from)
        .into_iter()
        .chain([workspace.join("data/arenas.edges")]);
    for path in candidates {
        if path.is_file() {
            return (DatasetSpec::EdgeList { path }, false);
        }
    }
    (SURROGATE.parse().unwrap(), true)
}

fn run_arenas(dataset: DatasetSpec, out: &Path) -> ExperimentResult {
    let mut spec = ExperimentSpec::new(dataset, out);
    spec.master_seed = 7;
    spec.diagnostics = true;
    spec.parallel = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    experiment::run_experiment(&spec).expect("experiment runs")
}

fn arenas_scale(res: &ExperimentResult) -> Outcome {
    let n = res.runs[0].nodes as f64;
    let p05: Vec<_> = res.runs.iter().filter(|r| r.noise == 0.05).collect();
    let slowest = res
        .timings
        .iter()
        .filter(|t| t.0 == 0.05)
        .map(|t| t.2.total())
        .max()
        .unwrap_or_default();
    let failed = res.runs.iter().filter(|r| r.error.is_some()).count();
    let acc = |p: f64| {
        res.aggregate_for(p)
            .map(|a| a.accuracy_mean)
            .unwrap_or(f64::NAN)
    };
    let baseline_factor = acc(0.05) * n;
    outcome(
        failed == 0 && slowest < Duration::from_secs(16 * 60) && baseline_factor >= 100.0 && acc(0.05) > acc(0.25),
        format!(
            "{} runs at p=0.05, slowest {slowest:.2?} (< 16 min); accuracy {:.3} = {baseline_factor:.0}× of 1/n (≥ 100×); \
             acc(0.05) {:.3} > acc(0.25) {:.3}; failed runs {failed}",
            p05.len(),
            acc(0.05),
            acc(0.05),
            acc(0.25)
        ),
    )
}

fn mnc_separation(res: &ExperimentResult) -> Outcome {
    let gaps: Vec<Option<f64>> = res
        .runs
        .iter()
        .filter(|r| r.noise == 0.05)
        .map(|r| Some(r.mean_mnc_correct? - r.mean_mnc_incorrect?))
        .collect();
    let good = gaps.iter().filter(|g| g.is_some_and(|g| g >= 0.2)).count();
    let shown: Vec<String> = gaps
        .iter()
        .map(|g| g.map_or("n/a".into(), |g| format!("{g:.3}")))
        .collect();
    outcome(
        good >= 4,
        format!(
            "MNC(correct) − MNC(incorrect) per seed [{}]; {good}/5 ≥ 0.2 (need ≥ 4)",
            shown.join(", ")
        ),
    )
}

fn monotone_degradation(res: &ExperimentResult) -> Outcome {
    let rows = &res.aggregate;
    let mut inversions = Vec::new();
    for w in rows.windows(2) {
        let rise = w[1].accuracy_mean - w[0].accuracy_mean;
        if rise > 0.0 {
            let pooled = ((w[0].accuracy_std.powi(2) + w[1].accuracy_std.powi(2)) / 2.0).sqrt();
            inversions.push((w[0].noise, w[1].noise, rise, pooled));
        }
    }
    let pass =
        inversions.is_empty() || (inversions.len() == 1 && inversions[0].2 <= inversions[0].3);
    let curve: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{:.2}:{:.3}±{:.3}",
                r.noise, r.accuracy_mean, r.accuracy_std
            )
        })
        .collect();
    outcome(
        pass,
        format!(
            "accuracy [{}]; inversions {:?} (≤ 1, within pooled std)",
            curve.join(" "),
            inversions
                .iter()
                .map(|i| format!("{}→{} +{:.3} vs {:.3}", i.0, i.1, i.2, i.3))
                .collect::<Vec<_>>()
        ),
    )
}

fn files_under(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|f| f != "run.log") {
                out.insert(
                    path.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

fn invariants(res: &ExperimentResult, arenas_dir: &Path) -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    // Orthogonality of Q at every iteration, from the recorded traces.
    let mut worst_orth = 0.0f64;
    for entry in fs::read_dir(arenas_dir.join("runs")).unwrap() {
        let path = entry.unwrap().path();
        if path.to_string_lossy().ends_with(".trace.csv") {
            let mut rdr = csv::Reader::from_path(&path).unwrap();
            for rec in rdr.deserialize::<subspace::WpStep>() {
                worst_orth = worst_orth.max(rec.unwrap().orthogonality_residual);
            }
        }
    }
    pass &= worst_orth <= 1e-8 && res.runs.iter().all(|r| r.error.is_none());
    notes.push(format!("max ‖QᵀQ − I‖_F {worst_orth:.1e}"));

    // Transport-plan marginals, including the plans inside the convex initialization.
    let mut r = rng(103);
    let mut worst_marg = 0.0f64;
    for _ in 0..50 {
        let (n, m) = (r.gen_range(1..40), r.gen_range(1..40));
        let cost = uniform(n, m, &mut r) * 5.0;
        let plan = otlin::sinkhorn(&cost, r.gen_range(0.01..2.0), 500, 1e-6).unwrap();
        if plan.converged {
            let (a, b) = plan.marginal_residuals();
            worst_marg = worst_marg.max(a).max(b);
        }
    }
    let g = random_graph(30, 0.2, &mut r);
    let g2 = graph::permute_graph(&g, &GroundTruthPermutation::random(30, 3)).unwrap();
    let init = subspace::convex_init(&g, &g2, &SubspaceConfig::default()).unwrap();
    let (a, b) = init.plan.marginal_residuals();
    worst_marg = worst_marg.max(a).max(b);
    pass &= worst_marg <= 1e-6;
    notes.push(format!("max marginal residual {worst_marg:.1e}"));

    // Permutation equivariance of embeddings.
    let g = random_graph(20, 0.3, &mut r);
    let perm = GroundTruthPermutation::random(20, 4);
    let gp = graph::permute_graph(&g, &perm).unwrap();
    let cfg = EmbedConfig::default().fitted_to(20);
    let cfg = EmbedConfig { dim: 8, ..cfg };
    let y = embed::embed_graph(&g, &cfg, NetmfMode::Approx).unwrap();
    let yp = embed::embed_graph(&gp, &cfg, NetmfMode::Approx).unwrap();
    let equi = max_abs_diff_up_to_sign(y.permute_rows(perm.as_slice()).values(), yp.values());
    pass &= equi <= 1e-5;
    notes.push(format!("equivariance error {equi:.1e}"));

    // Byte-level reproducibility, sequential against parallel execution.
    let tmp = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (k, parallel) in [(0, 1), (1, 3)] {
        let mut spec = ExperimentSpec::new(
            "synth:80:5:er:0.08".parse().unwrap(),
            tmp.path().join(k.to_string()),
        );
        spec.trials = 2;
        spec.diagnostics = true;
        spec.parallel = parallel;
        experiment::run_experiment(&spec).unwrap();
        outputs.push(files_under(&spec.output_dir));
    }
    let identical = outputs[0] == outputs[1] && !outputs[0].is_empty();
    pass &= identical;
    notes.push(format!(
        "{} result files {}",
        outputs[0].len(),
        if identical {
            "byte-identical"
        } else {
            "DIFFER"
        }
    ));
    outcome(pass, notes.join("; "))
}

fn report(id: usize, name: &str, tag: &str, o: &Outcome) {
    println!(
        "{} criterion {id} ({name}){tag}: {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        // Test-listing probes from cargo or IDEs.
        return;
    }
    let mut all = true;
    let mut record = |id: usize, name: &str, tag: &str, o: Outcome| {
        report(id, name, tag, &o);
        all &= o.pass;
    };
    record(1, "exact-oracle equivalences", "", exact_oracles());
    record(2, "Procrustes recovery", "", procrustes_recovery());
    record(3, "noiseless end-to-end recovery", "", noiseless_recovery());

    let (dataset, surrogate) = arenas_dataset();
    let tag = if surrogate { " [surrogate]" } else { "" };
    if surrogate {
        println!("note: email-network edge list not found; using {SURROGATE}");
    }
    let tmp = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let res = run_arenas(dataset, tmp.path());
    println!("note: 25 email-network runs took {:.1?}", started.elapsed());
    record(4, "desk-scale run", tag, arenas_scale(&res));
    record(5, "MNC-correctness separation", tag, mnc_separation(&res));
    record(6, "monotone degradation", tag, monotone_degradation(&res));
    record(7, "invariant suites", "", invariants(&res, tmp.path()));

    if !all {
        std::process::exit(1);
    }
}
