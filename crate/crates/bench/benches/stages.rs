use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;

use embalign::embed::{self, EmbedConfig, NetmfMode};
use embalign::graph::{self, GroundTruthPermutation};
use embalign::matching::KdTree;
use embalign::otlin;
use embalign::pipeline::{self, PipelineConfig};
use embalign::synth::{self, GraphKind};

fn pseudo_random(n: usize, m: usize, salt: u64) -> DMatrix<f64> {
    let mut s = salt.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    DMatrix::from_fn(n, m, |_, _| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64
    })
}

fn sinkhorn(c: &mut Criterion) {
    let mut group = c.benchmark_group("sinkhorn");
    for n in [10, 100, 400] {
        let cost = pseudo_random(n, n, n as u64);
        group.bench_with_input(BenchmarkId::from_parameter(n), &cost, |b, cost| {
            b.iter(|| otlin::sinkhorn(cost, 0.05, 500, 1e-6).unwrap())
        });
    }
    group.finish();
}

fn kd_tree(c: &mut Criterion) {
    let mut group = c.benchmark_group("kd_tree");
    for d in [8, 32, 128] {
        let points = pseudo_random(2000, d, d as u64);
        let queries = pseudo_random(200, d, 7 + d as u64);
        group.bench_with_input(BenchmarkId::new("build", d), &points, |b, p| {
            b.iter(|| KdTree::new(p))
        });
        let tree = KdTree::new(&points);
        group.bench_with_input(BenchmarkId::new("query200", d), &queries, |b, q| {
            b.iter(|| {
                (0..q.nrows())
                    .map(|i| {
                        let row: Vec<f64> = q.row(i).iter().copied().collect();
                        tree.nearest(&row).unwrap().0
                    })
                    .sum::<usize>()
            })
        });
    }
    group.finish();
}

fn embedding(c: &mut Criterion) {
    let mut group = c.benchmark_group("embed");
    group.sample_size(10);
    let g = synth::synth_graph(&GraphKind::RandomRegular { degree: 6 }, 300, 1).unwrap();
    let cfg = EmbedConfig::default().fitted_to(g.n());
    for mode in [NetmfMode::Exact, NetmfMode::Approx] {
        group.bench_function(format!("{mode:?}_300"), |b| {
            b.iter(|| embed::embed_graph(&g, &cfg, mode).unwrap())
        });
    }
    group.finish();
}

fn small_pipeline(c: &mut Criterion) {
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    let g = synth::synth_graph(&GraphKind::RandomRegular { degree: 6 }, 100, 2).unwrap();
    let truth = GroundTruthPermutation::random(g.n(), 3);
    let g2 = graph::drop_edges(&graph::permute_graph(&g, &truth).unwrap(), 0.05, 4).unwrap();
    let cfg = PipelineConfig::fitted_to(g.n());
    group.bench_function("regular6_100", |b| {
        b.iter(|| pipeline::align_graphs(&g, &g2, &cfg).unwrap())
    });
    group.finish();
}

criterion_group!(benches, sinkhorn, kd_tree, embedding, small_pipeline);
criterion_main!(benches);
