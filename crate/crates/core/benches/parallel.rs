use adamus::eval::kmeans;
use adamus::graph_ssl::{build_view_graph, SigmaMode};
use adamus::pna::plan_layers;
use adamus::rng::{stream, Stream};
use adamus::Execution;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use std::hint::black_box;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = stream(seed, Stream::Data);
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
}

fn knn_graph(c: &mut Criterion) {
    let x = gaussian(600, 64, 1);
    let mut g = c.benchmark_group("knn_graph_600x64");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| build_view_graph(black_box(x.view()), 10, SigmaMode::MeanSqDist, exec).unwrap())
        });
    }
    g.finish();
}

fn kmeans_restarts(c: &mut Criterion) {
    let z = gaussian(1000, 16, 2);
    let mut g = c.benchmark_group("kmeans_1000x16_k10_r8");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| kmeans(black_box(z.view()), 10, 8, 3, exec).unwrap())
        });
    }
    g.finish();
}

fn layer_spectra(c: &mut Criterion) {
    let acts: Vec<(usize, usize, Array2<f64>)> = (0..4)
        .map(|i| (i / 2, i % 2, gaussian(400, 64, 10 + i as u64).mapv(|v| v.max(0.0))))
        .collect();
    let taus = [1.3, 1.3];
    let mut g = c.benchmark_group("pna_plan_4x64");
    g.sample_size(20);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| plan_layers(black_box(&acts), &taus, 0.95, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, knn_graph, kmeans_restarts, layer_spectra);
criterion_main!(benches);
