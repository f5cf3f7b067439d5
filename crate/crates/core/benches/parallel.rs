//! Sequential against rayon-parallel execution of the hot paths. Build with
//! `--no-default-features` to time the sequential fallback alone.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gnnrec::eval::{evaluate, EvalProtocol};
use gnnrec::graph::{split_train_test, InteractionGraph, SplitSpec};
use gnnrec::model::{GnnModel, ModelConfig};
use gnnrec::par::ExecMode;
use gnnrec::rng::rng_from;
use gnnrec::sampler::{ImportanceConfig, SampledAdjacency};
use rand::Rng;

const MODES: [ExecMode; 2] = [ExecMode::Sequential, ExecMode::Parallel];

fn synthetic_graph(users: u32, items: u32, per_user: u32) -> InteractionGraph {
    let mut rng = rng_from(7);
    let mut edges = Vec::new();
    for u in 0..users {
        let mut picked: Vec<u32> = (0..per_user).map(|_| rng.gen_range(0..items)).collect();
        picked.sort_unstable();
        picked.dedup();
        edges.extend(picked.into_iter().map(|i| (u, i, rng.gen_range(1..=5u8))));
    }
    InteractionGraph::from_indexed_edges(users as usize, items as usize, 5, &edges).unwrap()
}

fn model(graph: &InteractionGraph, mode: ExecMode) -> GnnModel {
    let cfg = ModelConfig {
        dim: 32,
        ..Default::default()
    };
    GnnModel::new(graph, cfg, ImportanceConfig::default(), 1)
        .unwrap()
        .with_exec_mode(mode)
}

fn bench_propagate(c: &mut Criterion) {
    let graph = synthetic_graph(1000, 800, 30);
    let mut group = c.benchmark_group("propagate");
    group.sample_size(10);
    for mode in MODES {
        let m = model(&graph, mode);
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{mode:?}")),
            &m,
            |b, m| b.iter(|| black_box(m.final_representations(&graph).unwrap())),
        );
    }
    group.finish();
}

fn bench_train_batch(c: &mut Criterion) {
    let graph = synthetic_graph(1000, 800, 30);
    let mut rng = rng_from(3);
    let pairs: Vec<(usize, usize, bool)> = (0..1024)
        .map(|_| {
            (
                rng.gen_range(0..1000),
                rng.gen_range(0..800),
                rng.gen_bool(0.5),
            )
        })
        .collect();
    let mut group = c.benchmark_group("train_batch");
    group.sample_size(10);
    for mode in MODES {
        let mut m = model(&graph, mode);
        let sampled = SampledAdjacency::build(&graph, m.sampler(), 0, mode).unwrap();
        group.bench_function(BenchmarkId::from_parameter(format!("{mode:?}")), |b| {
            b.iter(|| {
                black_box(
                    m.batch_objective(&graph, &sampled, &pairs, 1e-4, true)
                        .unwrap(),
                )
            })
        });
    }
    group.finish();
}

fn bench_evaluate(c: &mut Criterion) {
    let graph = synthetic_graph(2000, 1500, 40);
    let (train, test) = split_train_test(&graph, &SplitSpec::new(0.2, 5)).unwrap();
    let scorer = model(&train, ExecMode::Parallel).scorer(&train).unwrap();
    let protocol = EvalProtocol::default();
    let mut group = c.benchmark_group("evaluate");
    group.sample_size(10);
    for mode in MODES {
        group.bench_function(BenchmarkId::from_parameter(format!("{mode:?}")), |b| {
            b.iter(|| black_box(evaluate(&scorer, &train, &test, &protocol, mode).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_propagate, bench_train_batch, bench_evaluate);
criterion_main!(benches);
