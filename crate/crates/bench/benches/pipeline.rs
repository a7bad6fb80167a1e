//! Benchmarks for the hot paths: graph construction, gated propagation with
//! readout, sampling, regularization and the embedding audits.

use criterion::{black_box, criterion_group, criterion_main, Criterion};

use sessrec_core::graph::build_graph;
use sessrec_core::metrics::nn_cosine_histogram;
use sessrec_core::numeric::{Rng, Tape, Tensor};
use sessrec_core::srgnn::{
    embed, ggnn_forward, init_params, names, readout, score_items, ModelConfig,
};
use sessrec_core::srgnn::{GgnnWeights, ReadoutWeights};
use sessrec_core::stochastic::{uniformity_loss, vmf_sample, UniformityConfig, VmfParams};

fn random_prefix(rng: &mut Rng, n_items: usize, len: usize) -> Vec<usize> {
    (0..len).map(|_| rng.next_below(n_items)).collect()
}

fn bench_build_graph(c: &mut Criterion) {
    let mut rng = Rng::derive(1, "bench", &[0]);
    let prefix = random_prefix(&mut rng, 5000, 12);
    c.bench_function("build_graph len=12", |b| {
        b.iter(|| build_graph(black_box(&prefix)))
    });
}

fn bench_forward(c: &mut Criterion) {
    let (d, n_items) = (100, 5000);
    let cfg = ModelConfig {
        d,
        propagation_steps: 1,
        spherical: true,
        score_scale: 12.0,
    };
    let params = init_params(&cfg, n_items, 3).unwrap();
    let mut rng = Rng::derive(1, "bench", &[1]);
    let prefix = random_prefix(&mut rng, n_items, 8);
    let graph = build_graph(&prefix);
    c.bench_function("forward d=100 n=5000 len=8", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let table = tape.param(&params, names::EMBED).unwrap();
            let gw = GgnnWeights::load(&mut tape, &params).unwrap();
            let rw = ReadoutWeights::load(&mut tape, &params).unwrap();
            let states = embed(&mut tape, table, &graph.nodes, true).unwrap();
            let h = ggnn_forward(&mut tape, &graph, states, &gw, 1).unwrap();
            let s = readout(&mut tape, h, &graph, &rw).unwrap();
            let probs = score_items(&mut tape, s, table, true, 12.0).unwrap();
            black_box(tape.value(probs).data()[0])
        })
    });
}

fn bench_vmf(c: &mut Criterion) {
    let d = 100;
    let mut mu = vec![0.0; d];
    mu[0] = 1.0;
    let params = VmfParams::new(mu, 250.0).unwrap();
    let mut rng = Rng::derive(1, "bench", &[2]);
    c.bench_function("vmf_sample d=100 kappa=250", |b| {
        b.iter(|| black_box(vmf_sample(&params, &mut rng)))
    });
}

fn bench_uniformity(c: &mut Criterion) {
    let (n, d) = (5000, 100);
    let mut rng = Rng::derive(1, "bench", &[3]);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.next_standard_normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / norm).collect()
        })
        .collect();
    let table = Tensor::from_rows(&rows).unwrap();
    let cfg = UniformityConfig::default();
    c.bench_function("uniformity_loss n=5000 budget=4096", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let rows = tape.constant(table.clone()).unwrap();
            let mut pair_rng = Rng::derive(1, "bench", &[4]);
            let loss = uniformity_loss(&mut tape, rows, cfg.tau, cfg.pair_budget, &mut pair_rng)
                .unwrap();
            black_box(tape.value(loss).scalar_value())
        })
    });
}

fn bench_nn_histogram(c: &mut Criterion) {
    let (n, d) = (2000, 100);
    let mut rng = Rng::derive(1, "bench", &[5]);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.next_standard_normal()).collect())
        .collect();
    let table = Tensor::from_rows(&rows).unwrap();
    c.bench_function("nn_cosine_histogram n=2000", |b| {
        b.iter(|| black_box(nn_cosine_histogram(&table, 100).unwrap()))
    });
}

criterion_group!(
    benches,
    bench_build_graph,
    bench_forward,
    bench_vmf,
    bench_uniformity,
    bench_nn_histogram
);
criterion_main!(benches);
