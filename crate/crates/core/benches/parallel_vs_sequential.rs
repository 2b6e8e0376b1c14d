//! Sequential against rayon-parallel evaluation of the dynamic likelihood
//! and of a full Metropolis-within-Gibbs sweep.
//!
//! `cargo bench -p sphcov`; build with `--no-default-features` to see the
//! sequential fallback under both labels.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sphcov::gp::TimeGrid;
use sphcov::models::{
    dynamic_loglik_grad_l, generate_sparse_periodic, DynamicChainConfig, DynamicCorrModel,
    DynamicOptions, DynamicSampler,
};
use sphcov::{chain_rng, Exec};

fn model(d: usize, n: usize, m: usize) -> DynamicCorrModel {
    let (data, _) = generate_sparse_periodic(d, m, n, &mut chain_rng(1, 0)).unwrap();
    let grid = TimeGrid::rescaled(data.times()).unwrap();
    let opts = DynamicOptions {
        band: Some(2),
        ..DynamicOptions::default()
    };
    DynamicCorrModel::new(data, grid, opts).unwrap()
}

fn loglik_gradient(c: &mut Criterion) {
    let mut group = c.benchmark_group("loglik_grad_l");
    for d in [20, 80] {
        let model = model(d, 50, 20);
        let state = model.data_initial_state().unwrap();
        for (label, exec) in [
            ("sequential", Exec::Sequential),
            ("parallel", Exec::Parallel),
        ] {
            group.bench_with_input(BenchmarkId::new(label, d), &exec, |b, &exec| {
                b.iter(|| dynamic_loglik_grad_l(&state, model.data(), exec).unwrap())
            });
        }
    }
    group.finish();
}

fn sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("sweep");
    group.sample_size(20);
    let model = model(40, 50, 20);
    for (label, exec) in [
        ("sequential", Exec::Sequential),
        ("parallel", Exec::Parallel),
    ] {
        let cfg = DynamicChainConfig {
            exec,
            ..DynamicChainConfig::with_iters(1_000)
        };
        let mut state = model.data_initial_state().unwrap();
        let mut sampler = DynamicSampler::new(&model, &state, &cfg).unwrap();
        let mut rng = chain_rng(2, 0);
        group.bench_function(label, |b| {
            b.iter(|| sampler.sweep(&mut state, &mut rng).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, loglik_gradient, sweep);
criterion_main!(benches);
