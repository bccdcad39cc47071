//! Seed sweep throughput: sequential map versus the rayon-backed map.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use netac::algo::{Algorithm, RunConfig, Simulation};
use netac::env::{generate_features, generate_garnet};
use netac::graph::DirectedGraph;
use netac::par;
use netac::policy::{PolicyParams, SoftmaxPolicy};
use netac::SimRng;
use rand::SeedableRng;

const HORIZON: u64 = 2_000;

fn run_seed(seed: u64) -> f64 {
    let mdp = generate_garnet(5, &[2, 2, 2], 2, 1.0, seed).unwrap();
    let features = generate_features(&mdp, 4, seed + 1000).unwrap();
    let policy = SoftmaxPolicy::one_hot(&mdp);
    let theta = PolicyParams::random(&policy.param_dims(), 1.0, 10.0, &mut SimRng::seed_from_u64(seed + 2000));
    let graph = DirectedGraph::cycle(3).unwrap();
    let cfg = RunConfig::new(Algorithm::PushEntrywise, HORIZON, seed);
    let mut sim = Simulation::new(&mdp, &graph, &features, &policy, theta, cfg).unwrap();
    while !sim.is_done() {
        sim.step().unwrap();
    }
    sim.mu_mean()
}

fn sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("seed_sweep");
    group.sample_size(10);
    for n_seeds in [4u64, 16] {
        let seeds: Vec<u64> = (0..n_seeds).collect();
        group.bench_with_input(BenchmarkId::new("sequential", n_seeds), &seeds, |b, s| {
            b.iter(|| par::map_sequential(black_box(s), |&seed| run_seed(seed)))
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("parallel", n_seeds), &seeds, |b, s| {
            b.iter(|| par::map_parallel(black_box(s), |&seed| run_seed(seed)))
        });
    }
    group.finish();
}

criterion_group!(benches, sweep);
criterion_main!(benches);
