use std::hint::black_box;

use brownsync::{
    estimate_r, run_replica, run_replica_with, InitialCondition, InteractionSignature,
    KeyedIncrements, LazyParticleState, ParticleConfiguration, RefreshPolicy, RenewalSpec,
    SimulationConfig, TupleSampler,
};
use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion, Throughput};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sync_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("sync_step");
    for n in [10usize, 1_000, 100_000] {
        let sig = InteractionSignature::new(vec![2, 3]).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            let mut state = LazyParticleState::new(ParticleConfiguration::zeros(n).unwrap());
            let mut sampler = TupleSampler::new(n, sig.k()).unwrap();
            let mut diffusion = ChaCha8Rng::seed_from_u64(1);
            let mut tuples = ChaCha8Rng::seed_from_u64(2);
            let mut t = 0.0;
            b.iter(|| {
                t += 0.01;
                state
                    .step_sync(&sig, &mut sampler, t, 1.0, &mut diffusion, &mut tuples)
                    .unwrap();
            });
        });
    }
    group.finish();
}

fn replica(c: &mut Criterion) {
    let mut group = c.benchmark_group("replica");
    for n in [10usize, 100, 1_000] {
        // About l_N / delta time units: a few thousand to a million epochs.
        let horizon = (n * (n - 1)) as f64 / 2.0;
        let config = SimulationConfig::markov(n, 1.0, 1.0, vec![horizon], 2, 7);
        group.throughput(Throughput::Elements(horizon as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &config, |b, config| {
            b.iter(|| black_box(run_replica(config, 0).unwrap()));
        });
    }
    group.finish();
}

fn lazy_vs_eager(c: &mut Criterion) {
    let mut group = c.benchmark_group("refresh_policy");
    for n in [10usize, 100, 1_000] {
        let config = SimulationConfig {
            n,
            sigma: 1.0,
            epochs: Some(RenewalSpec::poisson(1.0).unwrap()),
            signature: InteractionSignature::pairwise(),
            initial: InitialCondition::Zero,
            query_times: vec![200.0],
            replicas: 2,
            base_seed: 11,
            max_epochs: None,
        };
        for (name, policy) in [
            ("lazy", RefreshPolicy::Lazy),
            ("eager", RefreshPolicy::Eager),
        ] {
            group.bench_with_input(BenchmarkId::new(name, n), &config, |b, config| {
                b.iter_batched(
                    || KeyedIncrements::new(11, 0),
                    |mut src| black_box(run_replica_with(config, 0, policy, &mut src).unwrap()),
                    BatchSize::SmallInput,
                );
            });
        }
    }
    group.finish();
}

fn parallel_estimate(c: &mut Criterion) {
    let config = SimulationConfig::markov(10, 1.0, 1.0, vec![10.0, 100.0], 2_000, 3);
    let mut group = c.benchmark_group("estimate_r");
    group.sample_size(10);
    for workers in [1usize, 4] {
        group.bench_with_input(BenchmarkId::from_parameter(workers), &workers, |b, &w| {
            b.iter(|| black_box(estimate_r(&config, Some(w)).unwrap()));
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    sync_step,
    replica,
    lazy_vs_eager,
    parallel_estimate
);
criterion_main!(benches);
