//! Seeded Drive episodes on one worker versus the rayon pool. Build with
//! `--no-default-features` to see the sequential fallback for both rows.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lunarsim::learn::{evaluate_policy, mix_seed, DriveEnv, EnvConfig, PursuitPolicy};
use lunarsim::par;

const EPISODES: usize = 8;

fn episodes(threads: usize) -> f64 {
    let rates = par::map_range_with_threads(EPISODES, threads, |k| {
        let mut env = DriveEnv::new(EnvConfig::default());
        evaluate_policy(&mut env, &mut PursuitPolicy::default(), 1, mix_seed(5, k as u64)).success_rate
    });
    rates.iter().sum()
}

fn bench(c: &mut Criterion) {
    let mut g = c.benchmark_group("drive_episodes");
    g.sample_size(10);
    for (label, threads) in [("sequential", 1), ("parallel", 0)] {
        g.bench_with_input(BenchmarkId::new(label, EPISODES), &threads, |b, &t| b.iter(|| episodes(t)));
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
