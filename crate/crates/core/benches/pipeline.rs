use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use cluster_notify::client::match_exposures;
use cluster_notify::cluster::detect_all;
use cluster_notify::exec::{self, Exec};
use cluster_notify::model::{Anonym, AnonymPair, ClusterPolicy, GeoPoint, TimeBucket};
use cluster_notify::scenario::{generate_scenario, run_end_to_end_with, ScenarioConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn modes() -> Vec<(&'static str, Exec)> {
    let mut v = vec![("sequential", Exec::Sequential)];
    #[cfg(feature = "parallel")]
    v.push(("parallel", Exec::Parallel));
    v
}

fn fired_pairs(n_buckets: u64, per_bucket: usize) -> Vec<AnonymPair> {
    let policy = ClusterPolicy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut out = Vec::new();
    for b in 0..n_buckets {
        let spots: Vec<(f64, f64)> = (0..6).map(|_| (rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0))).collect();
        for _ in 0..per_bucket {
            let (x, y) = spots[rng.random_range(0..spots.len())];
            let p = GeoPoint::new(x + rng.random_range(-25.0..25.0), y + rng.random_range(-25.0..25.0));
            out.push(AnonymPair::new(Anonym::generate(&mut rng), p, TimeBucket(b), &policy).unwrap());
        }
    }
    out
}

fn bench_detect(c: &mut Criterion) {
    let policy = ClusterPolicy::default();
    let pairs = fired_pairs(200, 400);
    let mut g = c.benchmark_group("detect_all");
    for (name, mode) in modes() {
        g.bench_function(BenchmarkId::new(name, pairs.len()), |b| b.iter(|| detect_all(black_box(&pairs), &[], &policy, mode)));
    }
    g.finish();
}

fn small_town() -> ScenarioConfig {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/town.toml");
    ScenarioConfig::load(&path).unwrap()
}

fn bench_matching(c: &mut Criterion) {
    let cfg = small_town();
    let world = generate_scenario(&cfg).unwrap();
    let events = run_end_to_end_with(&world, &cfg, Exec::default()).unwrap().bulletin.events();
    let histories: Vec<_> = world.agents.iter().map(|a| a.history(world.horizon_s)).collect();
    let mut g = c.benchmark_group("match_all_agents");
    for (name, mode) in modes() {
        g.bench_function(BenchmarkId::new(name, histories.len()), |b| {
            b.iter(|| exec::map(mode, &histories, |h| match_exposures(h, &events, &cfg.policy).len()))
        });
    }
    g.finish();
}

fn bench_end_to_end(c: &mut Criterion) {
    let cfg = small_town();
    let world = generate_scenario(&cfg).unwrap();
    let mut g = c.benchmark_group("end_to_end");
    g.sample_size(10);
    for (name, mode) in modes() {
        g.bench_function(name, |b| b.iter(|| run_end_to_end_with(&world, &cfg, mode).unwrap().report.n_events));
    }
    g.finish();
}

criterion_group!(benches, bench_detect, bench_matching, bench_end_to_end);
criterion_main!(benches);
