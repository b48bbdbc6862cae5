use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use logsparse::locator::{locate, LocatorConfig};
use logsparse::montecarlo::{self, SweepSpec};
use logsparse::tdoa::{self, Grid, Zone};

fn sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("sweep");
    group
        .sample_size(10)
        .measurement_time(Duration::from_secs(20));
    for parallel in [true, false] {
        let spec = SweepSpec {
            ks: vec![2, 3],
            noise_ns: vec![1.0],
            trials: 8,
            parallel,
            ..SweepSpec::default()
        };
        let label = if parallel { "parallel" } else { "sequential" };
        group.bench_with_input(BenchmarkId::from_parameter(label), &spec, |b, spec| {
            b.iter(|| black_box(montecarlo::sweep(spec).unwrap()))
        });
    }
    group.finish();
}

/// Off-grid scene, so the locator evaluates refinement candidates.
fn refinement(c: &mut Criterion) {
    let zone = Zone::default();
    let grid = Grid::regular(&zone, 21, 21).unwrap();
    let mut scene = montecarlo::random_scene(&zone, &grid, 6, 2, 0.0, 3);
    for t in &mut scene.targets {
        t[0] = (t[0] + 250.0).min(zone.max[0]);
    }
    let table = tdoa::true_delays(&scene).unwrap();
    let mut group = c.benchmark_group("refinement");
    group
        .sample_size(10)
        .measurement_time(Duration::from_secs(20));
    for parallel in [true, false] {
        let cfg = LocatorConfig {
            parallel,
            ..LocatorConfig::with_targets(2)
        };
        let label = if parallel { "parallel" } else { "sequential" };
        group.bench_with_input(BenchmarkId::from_parameter(label), &cfg, |b, cfg| {
            b.iter(|| {
                black_box(locate(&grid, &scene.receivers, &table, cfg, None).map(|r| r.fa_score))
            })
        });
    }
    group.finish();
}

criterion_group!(benches, sweep, refinement);
criterion_main!(benches);
