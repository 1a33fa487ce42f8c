//! Timings for the four hot loops: velocity evaluation, trace statistics,
//! schedule derivation, and SSIM scoring.

use std::collections::BTreeSet;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use magcache_core::cache::{derive_schedule, CacheConfig};
use magcache_core::calibrate::MagnitudeCurve;
use magcache_core::flowsim::{marginal_velocity, sample_baseline, SimSpec};
use magcache_core::image::GrayImage;
use magcache_core::metrics::ssim;
use magcache_core::stats::MagnitudeStats;

fn bench_marginal_velocity(c: &mut Criterion) {
    let spec = SimSpec::default();
    let (gmm, _) = spec.build().unwrap();
    let x: Vec<f64> = (0..gmm.dim()).map(|i| (i as f64 * 0.37).sin()).collect();
    c.bench_function("marginal_velocity_256d_8comp", |b| {
        b.iter(|| marginal_velocity(black_box(&gmm), black_box(&x), black_box(0.6)))
    });
}

fn bench_stats(c: &mut Criterion) {
    let spec = SimSpec::default();
    let (gmm, sampler) = spec.build().unwrap();
    let (_, trace) = sample_baseline(&gmm, &sampler, spec.seed).unwrap();
    c.bench_function("stats_50x32x256", |b| {
        b.iter(|| MagnitudeStats::compute(black_box(&trace)).unwrap())
    });
}

fn bench_derive_schedule(c: &mut Criterion) {
    let gamma: Vec<f64> = std::iter::once(1.0)
        .chain((1..50).map(|t| 0.97 + 0.0005 * t as f64))
        .collect();
    let curve = MagnitudeCurve::new("bench", gamma, BTreeSet::new(), "").unwrap();
    let config = CacheConfig::new(0.12, 4, 0.2).unwrap();
    c.bench_function("derive_schedule_50", |b| {
        b.iter(|| derive_schedule(black_box(&curve), black_box(&config)).unwrap())
    });
}

fn bench_ssim(c: &mut Criterion) {
    let first = GrayImage::new(
        16,
        16,
        (0..256).map(|i| (i as f64 * 0.618).fract()).collect(),
    )
    .unwrap();
    let second = GrayImage::new(
        16,
        16,
        (0..256)
            .map(|i| ((i as f64 + 3.0) * 0.618).fract())
            .collect(),
    )
    .unwrap();
    c.bench_function("ssim_16x16", |b| {
        b.iter(|| ssim(black_box(&first), black_box(&second)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_marginal_velocity,
    bench_stats,
    bench_derive_schedule,
    bench_ssim
);
criterion_main!(benches);
