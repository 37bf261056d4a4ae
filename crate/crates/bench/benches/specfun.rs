use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use solvdiff_core::specfun::{bessel_ik, kummer_m, kummer_u, pcf_d};

fn bessel(c: &mut Criterion) {
    let mut g = c.benchmark_group("bessel_ik");
    for (mu, z) in [(0.5, 0.3), (1.7, 5.0), (10.0, 40.0), (2.5, 700.0)] {
        g.bench_with_input(BenchmarkId::from_parameter(format!("mu={mu},z={z}")), &(mu, z), |b, &(mu, z)| {
            b.iter(|| bessel_ik(black_box(mu), black_box(z)))
        });
    }
    g.finish();
}

fn kummer(c: &mut Criterion) {
    let mut g = c.benchmark_group("kummer");
    for (a, bb, z) in [(0.4, 2.5, 0.5), (1.3, 3.0, 20.0), (6.0, 1.2, 150.0)] {
        let id = format!("a={a},b={bb},z={z}");
        g.bench_with_input(BenchmarkId::new("M", &id), &(a, bb, z), |b, &(a, bb, z)| b.iter(|| kummer_m(black_box(a), black_box(bb), black_box(z))));
        g.bench_with_input(BenchmarkId::new("U", &id), &(a, bb, z), |b, &(a, bb, z)| b.iter(|| kummer_u(black_box(a), black_box(bb), black_box(z))));
    }
    g.finish();
}

fn pcf(c: &mut Criterion) {
    let mut g = c.benchmark_group("pcf_d");
    for (nu, z) in [(-0.5, 1.0), (-2.3, -4.0), (-8.0, 12.0), (-1.2, -25.0)] {
        g.bench_with_input(BenchmarkId::from_parameter(format!("nu={nu},z={z}")), &(nu, z), |b, &(nu, z)| b.iter(|| pcf_d(black_box(nu), black_box(z))));
    }
    g.finish();
}

criterion_group!(benches, bessel, kummer, pcf);
criterion_main!(benches);
