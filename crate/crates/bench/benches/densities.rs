use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use solvdiff_bench::{interior_point, maps, models};
use solvdiff_core::montecarlo::{path_rng, StepSampler, DEFAULT_TABLE_TOL};

fn transition_pdf(c: &mut Criterion) {
    let mut g = c.benchmark_group("transition_pdf");
    for (name, m) in models() {
        let x0 = interior_point(&m);
        g.bench_function(name, |b| b.iter(|| m.transition_pdf(black_box(0.7), x0, black_box(x0 + 0.3))));
    }
    g.finish();
}

fn map_and_inverse(c: &mut Criterion) {
    let mut g = c.benchmark_group("map");
    for (name, fd) in maps() {
        let x = interior_point(fd.model());
        let f = fd.map_f(x).expect("interior value");
        g.bench_function(format!("{name}/F"), |b| b.iter(|| fd.map_f(black_box(x))));
        g.bench_function(format!("{name}/inverse"), |b| b.iter(|| fd.inverse_map(black_box(f))));
        g.bench_function(format!("{name}/sigma"), |b| b.iter(|| fd.sigma_at_x(black_box(x))));
        g.bench_function(format!("{name}/p_F"), |b| b.iter(|| fd.transition_pdf_f_at_x(black_box(0.7), x, black_box(x * 1.1))));
    }
    g.finish();
}

fn sampling(c: &mut Criterion) {
    let mut g = c.benchmark_group("sampling");
    g.sample_size(10);
    for (name, fd) in maps() {
        let x0 = interior_point(fd.model());
        g.bench_function(format!("{name}/table"), |b| b.iter(|| StepSampler::from_x(&fd, black_box(0.5), x0, DEFAULT_TABLE_TOL)));
        let table = StepSampler::from_x(&fd, 0.5, x0, DEFAULT_TABLE_TOL).expect("table builds");
        let mut rng = path_rng(1, 0);
        g.bench_function(format!("{name}/draw"), |b| b.iter(|| table.draw(&mut rng)));
    }
    g.finish();
}

criterion_group!(benches, transition_pdf, map_and_inverse, sampling);
criterion_main!(benches);
