use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use ocplab::hjb::{dp_value_oracle, min_time_steps, solve_hjb};
use ocplab::pmp::{flow_backward, shoot_pmp};
use ocplab::problems::registry::{registered, Bounds};
use ocplab_bench::problem;

fn hjb(c: &mut Criterion) {
    let spec = problem("ex22");
    let space = Bounds::interval(-0.9, 2.0);
    let mut g = c.benchmark_group("solve_hjb");
    g.sample_size(10);
    for nx in [80, 160, 320] {
        let nt = min_time_steps(&spec, &space, nx).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(nx), &nx, |b, &nx| {
            b.iter(|| solve_hjb(&spec, &space, black_box(nx), nt).unwrap())
        });
    }
    g.finish();
}

fn flows(c: &mut Criterion) {
    let spec = problem("ex23");
    c.bench_function("flow_backward/ex23_branching", |b| {
        b.iter(|| flow_backward(&spec, black_box(&[0.0]), 400).unwrap())
    });
    c.bench_function("flow_backward/ex23_regular", |b| {
        b.iter(|| flow_backward(&spec, black_box(&[0.7]), 400).unwrap())
    });
}

fn shooting(c: &mut Criterion) {
    let r = registered("ex22").unwrap();
    let mut g = c.benchmark_group("shoot_pmp");
    g.sample_size(10);
    g.bench_function("ex22", |b| {
        b.iter(|| shoot_pmp(&r.spec, black_box(&[0.5]), 0.3, &r.xi_box, 41, 200).unwrap())
    });
    g.finish();
}

fn oracle(c: &mut Criterion) {
    let spec = problem("ex22");
    let mut g = c.benchmark_group("dp_value_oracle");
    g.sample_size(10);
    g.bench_function("ex22_nt100_mesh21", |b| {
        b.iter(|| dp_value_oracle(&spec, black_box(&[0.5]), 0.3, 100, 21).unwrap())
    });
    g.finish();
}

criterion_group!(benches, hjb, flows, shooting, oracle);
criterion_main!(benches);
