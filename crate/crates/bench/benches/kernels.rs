use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use saddlelab::interpolator::{compute_m, dual_basis, example_family_mpos};
use saddlelab::trainer::{gradient, train, TrainOptions};
use saddlelab::yardstick::simulate_all;
use saddlelab_bench::training_fixture;
use std::hint::black_box;

fn bench_gradient(c: &mut Criterion) {
    let mut group = c.benchmark_group("gradient");
    for &(d, m) in &[(4, 16), (16, 200), (64, 200)] {
        let (ds, _, params) = training_fixture(d, m);
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("d{d}_m{m}")),
            &(),
            |b, _| b.iter(|| gradient(black_box(&params), black_box(&ds))),
        );
    }
    group.finish();
}

fn bench_training(c: &mut Criterion) {
    let (ds, _, params) = training_fixture(16, 50);
    let opts = TrainOptions {
        lr: 0.01,
        max_iters: 1000,
        track_crossings: false,
        ..TrainOptions::default()
    };
    c.bench_function("train_1000_steps_d16_m50", |b| {
        b.iter(|| train(black_box(&params), &ds, &opts).unwrap())
    });
}

fn bench_yardstick(c: &mut Criterion) {
    let (ds, init, _) = training_fixture(8, 64);
    c.bench_function("yardstick_d8_m64", |b| {
        b.iter(|| simulate_all(black_box(&ds), &init).unwrap())
    });
}

fn bench_m(c: &mut Criterion) {
    let ds = example_family_mpos(4, 11.0).unwrap();
    let basis = dual_basis(&ds).unwrap();
    c.bench_function("compute_m_mpos_d4", |b| {
        b.iter(|| compute_m(black_box(&ds), &basis, 8, 0).unwrap())
    });
}

criterion_group!(
    benches,
    bench_gradient,
    bench_training,
    bench_yardstick,
    bench_m
);
criterion_main!(benches);
