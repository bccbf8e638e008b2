use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gpct_core::{Hyperparameters, MultiGp, TrainingSet};
use nalgebra::DMatrix;

fn grid(m: usize) -> TrainingSet {
    let x = DMatrix::from_fn(3, m, |i, j| ((j * (i + 3)) as f64 * 0.37).sin() * 3.0);
    let y = DMatrix::from_fn(m, 1, |j, _| (x[(0, j)] * 0.8).sin() + 0.1 * x[(2, j)]);
    TrainingSet::new(x, y).unwrap()
}

pub fn criterion_benchmark(c: &mut Criterion) {
    let phi = [Hyperparameters::new(1.5, 1.0, 1e-3).unwrap()];
    let mut group = c.benchmark_group("gp");
    for m in [50, 200, 990] {
        let set = grid(m);
        group.bench_with_input(BenchmarkId::new("fit", m), &set, |b, set| b.iter(|| MultiGp::fit(set, &phi).unwrap()));
        let gp = MultiGp::fit(&set, &phi).unwrap();
        let q = [0.3, -0.2, 1.1];
        group.bench_with_input(BenchmarkId::new("mean", m), &gp, |b, gp| b.iter(|| gp.predict_mean(&q).unwrap()));
        group.bench_with_input(BenchmarkId::new("mean_and_std", m), &gp, |b, gp| b.iter(|| gp.predict(&q).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, criterion_benchmark);
criterion_main!(benches);
