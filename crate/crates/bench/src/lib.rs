//! Benchmarks for one deletion round of each update rule, for data valuation and for
//! training from scratch. Run with `cargo bench -p dvwu-bench`.

use std::hint::black_box;

use criterion::{BenchmarkId, Criterion};
use dvwu_core::data::{gen_synthetic, norm_bound};
use dvwu_core::models::{self, hessian_at};
use dvwu_core::unlearn::{
    dvwu_newton_step, hessian_downdate, unit_weights, unlearn_gradient_ascent, unlearn_influence,
    unlearn_newton_unweighted, weighted_gradient, InfluenceFactor, RoundSize,
};
use dvwu_core::valuation::knn_sv;
use dvwu_core::{Dataset, Loss, PointId, SynthConfig};

pub const LAMBDA: f64 = 0.001;

/// `n` synthetic points with 20 features scaled into the unit ball.
pub fn fixture(n: usize, seed: u64) -> Dataset {
    let cfg = SynthConfig {
        n,
        d_informative: 18,
        d_redundant: 2,
        positive_ratio: 0.5,
        noise_ratio: 0.05,
        cube_side: 2.0,
        seed,
    };
    norm_bound(&gen_synthetic(&cfg).unwrap()).unwrap().0
}

pub fn updates(c: &mut Criterion) {
    let loss = Loss::huberized_svm(2.0);
    let data = fixture(5000, 1);
    let model = models::train(&data, LAMBDA, loss, None, 1e-9).unwrap();
    let factor = InfluenceFactor::new(&model.hessian).unwrap();
    let mut group = c.benchmark_group("deletion_round");
    for m in [10usize, 100, 500] {
        let ids: Vec<PointId> = (0..m as u64).map(|i| PointId(i * 7)).collect();
        let (_, del) = data.remove(&ids).unwrap();
        let size = RoundSize::uniform(data.n(), m, 1).unwrap();
        let ones = unit_weights(&del);
        let halves = del.ids().iter().map(|id| (*id, 0.5)).collect();
        group.bench_with_input(BenchmarkId::new("newton", m), &m, |b, _| {
            b.iter(|| {
                let h =
                    hessian_downdate(&model.hessian, &model.w, &del, size, LAMBDA, &loss).unwrap();
                unlearn_newton_unweighted(&model.w, &h, &del, size, LAMBDA, &loss, None).unwrap()
            })
        });
        group.bench_with_input(BenchmarkId::new("value_weighted", m), &m, |b, _| {
            b.iter(|| {
                let h =
                    hessian_downdate(&model.hessian, &model.w, &del, size, LAMBDA, &loss).unwrap();
                let g = weighted_gradient(&model.w, &del, &halves, LAMBDA, &loss, None).unwrap();
                dvwu_newton_step(&model.w, &h, &g, size, LAMBDA).unwrap()
            })
        });
        group.bench_with_input(BenchmarkId::new("influence", m), &m, |b, _| {
            b.iter(|| unlearn_influence(&model.w, &factor, &del, size, LAMBDA, &loss).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("gradient_ascent", m), &m, |b, _| {
            b.iter(|| {
                unlearn_gradient_ascent(&model.w, &del, Some(&ones), 0.01, 1, LAMBDA, &loss)
                    .unwrap()
            })
        });
    }
    group.finish();
}

pub fn valuation(c: &mut Criterion) {
    let mut group = c.benchmark_group("knn_shapley");
    group.sample_size(10);
    let test = fixture(200, 3);
    for n in [1000usize, 5000] {
        let train = fixture(n, 2);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| knn_sv(black_box(&train), &test, 5).unwrap())
        });
    }
    group.finish();
}

pub fn training(c: &mut Criterion) {
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    let data = fixture(5000, 4);
    for (name, loss) in [
        ("logistic", Loss::logistic()),
        ("huberized_svm", Loss::huberized_svm(2.0)),
    ] {
        group.bench_function(name, |b| {
            b.iter(|| models::train(&data, LAMBDA, loss, None, 1e-6).unwrap())
        });
    }
    group.bench_function("hessian", |b| {
        let w = nalgebra::DVector::from_element(data.d(), 0.1);
        b.iter(|| hessian_at(&w, &data, LAMBDA, &Loss::logistic()).unwrap())
    });
    group.finish();
}
