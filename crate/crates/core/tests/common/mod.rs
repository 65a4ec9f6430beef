//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use dvwu_core::{Dataset, PointId};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// `n × d` Gaussian features scaled so every row norm is at most 1, labels from a
/// noisy random hyperplane.
pub fn random_dataset(n: usize, d: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let max = x.row_iter().map(|r| r.norm()).fold(1.0, f64::max);
    x /= max;
    let dir = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = (0..n)
        .map(|i| {
            let s = x.row(i).dot(&dir.transpose()) + 0.3 * rng.sample::<f64, _>(StandardNormal);
            if s >= 0.0 {
                1.0
            } else {
                -1.0
            }
        })
        .collect();
    Dataset::with_sequential_ids(x, y).unwrap()
}

/// Minimizer of `(1/n) Σ ½(wᵀxᵢ − yᵢ)² + (λ/2)‖w‖²`, from the normal equations.
pub fn ridge_closed_form(data: &Dataset, lambda: f64) -> DVector<f64> {
    let n = data.n() as f64;
    let x = data.features();
    let y = DVector::from_column_slice(data.labels());
    let a = x.transpose() * x / n + DMatrix::identity(data.d(), data.d()) * lambda;
    let rhs = x.transpose() * y / n;
    a.lu().solve(&rhs).unwrap()
}

/// KNN utility of the ordered coalition `members` for one test point: the share of
/// the first `min(k, |S|)` members (by distance, then id) whose label matches, over `k`.
fn knn_utility(members: &[usize], order_rank: &[usize], matches: &[bool], k: usize) -> f64 {
    let mut s: Vec<usize> = members.to_vec();
    s.sort_by_key(|&i| order_rank[i]);
    s.iter().take(k).filter(|&&i| matches[i]).count() as f64 / k as f64
}

/// Exact Shapley values of the KNN utility averaged over `test`, by enumerating all
/// `2ⁿ` coalitions.
pub fn brute_force_knn_shapley(train: &Dataset, test: &Dataset, k: usize) -> Vec<f64> {
    let n = train.n();
    assert!(n <= 16);
    let fact: Vec<f64> = (0..=n)
        .scan(1.0, |acc, i| {
            if i > 0 {
                *acc *= i as f64;
            }
            Some(*acc)
        })
        .collect();
    let mut phi = vec![0.0; n];
    for t in 0..test.n() {
        let dist: Vec<f64> = (0..n)
            .map(|i| (train.row(i) - test.row(t)).norm_squared())
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            dist[a]
                .total_cmp(&dist[b])
                .then(train.id(a).cmp(&train.id(b)))
        });
        let mut rank = vec![0; n];
        for (r, &i) in order.iter().enumerate() {
            rank[i] = r;
        }
        let matches: Vec<bool> = (0..n).map(|i| train.label(i) == test.label(t)).collect();
        for mask in 0u32..(1 << n) {
            let members: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let base = knn_utility(&members, &rank, &matches, k);
            let s = members.len();
            for i in 0..n {
                if mask & (1 << i) != 0 {
                    continue;
                }
                let mut with = members.clone();
                with.push(i);
                let gain = knn_utility(&with, &rank, &matches, k) - base;
                phi[i] += fact[s] * fact[n - s - 1] / fact[n] * gain;
            }
        }
    }
    phi.iter().map(|p| p / test.n() as f64).collect()
}

/// A small dataset whose rows sit on an integer grid, so distance ties occur.
pub fn grid_dataset(n: usize, d: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2i32..=2) as f64);
    let y = (0..n)
        .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let ids = (0..n).map(|i| PointId(1000 - 7 * i as u64)).collect();
    Dataset::new(x, y, ids).unwrap()
}

/// Central finite-difference gradient of `f` at `w`.
pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, w: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(w.len(), |j, _| {
        let mut p = w.clone();
        let mut m = w.clone();
        p[j] += h;
        m[j] -= h;
        (f(&p) - f(&m)) / (2.0 * h)
    })
}

/// Plain gradient descent on the regularized objective, written out independently of
/// the library's optimizer. Converges for the smooth losses with row norms ≤ 1.
pub fn gradient_descent(
    data: &Dataset,
    lambda: f64,
    dloss: impl Fn(f64) -> f64,
    step: f64,
    iters: usize,
) -> DVector<f64> {
    let n = data.n() as f64;
    let mut w = DVector::zeros(data.d());
    for _ in 0..iters {
        let mut g = &w * lambda;
        for i in 0..data.n() {
            let x = data.row(i).transpose();
            let y = data.label(i);
            g += &x * (dloss(y * x.dot(&w)) * y / n);
        }
        if g.norm() < 1e-13 {
            break;
        }
        w -= g * step;
    }
    w
}

/// Share of `data` classified correctly by `sign(wᵀx)`, with 0 predicted positive.
pub fn accuracy(w: &DVector<f64>, data: &Dataset) -> f64 {
    let hits = (0..data.n())
        .filter(|&i| {
            let s = (data.row(i) * w)[0];
            (if s >= 0.0 { 1.0 } else { -1.0 }) == data.label(i)
        })
        .count();
    hits as f64 / data.n() as f64
}
