mod common;

use common::{fd_gradient, gradient_descent, random_dataset};
use dvwu_core::models::loss::sigmoid;
use dvwu_core::models::{hessian_at, objective, objective_gradient, train};
use dvwu_core::Loss;
use nalgebra::{DMatrix, DVector};

fn huber_derivative(u: f64, gamma: f64) -> f64 {
    if u > 1.0 {
        0.0
    } else if u > 1.0 - gamma {
        -(1.0 - u) / gamma
    } else {
        -1.0
    }
}

#[test]
fn lbfgs_agrees_with_gradient_descent() {
    let data = random_dataset(150, 4, 3);
    let lambda = 0.02;
    let cases: [(Loss, Box<dyn Fn(f64) -> f64>); 2] = [
        (Loss::logistic(), Box::new(|u| -sigmoid(-u))),
        (
            Loss::huberized_svm(2.0),
            Box::new(|u| huber_derivative(u, 2.0)),
        ),
    ];
    for (loss, dloss) in cases {
        let model = train(&data, lambda, loss, None, 1e-11).unwrap();
        let oracle = gradient_descent(&data, lambda, dloss, 1.0, 200_000);
        assert!((&model.w - &oracle).norm() < 1e-8, "{:?}", loss.kind);
    }
}

#[test]
fn objective_gradient_and_hessian_match_finite_differences() {
    let data = random_dataset(80, 5, 4);
    let lambda = 0.03;
    let w = DVector::from_vec(vec![0.4, -1.2, 0.8, 0.1, -0.5]);
    let b = DVector::from_vec(vec![0.01, -0.02, 0.0, 0.03, 0.01]);
    for loss in [Loss::logistic(), Loss::huberized_svm(2.0), Loss::squared()] {
        let g = objective_gradient(&w, &data, lambda, &loss, Some(&b)).unwrap();
        let g_fd = fd_gradient(
            |v| objective(v, &data, lambda, &loss, Some(&b)).unwrap(),
            &w,
            1e-6,
        );
        assert!((&g - &g_fd).norm() / g.norm() < 1e-6, "{:?}", loss.kind);

        let h = hessian_at(&w, &data, lambda, &loss).unwrap();
        let h_fd = DMatrix::from_fn(5, 5, |i, j| {
            let mut p = w.clone();
            let mut m = w.clone();
            p[j] += 1e-5;
            m[j] -= 1e-5;
            let gp = objective_gradient(&p, &data, lambda, &loss, None).unwrap();
            let gm = objective_gradient(&m, &data, lambda, &loss, None).unwrap();
            (gp[i] - gm[i]) / 2e-5
        });
        assert!((&h - &h_fd).norm() / h.norm() < 1e-4, "{:?}", loss.kind);
    }
}

#[test]
fn perturbed_objective_is_minimized() {
    let data = random_dataset(120, 3, 5);
    let b = DVector::from_vec(vec![0.05, -0.1, 0.02]);
    let model = train(&data, 0.01, Loss::logistic(), Some(b.clone()), 1e-11).unwrap();
    let g = objective_gradient(&model.w, &data, 0.01, &Loss::logistic(), Some(&b)).unwrap();
    assert!(g.norm() <= 1e-10);
}
