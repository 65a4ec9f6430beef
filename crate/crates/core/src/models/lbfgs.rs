//! Limited-memory BFGS with a backtracking Armijo line search.

use std::collections::VecDeque;

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Copy, Clone, Debug)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop once the gradient norm is at or below this value.
    pub tol: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iter: 1000,
            tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

const ARMIJO_C1: f64 = 1e-4;
const MIN_STEP: f64 = 1e-20;

/// Minimizes a smooth convex function given as `x ↦ (f(x), ∇f(x))`.
pub fn minimize<F>(mut objective: F, x0: DVector<f64>, cfg: &LbfgsConfig) -> Result<Minimum>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let mut x = x0;
    let (mut fx, mut g) = objective(&x);
    let mut history: VecDeque<(DVector<f64>, DVector<f64>, f64)> =
        VecDeque::with_capacity(cfg.memory);

    for iter in 0..=cfg.max_iter {
        let gnorm = g.norm();
        if !gnorm.is_finite() || !fx.is_finite() {
            return Err(Error::ConvergenceFailure {
                iterations: iter,
                residual: gnorm,
            });
        }
        if gnorm <= cfg.tol {
            return Ok(Minimum {
                x,
                value: fx,
                grad_norm: gnorm,
                iterations: iter,
            });
        }
        if iter == cfg.max_iter {
            return Err(Error::ConvergenceFailure {
                iterations: iter,
                residual: gnorm,
            });
        }

        let mut dir = two_loop(&g, &history);
        let mut slope = g.dot(&dir);
        if slope >= 0.0 {
            history.clear();
            dir = -&g;
            slope = -gnorm * gnorm;
        }
        let initial = if history.is_empty() {
            (1.0 / gnorm).min(1.0)
        } else {
            1.0
        };

        let step = match line_search(&mut objective, &x, fx, &g, &dir, slope, initial) {
            Some(step) => step,
            None if !history.is_empty() => {
                // Stale curvature pairs; retry from steepest descent.
                history.clear();
                let dir = -&g;
                match line_search(
                    &mut objective,
                    &x,
                    fx,
                    &g,
                    &dir,
                    -gnorm * gnorm,
                    (1.0 / gnorm).min(1.0),
                ) {
                    Some(step) => step,
                    None => {
                        return Err(Error::ConvergenceFailure {
                            iterations: iter,
                            residual: gnorm,
                        })
                    }
                }
            }
            None => {
                return Err(Error::ConvergenceFailure {
                    iterations: iter,
                    residual: gnorm,
                })
            }
        };

        let s = &step.x - &x;
        let y = &step.g - &g;
        let sy = s.dot(&y);
        if sy > 1e-14 * s.norm() * y.norm() && sy > 0.0 {
            if history.len() == cfg.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x = step.x;
        fx = step.f;
        g = step.g;
    }
    unreachable!("loop returns on its last iteration")
}

struct Step {
    x: DVector<f64>,
    f: f64,
    g: DVector<f64>,
}

fn two_loop(
    g: &DVector<f64>,
    history: &VecDeque<(DVector<f64>, DVector<f64>, f64)>,
) -> DVector<f64> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * s.dot(&q);
        q.axpy(-a, y, 1.0);
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        q *= s.dot(y) / y.dot(y);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&q);
        q.axpy(a - b, s, 1.0);
    }
    -q
}

/// Backtracking on the Armijo condition. Near the optimum the sufficient-decrease test
/// falls below the resolution of `f`, so a step that strictly shrinks the gradient norm
/// without raising `f` beyond rounding is accepted as well.
fn line_search<F>(
    objective: &mut F,
    x: &DVector<f64>,
    fx: f64,
    g: &DVector<f64>,
    dir: &DVector<f64>,
    slope: f64,
    initial: f64,
) -> Option<Step>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let gnorm = g.norm();
    let rounding = 64.0 * f64::EPSILON * fx.abs().max(1e-300);
    let mut alpha = initial;
    while alpha >= MIN_STEP {
        let xn = x + dir * alpha;
        let (fnew, gnew) = objective(&xn);
        if fnew.is_finite() {
            let armijo = fnew <= fx + ARMIJO_C1 * alpha * slope;
            let flat = fnew <= fx + rounding && gnew.norm() < gnorm;
            if armijo || flat {
                return Some(Step {
                    x: xn,
                    f: fnew,
                    g: gnew,
                });
            }
        }
        alpha *= 0.5;
    }
    None
}
