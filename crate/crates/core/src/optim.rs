//! Shared first-order optimization engine.
//!
//! Every stage exposes its objective through [`FusedEvaluator`]: one call
//! computes the loss and the full gradient in a single closed-form pass over
//! image pairs (no per-operation graph, no intermediate materialization).
//! The engine itself is single-threaded; parallelism lives inside the
//! evaluators, which must reduce deterministically.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite loss or gradient at iteration {iteration}")]
    NumericalFailure {
        iteration: usize,
        /// last iterate with a finite loss
        last_finite: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepSchedule {
    Constant,
    Cosine,
}

/// Adam hyper-parameters. `step_size_final` is the cosine-decay floor.
#[derive(Debug, Clone)]
pub struct OptimConfig {
    pub iterations: usize,
    pub step_size: f64,
    pub step_size_final: f64,
    pub schedule: StepSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            iterations: 1000,
            step_size: 1e-2,
            step_size_final: 0.0,
            schedule: StepSchedule::Cosine,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl OptimConfig {
    fn step_at(&self, iter: usize) -> f64 {
        match self.schedule {
            StepSchedule::Constant => self.step_size,
            StepSchedule::Cosine => {
                let t = iter as f64 / self.iterations.max(1) as f64;
                let cos = 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
                self.step_size_final + (self.step_size - self.step_size_final) * cos
            }
        }
    }
}

/// Fused loss + gradient evaluation contract.
///
/// Implementations must be deterministic for fixed inputs and must fill
/// `grad` (length [`FusedEvaluator::dim`]) completely. Per-call cost is
/// expected to be linear in the number of image pairs.
pub trait FusedEvaluator {
    fn dim(&self) -> usize;
    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> f64;
}

/// Result of an optimization run: the best-loss iterate wins, not the last.
#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub loss: f64,
    pub trace: Vec<f64>,
}

/// Adam with bias correction. Returns the best iterate seen; the loss trace
/// records every evaluation in order.
pub fn run_adam<E: FusedEvaluator>(
    evaluator: &mut E,
    x0: &[f64],
    cfg: &OptimConfig,
) -> Result<OptimResult, OptimError> {
    let dim = evaluator.dim();
    assert_eq!(x0.len(), dim, "x0 length does not match evaluator dim");
    let mut x = x0.to_vec();
    let mut m = vec![0.0; dim];
    let mut v = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut trace = Vec::with_capacity(cfg.iterations + 1);

    let mut best_x = x.clone();
    let mut best_loss = f64::INFINITY;
    let mut last_finite = x.clone();

    for iter in 0..cfg.iterations {
        let loss = evaluator.eval(&x, &mut grad);
        trace.push(loss);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(OptimError::NumericalFailure { iteration: iter, last_finite });
        }
        last_finite.copy_from_slice(&x);
        if loss < best_loss {
            best_loss = loss;
            best_x.copy_from_slice(&x);
        }

        let lr = cfg.step_at(iter);
        let b1t = 1.0 - cfg.beta1.powi(iter as i32 + 1);
        let b2t = 1.0 - cfg.beta2.powi(iter as i32 + 1);
        for k in 0..dim {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * grad[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
            let mhat = m[k] / b1t;
            let vhat = v[k] / b2t;
            x[k] -= lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }

    // score the final iterate as well
    let loss = evaluator.eval(&x, &mut grad);
    trace.push(loss);
    if loss.is_finite() && loss < best_loss {
        best_loss = loss;
        best_x.copy_from_slice(&x);
    }
    Ok(OptimResult { x: best_x, loss: best_loss, trace })
}

/// Wraps a closure as an evaluator; handy for tests and small problems.
pub struct FnEvaluator<F: FnMut(&[f64], &mut [f64]) -> f64> {
    dim: usize,
    f: F,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> FnEvaluator<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnEvaluator { dim, f }
    }
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> FusedEvaluator for FnEvaluator<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        (self.f)(x, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_converges() {
        let c = [1.5, -2.0, 0.5];
        let mut ev = FnEvaluator::new(3, |x, g| {
            let mut loss = 0.0;
            for k in 0..3 {
                let d = x[k] - c[k];
                loss += d * d;
                g[k] = 2.0 * d;
            }
            loss
        });
        let cfg = OptimConfig { iterations: 500, step_size: 5e-2, ..Default::default() };
        let res = run_adam(&mut ev, &[0.0; 3], &cfg).unwrap();
        let dist: f64 = res
            .x
            .iter()
            .zip(c.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(dist < 1e-6, "distance to optimum {dist:.3e}");
    }

    #[test]
    fn zero_gradient_stays_put() {
        let mut ev = FnEvaluator::new(2, |_x, g| {
            g.fill(0.0);
            7.0
        });
        let cfg = OptimConfig { iterations: 100, ..Default::default() };
        let res = run_adam(&mut ev, &[3.0, -4.0], &cfg).unwrap();
        assert_eq!(res.x, vec![3.0, -4.0]);
    }

    #[test]
    fn rosenbrock_reference_run() {
        let mut ev = FnEvaluator::new(2, |x, g| {
            let (a, b) = (x[0], x[1]);
            let loss = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            loss
        });
        let cfg = OptimConfig {
            iterations: 20_000,
            step_size: 1e-2,
            step_size_final: 1e-5,
            ..Default::default()
        };
        let res = run_adam(&mut ev, &[-1.2, 1.0], &cfg).unwrap();
        assert!(res.loss < 1e-5, "rosenbrock loss {:.3e}", res.loss);
    }

    #[test]
    fn returned_loss_never_exceeds_initial() {
        let mut ev = FnEvaluator::new(1, |x, g| {
            // oscillatory: Adam may overshoot, the best iterate still wins
            g[0] = (x[0] * 5.0).cos() * 5.0 + 2.0 * x[0];
            x[0] * x[0] + (x[0] * 5.0).sin()
        });
        let cfg = OptimConfig { iterations: 200, step_size: 0.3, ..Default::default() };
        let x0 = [1.0];
        let init_loss = 1.0f64 + (5.0f64).sin();
        let res = run_adam(&mut ev, &x0, &cfg).unwrap();
        assert!(res.loss <= init_loss + 1e-15);
    }

    #[test]
    fn non_finite_reports_iteration_and_last_iterate() {
        let mut count = 0;
        let mut ev = FnEvaluator::new(1, move |x, g| {
            count += 1;
            g[0] = 1.0;
            if count > 3 {
                f64::NAN
            } else {
                x[0]
            }
        });
        let cfg = OptimConfig { iterations: 10, ..Default::default() };
        match run_adam(&mut ev, &[0.0], &cfg) {
            Err(OptimError::NumericalFailure { iteration, last_finite }) => {
                assert_eq!(iteration, 3);
                assert_eq!(last_finite.len(), 1);
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn bit_deterministic_for_fixed_config() {
        let run = || {
            let mut ev = FnEvaluator::new(2, |x, g| {
                g[0] = 2.0 * x[0] + x[1].sin();
                g[1] = x[0].cos() + 2.0 * x[1];
                x[0] * x[0] + x[1] * x[1] + x[0].sin() * x[1]
            });
            let cfg = OptimConfig { iterations: 300, step_size: 2e-2, ..Default::default() };
            run_adam(&mut ev, &[0.7, -0.3], &cfg).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.x, b.x);
        assert_eq!(a.trace, b.trace);
    }
}
