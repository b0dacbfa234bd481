//! Levenberg-Marquardt for problems living on a manifold.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub trait LeastSquares {
    type State: Clone;

    /// Residual vector; the cost is half its squared norm.
    fn residuals(&self, state: &Self::State) -> Result<DVector<f64>>;

    /// Jacobian of the residuals with respect to the local increment.
    fn jacobian(&self, state: &Self::State) -> Result<DMatrix<f64>>;

    /// Applies a local increment.
    fn retract(&self, state: &Self::State, delta: &DVector<f64>) -> Self::State;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmConfig {
    pub max_iterations: usize,
    pub relative_cost_tolerance: f64,
    pub gradient_tolerance: f64,
    pub initial_lambda: f64,
    pub max_lambda: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            relative_cost_tolerance: 1e-12,
            gradient_tolerance: 1e-10,
            initial_lambda: 1e-3,
            max_lambda: 1e16,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    CostChange,
    Gradient,
    ZeroCost,
    MaxIterations,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub termination: Termination,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

fn half_norm2(r: &DVector<f64>) -> f64 {
    0.5 * r.norm_squared()
}

/// Minimizes the problem's cost starting from `state`.
pub fn minimize<P: LeastSquares>(problem: &P, state: P::State, config: &LmConfig) -> Result<(P::State, LmReport)> {
    let mut state = state;
    let mut r = problem.residuals(&state)?;
    let mut cost = half_norm2(&r);
    if !cost.is_finite() {
        return Err(Error::OptimizationFailure("initial cost is not finite".into()));
    }
    let mut report = LmReport {
        iterations: 0,
        initial_cost: cost,
        final_cost: cost,
        termination: Termination::MaxIterations,
        cost_history: alloc::vec![cost],
    };
    let mut lambda = config.initial_lambda;
    let mut jac = problem.jacobian(&state)?;

    while report.iterations < config.max_iterations {
        if cost == 0.0 {
            report.termination = Termination::ZeroCost;
            break;
        }
        let jtj = jac.tr_mul(&jac);
        let grad = jac.tr_mul(&r);
        if grad.amax() < config.gradient_tolerance {
            report.termination = Termination::Gradient;
            break;
        }
        report.iterations += 1;
        let max_diag = jtj.diagonal().max().max(f64::MIN_POSITIVE);
        let accepted = loop {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                let d = jtj[(i, i)].max(1e-12 * max_diag);
                a[(i, i)] += lambda * d;
            }
            let step = a.cholesky().map(|c| -c.solve(&grad));
            let trial = step.and_then(|delta| {
                let s = problem.retract(&state, &delta);
                let tr = problem.residuals(&s).ok()?;
                let tc = half_norm2(&tr);
                tc.is_finite().then_some((s, tr, tc))
            });
            match trial {
                Some((s, tr, tc)) if tc <= cost => break Some((s, tr, tc)),
                _ => {
                    lambda *= 10.0;
                    if lambda > config.max_lambda {
                        break None;
                    }
                }
            }
        };
        let Some((s, tr, tc)) = accepted else {
            // No descent direction left at any damping: the current state is
            // a stationary point to working precision.
            if report.iterations > 1 || grad.amax() < 1e-6 * (1.0 + cost) {
                report.termination = Termination::CostChange;
                break;
            }
            return Err(Error::OptimizationFailure(format!(
                "no decreasing step with damping up to {:e}; cost {cost:e}, gradient {:e}",
                config.max_lambda,
                grad.amax()
            )));
        };
        let change = (cost - tc) / cost.max(f64::MIN_POSITIVE);
        state = s;
        r = tr;
        cost = tc;
        report.cost_history.push(cost);
        lambda = (lambda / 10.0).max(1e-20);
        if change < config.relative_cost_tolerance {
            report.termination = Termination::CostChange;
            break;
        }
        jac = problem.jacobian(&state)?;
    }
    report.final_cost = cost;
    Ok((state, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math;
    use approx::assert_relative_eq;

    /// Fits `y = a exp(b x)`.
    struct ExpFit {
        xs: Vec<f64>,
        ys: Vec<f64>,
    }

    impl LeastSquares for ExpFit {
        type State = [f64; 2];
        fn residuals(&self, s: &[f64; 2]) -> Result<DVector<f64>> {
            Ok(DVector::from_iterator(
                self.xs.len(),
                self.xs.iter().zip(&self.ys).map(|(x, y)| y - s[0] * math::exp(s[1] * x)),
            ))
        }
        fn jacobian(&self, s: &[f64; 2]) -> Result<DMatrix<f64>> {
            let mut j = DMatrix::zeros(self.xs.len(), 2);
            for (i, x) in self.xs.iter().enumerate() {
                let e = math::exp(s[1] * x);
                j[(i, 0)] = -e;
                j[(i, 1)] = -s[0] * x * e;
            }
            Ok(j)
        }
        fn retract(&self, s: &[f64; 2], d: &DVector<f64>) -> [f64; 2] {
            [s[0] + d[0], s[1] + d[1]]
        }
    }

    #[test]
    fn recovers_exponential() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let ys = xs.iter().map(|x| 2.5 * math::exp(-1.3 * x)).collect();
        let p = ExpFit { xs, ys };
        let (s, rep) = minimize(&p, [1.0, 0.0], &LmConfig::default()).unwrap();
        assert_relative_eq!(s[0], 2.5, epsilon = 1e-8);
        assert_relative_eq!(s[1], -1.3, epsilon = 1e-8);
        assert!(rep.final_cost < 1e-16);
        assert!(rep.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    /// Rosenbrock as residuals `(1 - x, 10 (y - x^2))`.
    struct Rosenbrock;

    impl LeastSquares for Rosenbrock {
        type State = [f64; 2];
        fn residuals(&self, s: &[f64; 2]) -> Result<DVector<f64>> {
            Ok(DVector::from_vec(alloc::vec![1.0 - s[0], 10.0 * (s[1] - s[0] * s[0])]))
        }
        fn jacobian(&self, s: &[f64; 2]) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, -20.0 * s[0], 10.0]))
        }
        fn retract(&self, s: &[f64; 2], d: &DVector<f64>) -> [f64; 2] {
            [s[0] + d[0], s[1] + d[1]]
        }
    }

    #[test]
    fn solves_rosenbrock() {
        let (s, rep) = minimize(&Rosenbrock, [-1.2, 1.0], &LmConfig::default()).unwrap();
        assert_relative_eq!(s[0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(s[1], 1.0, epsilon = 1e-9);
        assert!(rep.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn iteration_cap_is_respected() {
        let cfg = LmConfig {
            max_iterations: 2,
            ..LmConfig::default()
        };
        let (_, rep) = minimize(&Rosenbrock, [-1.2, 1.0], &cfg).unwrap();
        assert_eq!(rep.iterations, 2);
        assert_eq!(rep.termination, Termination::MaxIterations);
    }
}
