//! Bound-constrained nonlinear least squares.
//!
//! Minimizes `0.5 * ||r(x)||^2` over a box with a damped Gauss-Newton
//! (Levenberg-Marquardt) iteration. Each iteration first tries the undamped
//! Gauss-Newton step; Marquardt damping is switched on only when a step fails
//! to decrease the loss and is relaxed again after successes. Variables that
//! sit on a bound with the gradient pointing outward are frozen for the step,
//! and trial points are projected back onto the box.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizeError {
    #[error("residuals are not finite at the starting point")]
    NonFiniteStart,
    #[error("starting point component {index} = {value} lies outside [{lo}, {hi}]")]
    StartOutOfBounds {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
}

/// A residual function `r: R^n -> R^m`.
pub trait LeastSquaresProblem {
    fn residuals(&self, x: &[f64]) -> Vec<f64>;

    /// Analytic `m x n` Jacobian, if the problem provides one.
    fn jacobian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

impl<F> LeastSquaresProblem for F
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    fn residuals(&self, x: &[f64]) -> Vec<f64> {
        self(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    /// Use [`LeastSquaresProblem::jacobian`], falling back to forward
    /// differences when the problem has none.
    Analytic,
    ForwardDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    /// Stop when successive losses differ by at most `f_tol * max(1, f)`.
    pub f_tol: f64,
    /// Stop when a projected step is shorter than `step_tol * (step_tol + |x|)`.
    pub step_tol: f64,
    pub jacobian: JacobianMode,
    /// Relative forward-difference step, with an absolute floor of 1e-9.
    pub fd_step: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            f_tol: 1e-16,
            step_tol: 1e-12,
            jacobian: JacobianMode::Analytic,
            fd_step: 1e-6,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        let bad = |m: &str| Err(OptimizeError::InvalidConfig(m.into()));
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if !(self.f_tol > 0.0 && self.step_tol > 0.0 && self.fd_step > 0.0) {
            return bad("tolerances and fd_step must be positive");
        }
        Ok(())
    }
}

/// Inclusive per-parameter box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
}

impl Bound {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn unbounded() -> Self {
        Self {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ConvergedF,
    ConvergedStep,
    MaxIters,
    Failure,
}

impl Termination {
    pub fn converged(self) -> bool {
        matches!(self, Termination::ConvergedF | Termination::ConvergedStep)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iterate {
    pub x: Vec<f64>,
    pub loss: f64,
}

/// Accepted iterates of one minimization, starting point included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub iterates: Vec<Iterate>,
    pub termination: Termination,
    /// Accepted steps, `iterates.len() - 1`.
    pub iterations: usize,
    /// Residual evaluations, Jacobian differencing included.
    pub evaluations: usize,
    /// Seconds.
    pub wall_time: f64,
}

impl OptimizationTrace {
    pub fn solution(&self) -> &[f64] {
        &self.iterates.last().expect("trace holds the start").x
    }

    pub fn loss(&self) -> f64 {
        self.iterates.last().expect("trace holds the start").loss
    }
}

fn half_norm2(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

fn all_finite(r: &[f64]) -> bool {
    r.iter().all(|v| v.is_finite())
}

/// Forward-difference Jacobian at `x` given `r0 = r(x)`. Steps that would
/// leave the box are taken backwards instead.
pub fn forward_difference_jacobian<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    x: &[f64],
    r0: &[f64],
    rel_step: f64,
    bounds: &[Bound],
) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(r0.len(), x.len());
    let mut probe = x.to_vec();
    for j in 0..x.len() {
        let mut h = (rel_step * x[j].abs()).max(1e-9);
        if bounds.get(j).is_some_and(|b| x[j] + h > b.hi) {
            h = -h;
        }
        probe[j] = x[j] + h;
        let r = problem.residuals(&probe);
        probe[j] = x[j];
        for i in 0..r0.len() {
            jac[(i, j)] = (r[i] - r0[i]) / h;
        }
    }
    jac
}

/// Largest relative disagreement between the problem's analytic Jacobian and
/// forward differences at `x`, measured as `||J_a - J_fd||_F / ||J_a||_F`.
/// `None` when the problem has no analytic Jacobian.
pub fn jacobian_discrepancy<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    x: &[f64],
    rel_step: f64,
) -> Option<f64> {
    let analytic = problem.jacobian(x)?;
    let r0 = problem.residuals(x);
    let fd = forward_difference_jacobian(problem, x, &r0, rel_step, &[]);
    let scale = analytic.norm().max(f64::MIN_POSITIVE);
    Some((analytic - fd).norm() / scale)
}

/// Minimizes `0.5 * ||r(x)||^2` subject to `bounds`. An empty `bounds` slice
/// means unconstrained.
pub fn minimize<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    x0: &[f64],
    bounds: &[Bound],
    config: &OptimizerConfig,
) -> Result<OptimizationTrace, OptimizeError> {
    config.validate()?;
    let n = x0.len();
    let bounds: Vec<Bound> = if bounds.is_empty() {
        vec![Bound::unbounded(); n]
    } else if bounds.len() == n {
        bounds.to_vec()
    } else {
        return Err(OptimizeError::InvalidConfig(format!(
            "{} bounds for {} parameters",
            bounds.len(),
            n
        )));
    };
    for (index, (b, &v)) in bounds.iter().zip(x0).enumerate() {
        if !(b.lo < b.hi) {
            return Err(OptimizeError::InvalidConfig(format!(
                "bound {index} has lo >= hi"
            )));
        }
        if !b.contains(v) {
            return Err(OptimizeError::StartOutOfBounds {
                index,
                value: v,
                lo: b.lo,
                hi: b.hi,
            });
        }
    }

    let start = Instant::now();
    let mut x = x0.to_vec();
    let mut r = problem.residuals(&x);
    let mut evaluations = 1;
    if !all_finite(&r) {
        return Err(OptimizeError::NonFiniteStart);
    }
    let mut f = half_norm2(&r);
    let mut iterates = vec![Iterate {
        x: x.clone(),
        loss: f,
    }];
    let mut lambda = 0.0f64;

    let termination = 'outer: loop {
        if iterates.len() > config.max_iters {
            break Termination::MaxIters;
        }
        let jac = match config.jacobian {
            JacobianMode::Analytic => problem.jacobian(&x),
            JacobianMode::ForwardDifference => None,
        }
        .unwrap_or_else(|| {
            evaluations += n;
            forward_difference_jacobian(problem, &x, &r, config.fd_step, &bounds)
        });
        if !jac.iter().all(|v| v.is_finite()) {
            break Termination::Failure;
        }
        let grad = jac.tr_mul(&DVector::from_column_slice(&r));

        let free: Vec<usize> = (0..n)
            .filter(|&i| {
                !((x[i] <= bounds[i].lo && grad[i] > 0.0)
                    || (x[i] >= bounds[i].hi && grad[i] < 0.0))
            })
            .collect();
        if free.is_empty() || free.iter().all(|&i| grad[i] == 0.0) {
            break Termination::ConvergedStep;
        }
        let jac_free = jac.select_columns(free.iter());
        let normal = jac_free.tr_mul(&jac_free);
        let g_free = DVector::from_iterator(free.len(), free.iter().map(|&i| grad[i]));
        let max_diag = normal.diagonal().amax().max(f64::MIN_POSITIVE);

        loop {
            let mut damped = normal.clone();
            for k in 0..free.len() {
                damped[(k, k)] += lambda * normal[(k, k)].max(1e-12 * max_diag);
            }
            let Some(chol) = damped.cholesky() else {
                lambda = if lambda == 0.0 { 1e-3 } else { lambda * 10.0 };
                if lambda > 1e20 {
                    break 'outer Termination::Failure;
                }
                continue;
            };
            let delta = chol.solve(&(-&g_free));

            let mut trial = x.clone();
            for (k, &i) in free.iter().enumerate() {
                trial[i] = bounds[i].clamp(x[i] + delta[k]);
            }
            let step_norm = trial
                .iter()
                .zip(&x)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if step_norm <= config.step_tol * (config.step_tol + x_norm) {
                break 'outer Termination::ConvergedStep;
            }

            let r_trial = problem.residuals(&trial);
            evaluations += 1;
            let f_trial = half_norm2(&r_trial);
            if all_finite(&r_trial) && f_trial <= f {
                let decrease = f - f_trial;
                x = trial;
                r = r_trial;
                f = f_trial;
                iterates.push(Iterate {
                    x: x.clone(),
                    loss: f,
                });
                lambda = if lambda < 1e-9 { 0.0 } else { lambda / 10.0 };
                if decrease <= config.f_tol * f.max(1.0) {
                    break 'outer Termination::ConvergedF;
                }
                break;
            }
            lambda = if lambda == 0.0 { 1e-3 } else { lambda * 10.0 };
            if lambda > 1e20 {
                break 'outer Termination::Failure;
            }
        }
    };

    Ok(OptimizationTrace {
        iterations: iterates.len() - 1,
        iterates,
        termination,
        evaluations,
        wall_time: start.elapsed().as_secs_f64(),
    })
}
