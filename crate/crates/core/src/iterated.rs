//! The proximal-point sequence `theta_{k+1} = prox_{L/lambda}(theta_k)` from
//! `theta_0 = 0`, with geometrically tightening per-step tolerances.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gram::Gram;
use crate::losses::{GscRadius, LossModel};
use crate::prox_newton::{newton_decrement, solve_subproblem, Estimator, NewtonOptions, Problem, DEFAULT_MAX_ITER};

/// Growth factor of the tolerance schedule.
pub const SCHEDULE_BASE: f64 = 1.4;

/// Tolerance used to re-solve the exact chain in [`true_decrement_audit`].
pub const AUDIT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxRunConfig {
    pub lambda: f64,
    pub steps: usize,
    pub target_eps: f64,
    /// `schedule[k]` bounds the decrement of step `k + 1`.
    pub schedule: Vec<f64>,
    pub max_iter: usize,
}

/// Build a run configuration with `eps_k = eps * 1.4^(k - t) / t`.
///
/// With `enforce_bound`, `eps` must not exceed `sqrt(lambda) / (2 R)`; the
/// check is skipped when `R = 0`.
pub fn make_schedule(
    lambda: f64,
    steps: usize,
    target_eps: f64,
    radius: GscRadius,
    enforce_bound: bool,
) -> Result<ProxRunConfig> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("at least one proximal step is required".into()));
    }
    if !(target_eps > 0.0) || !target_eps.is_finite() {
        return Err(Error::InvalidArgument(format!("target tolerance must be positive, got {target_eps}")));
    }
    if enforce_bound && radius.0 > 0.0 {
        let bound = lambda.sqrt() / (2.0 * radius.0);
        if target_eps > bound {
            return Err(Error::ToleranceBound { eps: target_eps, bound });
        }
    }
    let t = steps as f64;
    let schedule = (1..=steps)
        .map(|k| target_eps * SCHEDULE_BASE.powi(k as i32 - steps as i32) / t)
        .collect();
    Ok(ProxRunConfig {
        lambda,
        steps,
        target_eps,
        schedule,
        max_iter: DEFAULT_MAX_ITER,
    })
}

/// Default for the bound check: on for logistic, off for squared loss.
pub fn enforce_bound_default(loss: LossModel) -> bool {
    matches!(loss, LossModel::Logistic)
}

#[derive(Debug, Clone)]
pub struct ProxTrajectory {
    /// `t + 1` iterates, the first being zero.
    pub iterates: Vec<Estimator>,
    pub achieved_decrements: Vec<f64>,
    pub newton_iterations: Vec<usize>,
    /// Wall time elapsed after each step, cumulative.
    pub elapsed: Vec<Duration>,
}

impl ProxTrajectory {
    pub fn steps(&self) -> usize {
        self.achieved_decrements.len()
    }

    pub fn last(&self) -> &Estimator {
        self.iterates.last().expect("trajectory holds the zero iterate")
    }
}

/// Run `config.steps` proximal steps, keeping every iterate.
pub fn run_iterated_tikhonov<G: Gram + ?Sized>(
    problem: &Problem<'_, G>,
    config: &ProxRunConfig,
) -> Result<ProxTrajectory> {
    if config.schedule.len() != config.steps {
        return Err(Error::InvalidArgument(format!(
            "schedule has {} entries for {} steps",
            config.schedule.len(),
            config.steps
        )));
    }
    let n = problem.labels.len();
    let start = Instant::now();
    let mut traj = ProxTrajectory {
        iterates: Vec::with_capacity(config.steps + 1),
        achieved_decrements: Vec::with_capacity(config.steps),
        newton_iterations: Vec::with_capacity(config.steps),
        elapsed: Vec::with_capacity(config.steps),
    };
    traj.iterates.push(Estimator::zeros(n));
    for (k, &tol) in config.schedule.iter().enumerate() {
        let options = NewtonOptions {
            tol,
            max_iter: config.max_iter,
        };
        let reference = &traj.iterates[k];
        let state = solve_subproblem(problem, reference, config.lambda, options).map_err(|e| Error::Step {
            step: k + 1,
            source: Box::new(e),
        })?;
        traj.achieved_decrements.push(state.decrement);
        traj.newton_iterations.push(state.iterations);
        traj.iterates.push(state.current);
        traj.elapsed.push(start.elapsed());
    }
    Ok(traj)
}

/// Decrement of the final iterate against the exact subproblem of the last
/// step, whose reference is re-solved from zero at `audit_tol`.
pub fn true_decrement_audit<G: Gram + ?Sized>(
    trajectory: &ProxTrajectory,
    problem: &Problem<'_, G>,
    lambda: f64,
    audit_tol: f64,
) -> Result<f64> {
    let t = trajectory.steps();
    if t == 0 {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    let n = problem.labels.len();
    let options = NewtonOptions {
        tol: audit_tol,
        max_iter: DEFAULT_MAX_ITER,
    };
    let mut exact = Estimator::zeros(n);
    for step in 1..t {
        exact = solve_subproblem(problem, &exact, lambda, options)
            .map_err(|e| Error::Step {
                step,
                source: Box::new(e),
            })?
            .current;
    }
    newton_decrement(problem, trajectory.last(), &exact, lambda)
}
