//! Iterated Tikhonov regularization for kernel methods with generalized
//! self-concordant losses.
//!
//! The estimator applies `t` proximal steps of the empirical risk,
//! `theta_{k+1} = argmin L(theta) + lambda/2 ||theta - theta_k||^2` from
//! `theta_0 = 0`, each solved by damped Newton with a decrement-based
//! stopping rule. For the squared loss the same estimator has a closed-form
//! spectral filter, implemented independently in [`spectral`].
//!
//! Modules, bottom-up:
//!
//! * [`losses`]: logistic and squared losses with three derivatives.
//! * [`bernoulli`], [`kernels`], [`structured`]: periodic spline kernels,
//!   dense Gram matrices and a linear-time operator for order 2.
//! * [`prox_newton`], [`iterated`]: the subproblem solver and the outer
//!   proximal sequence with its per-step tolerance schedule.
//! * [`spectral`]: filter estimators, qualification and degrees of freedom.
//! * [`synthetic`], [`risk`]: planted-smoothness datasets and Monte Carlo
//!   excess risk.
//! * [`harness`]: sweeps, best-lambda selection and learning-rate fits.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bernoulli;
pub mod error;
pub mod gram;
pub mod harness;
pub mod iterated;
pub mod kernels;
pub mod losses;
pub mod prox_newton;
pub mod risk;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod structured;
pub mod synthetic;

pub use error::{Error, Result};
pub use gram::Gram;
pub use harness::{fit_rate, run_sweep, theoretical_lambda_rate, theoretical_rate, ExperimentRecord, RateFit, SweepConfig};
pub use iterated::{make_schedule, run_iterated_tikhonov, true_decrement_audit, ProxRunConfig, ProxTrajectory};
pub use kernels::{gram_matrix, KernelMatrix, KernelSpec};
pub use losses::{GscRadius, LossModel};
pub use prox_newton::{Estimator, NewtonOptions, Problem};
pub use spectral::{filter_apply, FilterSpec};
pub use risk::{McSample, RiskEstimate};
pub use structured::SplineGram2;
pub use synthetic::{Dataset, TaskSpec};
