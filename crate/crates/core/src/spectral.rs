//! Closed-form spectral filters for the squared loss.
//!
//! The `t`-step iterated Tikhonov filter is
//! `g(sigma) = (1 - (lambda / (sigma + lambda))^t) / sigma`, with `g(0) = t / lambda`,
//! and the estimator is `beta = (1/n) U g(S/n) U^T y` for `K = U S U^T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelMatrix;
use crate::prox_newton::Estimator;
use crate::stats::{ols, LineFit};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    steps: u32,
    lambda: f64,
}

impl FilterSpec {
    pub fn new(steps: u32, lambda: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("filter needs t >= 1".into()));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self { steps, lambda })
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `t * log(1 + sigma / lambda)`, the negated log of the residual.
    fn log_decay(&self, sigma: f64) -> f64 {
        self.steps as f64 * (sigma / self.lambda).ln_1p()
    }

    /// `g(sigma)`, finite at `sigma = 0`.
    pub fn value(&self, sigma: f64) -> f64 {
        if sigma <= 0.0 {
            return self.steps as f64 / self.lambda;
        }
        -(-self.log_decay(sigma)).exp_m1() / sigma
    }

    /// `1 - sigma g(sigma) = (lambda / (sigma + lambda))^t`.
    pub fn residual(&self, sigma: f64) -> f64 {
        if sigma <= 0.0 {
            return 1.0;
        }
        (-self.log_decay(sigma)).exp()
    }
}

/// Filter estimator on the eigenbasis of `K`.
pub fn filter_apply(spec: FilterSpec, k: &KernelMatrix, y: &[f64]) -> Result<Estimator> {
    let n = k.entries().nrows();
    if y.len() != n {
        return Err(Error::InvalidArgument(format!("{} labels for {n} inputs", y.len())));
    }
    let eigen = k.eigen()?;
    let u = &eigen.vectors;
    let nf = n as f64;
    let mut coeffs = vec![0.0; n];
    for j in 0..n {
        let proj: f64 = (0..n).map(|i| u[(i, j)] * y[i]).sum();
        let w = spec.value(eigen.values[j] / nf) * proj / nf;
        if w == 0.0 {
            continue;
        }
        for (i, c) in coeffs.iter_mut().enumerate() {
            *c += u[(i, j)] * w;
        }
    }
    Ok(Estimator::new(coeffs))
}

/// `(lambda / (sigma + lambda))^t sigma^nu`.
fn weighted_residual(steps: u32, nu: f64, lambda: f64, sigma: f64) -> f64 {
    (lambda / (sigma + lambda)).powi(steps as i32) * sigma.powf(nu)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualificationRow {
    pub lambda: f64,
    /// Largest value over the grid and the analytic maximizer when it lies
    /// inside the grid range.
    pub sup: f64,
    pub argmax: f64,
    pub bound: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualificationReport {
    pub steps: u32,
    pub nu: f64,
    pub rows: Vec<QualificationRow>,
}

impl QualificationReport {
    pub fn any_violation(&self) -> bool {
        self.rows.iter().any(|r| r.violated)
    }
}

/// Relative slack allowed before a row is flagged.
pub const QUALIFICATION_SLACK: f64 = 1e-12;

/// Compare `sup_sigma (lambda/(sigma+lambda))^t sigma^nu` with
/// `(nu lambda / t)^nu` for `nu < t`, or with its value at the grid maximum
/// `kappa` otherwise.
pub fn qualification_check(
    steps: u32,
    nu: f64,
    lambda_grid: &[f64],
    sigma_grid: &[f64],
) -> Result<QualificationReport> {
    if steps == 0 || !(nu > 0.0) || lambda_grid.is_empty() || sigma_grid.is_empty() {
        return Err(Error::InvalidArgument("qualification needs t >= 1, nu > 0 and nonempty grids".into()));
    }
    if sigma_grid.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidArgument("sigma grid must be positive".into()));
    }
    let kappa = sigma_grid.iter().cloned().fold(f64::MIN, f64::max);
    let t = steps as f64;
    let rows = lambda_grid
        .iter()
        .map(|&lambda| {
            let (mut argmax, mut sup) = (sigma_grid[0], f64::MIN);
            for &s in sigma_grid {
                let v = weighted_residual(steps, nu, lambda, s);
                if v > sup {
                    sup = v;
                    argmax = s;
                }
            }
            if nu < t {
                let s_hat = nu * lambda / (t - nu);
                if s_hat <= kappa {
                    let v = weighted_residual(steps, nu, lambda, s_hat);
                    if v > sup {
                        sup = v;
                        argmax = s_hat;
                    }
                }
            }
            let bound = if nu < t {
                (nu * lambda / t).powf(nu)
            } else {
                weighted_residual(steps, nu, lambda, kappa)
            };
            QualificationRow {
                lambda,
                sup,
                argmax,
                bound,
                violated: sup > bound * (1.0 + QUALIFICATION_SLACK),
            }
        })
        .collect();
    Ok(QualificationReport { steps, nu, rows })
}

/// `count` evenly spaced points `i / count`, `i = 1..=count`.
pub fn unit_sigma_grid(count: usize) -> Vec<f64> {
    (1..=count).map(|i| i as f64 / count as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DofCurve {
    pub lambdas: Vec<f64>,
    pub dof_values: Vec<f64>,
}

impl DofCurve {
    /// OLS of `log dof` on `log lambda`.
    pub fn log_log_fit(&self) -> LineFit {
        let pts: Vec<(f64, f64)> = self
            .lambdas
            .iter()
            .zip(&self.dof_values)
            .filter(|(_, &d)| d > 0.0)
            .map(|(l, d)| (l.ln(), d.ln()))
            .collect();
        ols(&pts)
    }
}

/// `sum_i s_i / (s_i + lambda)` over the eigenvalues `s_i` of `K / n`.
pub fn dof_curve(k: &KernelMatrix, lambdas: &[f64]) -> Result<DofCurve> {
    if lambdas.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidArgument("lambda values must be positive".into()));
    }
    let eigen = k.eigen()?;
    let n = eigen.values.len() as f64;
    let dof_values = lambdas
        .iter()
        .map(|&l| {
            eigen
                .values
                .iter()
                .map(|&s| {
                    let s = s / n;
                    s / (s + l)
                })
                .sum()
        })
        .collect();
    Ok(DofCurve {
        lambdas: lambdas.to_vec(),
        dof_values,
    })
}
