//! The operations the solvers need from a Gram matrix.
//!
//! [`crate::kernels::KernelMatrix`] stores the dense matrix;
//! [`crate::structured::SplineGram2`] exploits the structure of the order-2
//! spline kernel and never forms it.

use crate::error::Result;
use crate::kernels::KernelSpec;

/// Solves `(diag(w) K / n + lambda I) x = b` for a fixed factorization.
pub trait WeightedSolve {
    fn solve(&self, rhs: &[f64]) -> Vec<f64>;
}

pub trait Gram: Send + Sync {
    fn spec(&self) -> KernelSpec;

    fn inputs(&self) -> &[f64];

    fn len(&self) -> usize {
        self.inputs().len()
    }

    fn is_empty(&self) -> bool {
        self.inputs().is_empty()
    }

    /// `K v`.
    fn apply(&self, v: &[f64]) -> Vec<f64>;

    fn diagonal(&self) -> Vec<f64>;

    /// Factor `diag(weights) K / n + lambda I` with `weights >= 0`, `lambda > 0`.
    fn weighted_system(&self, weights: &[f64], lambda: f64) -> Result<Box<dyn WeightedSolve + '_>>;

    /// Evaluate `sum_i beta_i k(x_i, x)` at each new point.
    fn predict(&self, coefficients: &[f64], x_new: &[f64]) -> Result<Vec<f64>>;
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
