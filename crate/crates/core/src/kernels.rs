//! Periodic spline kernels on `[0, 1]` and their Gram matrices.
//!
//! For an even order `q` the kernel has the closed form
//! `Lambda_q(x, z) = 1 + (-1)^(q/2 - 1) / q! * B_q(|x - z|)`.

use std::sync::OnceLock;

use faer::{Mat, Side};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bernoulli::{self, check_order};
use crate::error::{Error, Result};
use crate::gram::{Gram, WeightedSolve};

/// Spline kernel of even order `q >= 2` on the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KernelSpec {
    order: u32,
}

impl KernelSpec {
    pub fn new(order: i64) -> Result<Self> {
        let q = check_order(order)?;
        Ok(Self { order: q as u32 })
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    /// Closed-form kernel value; both arguments must lie in `[0, 1]`.
    pub fn eval(&self, x: f64, z: f64) -> Result<f64> {
        check_unit(x)?;
        check_unit(z)?;
        Ok(self.eval_unchecked(x, z))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: f64, z: f64) -> f64 {
        spline_value(self.order as usize, (x - z).abs())
    }

    /// Kernel value at zero lag, `Lambda_q(x, x)`.
    pub fn diagonal_value(&self) -> f64 {
        spline_value(self.order as usize, 0.0)
    }
}

#[inline]
pub(crate) fn spline_value(q: usize, lag: f64) -> f64 {
    let sign = if (q / 2 - 1).is_multiple_of(2) { 1.0 } else { -1.0 };
    1.0 + sign / bernoulli::factorial(q) * bernoulli::eval_unchecked(q, lag)
}

pub(crate) fn check_unit(x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::OutOfDomain { value: x })
    }
}

/// `Lambda_q(x, z)` for `q` a positive even integer.
pub fn spline_kernel(spec: KernelSpec, x: f64, z: f64) -> Result<f64> {
    spec.eval(x, z)
}

/// Order of the planted optimum, `(r + 1/2) alpha + 1/2`, when it is a
/// positive even integer.
pub fn target_order(r: f64, alpha: f64) -> Result<u32> {
    let order = (r + 0.5) * alpha + 0.5;
    let rounded = order.round();
    let valid = r > 0.0
        && alpha > 0.0
        && (order - rounded).abs() <= 1e-9
        && rounded >= 2.0
        && rounded as i64 % 2 == 0
        && rounded as usize <= bernoulli::MAX_ORDER;
    if valid {
        Ok(rounded as u32)
    } else {
        Err(Error::InvalidSmoothness { r, alpha, order })
    }
}

/// Planted optimum `theta*(x) = Lambda_{(r+1/2) alpha + 1/2}(0, x)`.
pub fn theta_star_eval(r: f64, alpha: f64, x: f64) -> Result<f64> {
    let q = target_order(r, alpha)?;
    KernelSpec::new(q as i64)?.eval(0.0, x)
}

/// Symmetric eigendecomposition `K = U diag(values) U^T`, values sorted
/// nonincreasing and clamped at zero.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: Mat<f64>,
    /// Smallest eigenvalue before clamping.
    pub raw_min: f64,
}

/// Dense Gram matrix over a fixed set of training inputs.
///
/// The eigendecomposition is computed on first use and cached.
#[derive(Debug)]
pub struct KernelMatrix {
    spec: KernelSpec,
    inputs: Vec<f64>,
    entries: Mat<f64>,
    eigen: OnceLock<std::result::Result<Eigen, String>>,
}

impl KernelMatrix {
    pub fn entries(&self) -> &Mat<f64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn eigen(&self) -> Result<&Eigen> {
        self.eigen
            .get_or_init(|| decompose(&self.entries))
            .as_ref()
            .map_err(|e| Error::Linalg(e.clone()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.inputs.len()).map(|i| self.entries[(i, i)]).sum()
    }
}

fn decompose(k: &Mat<f64>) -> std::result::Result<Eigen, String> {
    let n = k.nrows();
    if (0..n).any(|j| (0..n).any(|i| !k[(i, j)].is_finite())) {
        return Err("non-finite Gram entry".into());
    }
    let evd = k
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| format!("eigendecomposition failed: {e:?}"))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let raw_min = order.last().map(|&i| s[i]).unwrap_or(0.0);
    let values = order.iter().map(|&i| s[i].max(0.0)).collect();
    let vectors = Mat::from_fn(n, n, |i, j| u[(i, order[j])]);
    Ok(Eigen {
        values,
        vectors,
        raw_min,
    })
}

/// Assemble `K_ij = Lambda_q(x_i, x_j)`.
pub fn gram_matrix(spec: KernelSpec, inputs: &[f64]) -> Result<KernelMatrix> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("gram matrix needs at least one input".into()));
    }
    inputs.iter().try_for_each(|&x| check_unit(x))?;
    let n = inputs.len();
    let q = spec.order as usize;
    // column-parallel; every entry is an independent evaluation
    let columns: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            (0..n)
                .map(|i| spline_value(q, (inputs[i] - inputs[j]).abs()))
                .collect()
        })
        .collect();
    let entries = Mat::from_fn(n, n, |i, j| columns[j][i]);
    Ok(KernelMatrix {
        spec,
        inputs: inputs.to_vec(),
        entries,
        eigen: OnceLock::new(),
    })
}

struct DenseLu {
    lu: faer::linalg::solvers::PartialPivLu<f64>,
}

impl WeightedSolve for DenseLu {
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        use faer::prelude::Solve;
        let b = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        let x = self.lu.solve(&b);
        (0..rhs.len()).map(|i| x[(i, 0)]).collect()
    }
}

impl Gram for KernelMatrix {
    fn spec(&self) -> KernelSpec {
        self.spec
    }

    fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.inputs.len();
        let col = Mat::from_fn(n, 1, |i, _| v[i]);
        let out = &self.entries * &col;
        (0..n).map(|i| out[(i, 0)]).collect()
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.inputs.len()).map(|i| self.entries[(i, i)]).collect()
    }

    /// Partial-pivot LU of `diag(w) K / n + lambda I`.
    fn weighted_system(&self, weights: &[f64], lambda: f64) -> Result<Box<dyn WeightedSolve + '_>> {
        let n = self.inputs.len();
        let inv_n = 1.0 / n as f64;
        let m = Mat::from_fn(n, n, |i, j| {
            weights[i] * self.entries[(i, j)] * inv_n + if i == j { lambda } else { 0.0 }
        });
        let lu = m.partial_piv_lu();
        // a zero or non-finite pivot shows up in U
        let u = lu.U();
        for i in 0..n {
            let p = u[(i, i)];
            if !p.is_finite() || p == 0.0 {
                return Err(Error::Linalg(format!("singular Newton system (pivot {i} = {p})")));
            }
        }
        Ok(Box::new(DenseLu { lu }))
    }

    fn predict(&self, coefficients: &[f64], x_new: &[f64]) -> Result<Vec<f64>> {
        predict_direct(self.spec, &self.inputs, coefficients, x_new)
    }
}

/// `f(x) = sum_i beta_i Lambda_q(x_i, x)` by direct summation.
pub fn predict_direct(
    spec: KernelSpec,
    train_inputs: &[f64],
    coefficients: &[f64],
    x_new: &[f64],
) -> Result<Vec<f64>> {
    if train_inputs.len() != coefficients.len() {
        return Err(Error::InvalidArgument(format!(
            "{} coefficients for {} training inputs",
            coefficients.len(),
            train_inputs.len()
        )));
    }
    x_new.iter().try_for_each(|&x| check_unit(x))?;
    let q = spec.order as usize;
    Ok(x_new
        .par_iter()
        .map(|&x| {
            train_inputs
                .iter()
                .zip(coefficients)
                .map(|(&xi, &b)| b * spline_value(q, (xi - x).abs()))
                .sum()
        })
        .collect())
}
