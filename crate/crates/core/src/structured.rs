//! Linear-time Gram operations for the order-2 spline kernel.
//!
//! With `u = |a - b|`, `Lambda_2(a, b) = 13/12 + (u^2 - u) / 2`, which splits as
//!
//! ```text
//! K = G + V C V^T,   G_ij = min(x_i, x_j) + 1,   V = [1, x, x^2]
//! ```
//!
//! with `C = [[1/12, -1/2, 1/2], [-1/2, -1, 0], [1/2, 0, 0]]`. For distinct
//! inputs the shifted minimum kernel `G` has a tridiagonal inverse `T`, so
//! products with `K`, weighted Newton solves and predictions all cost `O(n)`
//! (predictions `O(log n)` each). The dense [`crate::kernels::KernelMatrix`]
//! is the reference implementation these routines are tested against.

use crate::error::{Error, Result};
use crate::gram::{dot, Gram, WeightedSolve};
use crate::kernels::{check_unit, KernelSpec};

const SHIFT: f64 = 1.0;
const C: [[f64; 3]; 3] = [[1.0 / 12.0, -0.5, 0.5], [-0.5, -1.0, 0.0], [0.5, 0.0, 0.0]];

#[derive(Debug, Clone)]
pub struct SplineGram2 {
    inputs: Vec<f64>,
    /// `order[k]` is the index of the k-th smallest input.
    order: Vec<usize>,
    /// Sorted inputs.
    sorted: Vec<f64>,
    /// `1 / h_k` for the gaps of the shifted sorted inputs (`h_0 = x_(0) + 1`).
    inv_gaps: Vec<f64>,
}

impl SplineGram2 {
    /// Fails when an input is outside `[0, 1]` or two inputs coincide.
    pub fn new(inputs: &[f64]) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("gram operator needs at least one input".into()));
        }
        inputs.iter().try_for_each(|&x| check_unit(x))?;
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order.sort_by(|&a, &b| inputs[a].total_cmp(&inputs[b]));
        let sorted: Vec<f64> = order.iter().map(|&i| inputs[i]).collect();
        let mut inv_gaps = Vec::with_capacity(sorted.len());
        let mut prev = -SHIFT;
        for &x in &sorted {
            let h = x - prev;
            if h <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "structured spline operator needs distinct inputs (duplicate {x})"
                )));
            }
            inv_gaps.push(1.0 / h);
            prev = x;
        }
        Ok(Self {
            inputs: inputs.to_vec(),
            order,
            sorted,
            inv_gaps,
        })
    }

    fn to_sorted(&self, v: &[f64]) -> Vec<f64> {
        self.order.iter().map(|&i| v[i]).collect()
    }

    fn to_original(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (k, &i) in self.order.iter().enumerate() {
            out[i] = v[k];
        }
        out
    }

    /// `V^T v` in sorted coordinates.
    fn moments(&self, v: &[f64]) -> [f64; 3] {
        let mut m = [0.0; 3];
        for (&x, &w) in self.sorted.iter().zip(v) {
            m[0] += w;
            m[1] += w * x;
            m[2] += w * x * x;
        }
        m
    }

    /// `K v` with `v` and the result in sorted coordinates.
    fn apply_sorted(&self, v: &[f64]) -> Vec<f64> {
        let n = v.len();
        // suffix sums of v for the x_k * sum_{j > k} v_j part
        let mut suffix = vec![0.0; n + 1];
        for k in (0..n).rev() {
            suffix[k] = suffix[k + 1] + v[k];
        }
        let c = mat3_vec(&C, &self.moments(v));
        let mut out = Vec::with_capacity(n);
        let mut lower = 0.0;
        for k in 0..n {
            let s = self.sorted[k] + SHIFT;
            lower += s * v[k];
            let x = self.sorted[k];
            out.push(lower + s * suffix[k + 1] + c[0] + c[1] * x + c[2] * x * x);
        }
        out
    }
}

fn mat3_vec(m: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2];
    }
    out
}

/// Gaussian elimination with partial pivoting on a 3x3 system.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col] == 0.0 || !a[piv][col].is_finite() {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// `(diag(w) K / n + lambda I)^{-1}` through
///
/// * push-through: `(lambda I + S^2 K / n)^{-1} = (I - S W^{-1} S K / n) / lambda`
///   with `S = diag(sqrt(w))` and `W = lambda I + S K S / n`;
/// * Woodbury on `W = A + U C U^T`, `A = lambda I + S G S / n`, `U = S V / sqrt(n)`;
/// * `A^{-1} = (I - S M^{-1} S) / lambda` with the tridiagonal
///   `M = n lambda T + S^2`, factored as `L D L^T`.
struct StructuredSolve<'a> {
    op: &'a SplineGram2,
    lambda: f64,
    n: f64,
    sqrt_w: Vec<f64>,
    /// LDL^T of M: unit lower off-diagonal and pivots.
    ldl_off: Vec<f64>,
    ldl_diag: Vec<f64>,
    /// `A^{-1} U`, column-wise.
    a_inv_u: [Vec<f64>; 3],
    /// `I + C U^T A^{-1} U`.
    capacitance: [[f64; 3]; 3],
}

impl StructuredSolve<'_> {
    fn tridiag_solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let mut y = rhs.to_vec();
        for k in 1..n {
            y[k] -= self.ldl_off[k - 1] * y[k - 1];
        }
        for k in 0..n {
            y[k] /= self.ldl_diag[k];
        }
        for k in (0..n.saturating_sub(1)).rev() {
            y[k] -= self.ldl_off[k] * y[k + 1];
        }
        y
    }

    fn a_inv(&self, r: &[f64]) -> Vec<f64> {
        let sr: Vec<f64> = r.iter().zip(&self.sqrt_w).map(|(a, s)| a * s).collect();
        let m = self.tridiag_solve(&sr);
        r.iter()
            .zip(&m)
            .zip(&self.sqrt_w)
            .map(|((ri, mi), s)| (ri - s * mi) / self.lambda)
            .collect()
    }

    fn w_inv(&self, r: &[f64]) -> Result<Vec<f64>> {
        let y = self.a_inv(r);
        // U^T y
        let scale = 1.0 / self.n.sqrt();
        let mut uty = [0.0; 3];
        for k in 0..y.len() {
            let x = self.op.sorted[k];
            let s = self.sqrt_w[k] * scale * y[k];
            uty[0] += s;
            uty[1] += s * x;
            uty[2] += s * x * x;
        }
        let rhs = mat3_vec(&C, &uty);
        let coef = solve3(self.capacitance, rhs)
            .ok_or_else(|| Error::Linalg("singular capacitance matrix".into()))?;
        Ok((0..y.len())
            .map(|k| {
                y[k] - coef[0] * self.a_inv_u[0][k]
                    - coef[1] * self.a_inv_u[1][k]
                    - coef[2] * self.a_inv_u[2][k]
            })
            .collect())
    }

    fn solve_sorted(&self, g: &[f64]) -> Result<Vec<f64>> {
        let kg = self.op.apply_sorted(g);
        let rhs: Vec<f64> = kg.iter().zip(&self.sqrt_w).map(|(v, s)| s * v / self.n).collect();
        let w = self.w_inv(&rhs)?;
        Ok(g.iter()
            .zip(&w)
            .zip(&self.sqrt_w)
            .map(|((gi, wi), s)| (gi - s * wi) / self.lambda)
            .collect())
    }
}

/// Refinement passes after the first solve; the push-through cancels
/// terms of size `||S K S / n|| / lambda` relative to the result.
const REFINEMENT_PASSES: usize = 3;

impl StructuredSolve<'_> {
    /// `(S^2 K / n + lambda I) x` in sorted coordinates.
    fn apply_system(&self, x: &[f64]) -> Vec<f64> {
        let kx = self.op.apply_sorted(x);
        (0..x.len())
            .map(|k| self.sqrt_w[k] * self.sqrt_w[k] * kx[k] / self.n + self.lambda * x[k])
            .collect()
    }

    fn refined(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = self.solve_sorted(b)?;
        let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        for _ in 0..REFINEMENT_PASSES {
            let ax = self.apply_system(&x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            let r_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if r_norm <= 4.0 * f64::EPSILON * b_norm {
                break;
            }
            let dx = self.solve_sorted(&r)?;
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
        }
        Ok(x)
    }
}

impl WeightedSolve for StructuredSolve<'_> {
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let g = self.op.to_sorted(rhs);
        match self.refined(&g) {
            Ok(x) => self.op.to_original(&x),
            Err(_) => vec![f64::NAN; rhs.len()],
        }
    }
}

impl Gram for SplineGram2 {
    fn spec(&self) -> KernelSpec {
        KernelSpec::new(2).expect("order 2 is valid")
    }

    fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let s = self.to_sorted(v);
        self.to_original(&self.apply_sorted(&s))
    }

    fn diagonal(&self) -> Vec<f64> {
        vec![13.0 / 12.0; self.inputs.len()]
    }

    fn weighted_system(&self, weights: &[f64], lambda: f64) -> Result<Box<dyn WeightedSolve + '_>> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
        }
        let n_usize = self.inputs.len();
        let n = n_usize as f64;
        let sqrt_w: Vec<f64> = self
            .order
            .iter()
            .map(|&i| weights[i].max(0.0).sqrt())
            .collect();
        if sqrt_w.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("Newton weights"));
        }
        // M = n lambda T + S^2, T the inverse of the shifted minimum kernel
        let nl = n * lambda;
        let mut diag = Vec::with_capacity(n_usize);
        let mut off = Vec::with_capacity(n_usize.saturating_sub(1));
        for k in 0..n_usize {
            let next = if k + 1 < n_usize { self.inv_gaps[k + 1] } else { 0.0 };
            diag.push(nl * (self.inv_gaps[k] + next) + sqrt_w[k] * sqrt_w[k]);
            if k + 1 < n_usize {
                off.push(-nl * self.inv_gaps[k + 1]);
            }
        }
        let mut ldl_diag = Vec::with_capacity(n_usize);
        let mut ldl_off = Vec::with_capacity(off.len());
        ldl_diag.push(diag[0]);
        for k in 1..n_usize {
            let l = off[k - 1] / ldl_diag[k - 1];
            ldl_off.push(l);
            ldl_diag.push(diag[k] - l * off[k - 1]);
        }
        if ldl_diag.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::Linalg("tridiagonal factorization lost positive definiteness".into()));
        }
        let mut solver = StructuredSolve {
            op: self,
            lambda,
            n,
            sqrt_w,
            ldl_off,
            ldl_diag,
            a_inv_u: [Vec::new(), Vec::new(), Vec::new()],
            capacitance: [[0.0; 3]; 3],
        };
        let scale = 1.0 / n.sqrt();
        let u_cols: [Vec<f64>; 3] = std::array::from_fn(|p| {
            (0..n_usize)
                .map(|k| solver.sqrt_w[k] * scale * self.sorted[k].powi(p as i32))
                .collect()
        });
        let a_inv_u: [Vec<f64>; 3] = std::array::from_fn(|p| solver.a_inv(&u_cols[p]));
        // U^T A^{-1} U
        let mut uta = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                uta[i][j] = dot(&u_cols[i], &a_inv_u[j]);
            }
        }
        let mut cap = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                cap[i][j] = (0..3).map(|k| C[i][k] * uta[k][j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 };
            }
        }
        if solve3(cap, [1.0, 0.0, 0.0]).is_none() {
            return Err(Error::Linalg("singular capacitance matrix".into()));
        }
        solver.a_inv_u = a_inv_u;
        solver.capacitance = cap;
        Ok(Box::new(solver))
    }

    fn predict(&self, coefficients: &[f64], x_new: &[f64]) -> Result<Vec<f64>> {
        if coefficients.len() != self.inputs.len() {
            return Err(Error::InvalidArgument(format!(
                "{} coefficients for {} training inputs",
                coefficients.len(),
                self.inputs.len()
            )));
        }
        x_new.iter().try_for_each(|&x| check_unit(x))?;
        let beta = self.to_sorted(coefficients);
        let n = beta.len();
        // prefix sums of beta and beta * (x + 1) in sorted order
        let mut p0 = vec![0.0; n + 1];
        let mut p1 = vec![0.0; n + 1];
        for k in 0..n {
            p0[k + 1] = p0[k] + beta[k];
            p1[k + 1] = p1[k] + beta[k] * (self.sorted[k] + SHIFT);
        }
        let c = mat3_vec(&C, &self.moments(&beta));
        Ok(x_new
            .iter()
            .map(|&x| {
                let k = self.sorted.partition_point(|&xi| xi <= x);
                p1[k] + (x + SHIFT) * (p0[n] - p0[k]) + c[0] + c[1] * x + c[2] * x * x
            })
            .collect())
    }
}
