//! Damped Newton solver for one proximal subproblem
//!
//! ```text
//! min_theta  L(theta) + lambda / 2 * ||theta - theta_ref||^2
//! ```
//!
//! in representer coordinates `theta = sum_i beta_i Phi(x_i)`. The RKHS
//! gradient is `sum_i gamma_i Phi(x_i)` with `gamma = l'(y, K beta) / n +
//! lambda (beta - beta_ref)`. Pushing the regularized Hessian through the
//! feature map, `(Phi* D Phi / n + lambda I)^{-1} Phi* = Phi* (D K / n + lambda I)^{-1}`,
//! so one `n x n` solve gives both the Newton step and the decrement
//! `sqrt(gamma^T K (D K / n + lambda I)^{-1} gamma)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gram::{dot, Gram};
use crate::losses::LossModel;

/// Tolerances below this are raised to it.
pub const TOL_FLOOR: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 100;

const FULL_STEP_DECREMENT: f64 = 0.1;
const ARMIJO_SLOPE: f64 = 0.25;
const BACKTRACK: f64 = 0.5;
const MIN_STEP: f64 = 1e-20;

/// A function in the RKHS, `sum_i beta_i Phi(x_i)`, over the training inputs
/// of the Gram operator it is used with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimator {
    pub coefficients: Vec<f64>,
}

impl Estimator {
    pub fn zeros(n: usize) -> Self {
        Self {
            coefficients: vec![0.0; n],
        }
    }

    pub fn new(coefficients: Vec<f64>) -> Self {
        Self { coefficients }
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// Values at the training inputs, `K beta`.
    pub fn predictions<G: Gram + ?Sized>(&self, gram: &G) -> Vec<f64> {
        gram.apply(&self.coefficients)
    }

    /// `beta^T K beta`.
    pub fn rkhs_norm_sq<G: Gram + ?Sized>(&self, gram: &G) -> f64 {
        dot(&self.coefficients, &gram.apply(&self.coefficients))
    }
}

/// `||a - b||_H` for two estimators over the same inputs.
pub fn rkhs_distance<G: Gram + ?Sized>(gram: &G, a: &Estimator, b: &Estimator) -> f64 {
    let d: Vec<f64> = a.coefficients.iter().zip(&b.coefficients).map(|(x, y)| x - y).collect();
    dot(&d, &gram.apply(&d)).max(0.0).sqrt()
}

/// The data shared by every subproblem of a run.
#[derive(Clone, Copy)]
pub struct Problem<'a, G: Gram + ?Sized> {
    pub loss: LossModel,
    pub gram: &'a G,
    pub labels: &'a [f64],
}

impl<'a, G: Gram + ?Sized> Problem<'a, G> {
    pub fn new(loss: LossModel, gram: &'a G, labels: &'a [f64]) -> Result<Self> {
        if labels.len() != gram.len() {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {} inputs",
                labels.len(),
                gram.len()
            )));
        }
        loss.check_labels(labels)?;
        Ok(Self { loss, gram, labels })
    }

    fn n(&self) -> f64 {
        self.labels.len() as f64
    }

    /// Unregularized empirical risk at training predictions `f`.
    pub fn empirical_risk(&self, f: &[f64]) -> f64 {
        let s: f64 = self
            .labels
            .iter()
            .zip(f)
            .map(|(&y, &z)| self.loss.value_unchecked(y, z))
            .sum();
        s / self.n()
    }

    /// RKHS norm of the unregularized empirical-risk gradient at `est`.
    pub fn risk_gradient_norm(&self, est: &Estimator) -> f64 {
        let f = est.predictions(self.gram);
        let g: Vec<f64> = self
            .labels
            .iter()
            .zip(&f)
            .map(|(&y, &z)| self.loss.derivatives_unchecked(y, z).d1 / self.n())
            .collect();
        dot(&g, &self.gram.apply(&g)).max(0.0).sqrt()
    }
}

/// Current iterate of a subproblem solve.
#[derive(Debug, Clone)]
pub struct SubproblemState {
    pub current: Estimator,
    pub reference: Estimator,
    pub lambda: f64,
    pub decrement: f64,
    pub iterations: usize,
}

/// Everything one linear solve yields at a point.
struct NewtonPoint {
    f: Vec<f64>,
    /// `(D K / n + lambda I)^{-1} gamma`; the Newton step is its negative.
    direction: Vec<f64>,
    k_direction: Vec<f64>,
    decrement: f64,
}

fn gradient_coeffs<G: Gram + ?Sized>(
    problem: &Problem<'_, G>,
    beta: &[f64],
    reference: &[f64],
    f: &[f64],
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = problem.n();
    let mut gamma = Vec::with_capacity(beta.len());
    let mut d2 = Vec::with_capacity(beta.len());
    for i in 0..beta.len() {
        if !f[i].is_finite() {
            return Err(Error::NonFinite("prediction"));
        }
        let d = problem.loss.derivatives_unchecked(problem.labels[i], f[i]);
        gamma.push(d.d1 / n + lambda * (beta[i] - reference[i]));
        d2.push(d.d2);
    }
    Ok((gamma, d2))
}

fn newton_point<G: Gram + ?Sized>(
    problem: &Problem<'_, G>,
    beta: &[f64],
    reference: &[f64],
    lambda: f64,
) -> Result<NewtonPoint> {
    let f = problem.gram.apply(beta);
    let (gamma, d2) = gradient_coeffs(problem, beta, reference, &f, lambda)?;
    let system = problem.gram.weighted_system(&d2, lambda)?;
    let direction = system.solve(&gamma);
    if direction.iter().any(|v| !v.is_finite()) {
        return Err(Error::Linalg("non-finite Newton direction".into()));
    }
    let k_direction = problem.gram.apply(&direction);
    let decrement = dot(&gamma, &k_direction).max(0.0).sqrt();
    Ok(NewtonPoint {
        f,
        direction,
        k_direction,
        decrement,
    })
}

/// Representer coefficients of the subproblem gradient.
pub fn subproblem_gradient_coeffs<G: Gram + ?Sized>(
    problem: &Problem<'_, G>,
    state: &SubproblemState,
) -> Result<Vec<f64>> {
    let f = state.current.predictions(problem.gram);
    gradient_coeffs(
        problem,
        &state.current.coefficients,
        &state.reference.coefficients,
        &f,
        state.lambda,
    )
    .map(|(g, _)| g)
}

/// Newton decrement of the subproblem referenced at `reference`, evaluated
/// at `current`: the gradient norm in the inverse regularized-Hessian metric.
pub fn newton_decrement<G: Gram + ?Sized>(
    problem: &Problem<'_, G>,
    current: &Estimator,
    reference: &Estimator,
    lambda: f64,
) -> Result<f64> {
    Ok(newton_point(problem, &current.coefficients, &reference.coefficients, lambda)?.decrement)
}

/// Subproblem objective `L(beta) + lambda/2 (beta - ref)^T K (beta - ref)`,
/// given `f = K beta` and `f_ref = K ref`.
fn objective<G: Gram + ?Sized>(
    problem: &Problem<'_, G>,
    beta: &[f64],
    reference: &[f64],
    f: &[f64],
    f_ref: &[f64],
    lambda: f64,
) -> f64 {
    let reg: f64 = (0..beta.len())
        .map(|i| (beta[i] - reference[i]) * (f[i] - f_ref[i]))
        .sum();
    problem.empirical_risk(f) + 0.5 * lambda * reg
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Approximate `prox_{L / lambda}(reference)` until the Newton decrement is
/// at most `max(tol, TOL_FLOOR)`, starting from the reference.
pub fn solve_subproblem<G: Gram + ?Sized>(
    problem: &Problem<'_, G>,
    reference: &Estimator,
    lambda: f64,
    options: NewtonOptions,
) -> Result<SubproblemState> {
    solve_traced(problem, reference, lambda, options, None)
}

fn solve_traced<G: Gram + ?Sized>(
    problem: &Problem<'_, G>,
    reference: &Estimator,
    lambda: f64,
    options: NewtonOptions,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<SubproblemState> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    if !(options.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {}", options.tol)));
    }
    if reference.len() != problem.labels.len() {
        return Err(Error::InvalidArgument("reference has the wrong length".into()));
    }
    let tol = options.tol.max(TOL_FLOOR);
    let reference_c = &reference.coefficients;
    let f_ref = problem.gram.apply(reference_c);
    let mut beta = reference_c.clone();

    for iteration in 0..=options.max_iter {
        let point = newton_point(problem, &beta, reference_c, lambda)?;
        let dec = point.decrement;
        if let Some(t) = trace.as_deref_mut() {
            t.push(objective(problem, &beta, reference_c, &point.f, &f_ref, lambda));
        }
        if !dec.is_finite() {
            return Err(Error::NonFinite("Newton decrement"));
        }
        if dec <= tol {
            return Ok(SubproblemState {
                current: Estimator::new(beta),
                reference: reference.clone(),
                lambda,
                decrement: dec,
                iterations: iteration,
            });
        }
        if iteration == options.max_iter {
            return Err(Error::MaxIterations {
                max_iter: options.max_iter,
                tol,
                last: dec,
            });
        }
        let step = if dec < FULL_STEP_DECREMENT {
            1.0
        } else {
            let f = &point.f;
            let f0 = objective(problem, &beta, reference_c, f, &f_ref, lambda);
            if !f0.is_finite() {
                return Err(Error::NonFinite("objective"));
            }
            let mut s = 1.0;
            let mut trial_beta = vec![0.0; beta.len()];
            let mut trial_f = vec![0.0; beta.len()];
            loop {
                for i in 0..beta.len() {
                    trial_beta[i] = beta[i] - s * point.direction[i];
                    trial_f[i] = f[i] - s * point.k_direction[i];
                }
                let ft = objective(problem, &trial_beta, reference_c, &trial_f, &f_ref, lambda);
                // directional derivative along -direction is -dec^2
                if ft.is_finite() && ft <= f0 - ARMIJO_SLOPE * s * dec * dec {
                    break s;
                }
                s *= BACKTRACK;
                if s < MIN_STEP {
                    return Err(Error::LineSearch { decrement: dec });
                }
            }
        };
        for (b, d) in beta.iter_mut().zip(&point.direction) {
            *b -= step * d;
        }
    }
    unreachable!("loop returns on the last iteration")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{gram_matrix, KernelSpec};
    use crate::structured::SplineGram2;
    use rand::{Rng, SeedableRng};

    fn data(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let yr: Vec<f64> = xs.iter().map(|x| (6.0 * x).sin() + 0.3 * (rng.random::<f64>() - 0.5)).collect();
        let yb: Vec<f64> = yr.iter().map(|v| if *v + 0.2 * (rng.random::<f64>() - 0.5) > 0.0 { 1.0 } else { -1.0 }).collect();
        (xs, yr, yb)
    }

    /// Dense solve of `(K/n + lambda I) beta = y/n + lambda beta_ref`, the
    /// stationarity condition of the squared-loss subproblem after
    /// cancelling a factor `K`.
    fn ridge_oracle(k: &crate::kernels::KernelMatrix, y: &[f64], r: &[f64], lambda: f64) -> Vec<f64> {
        let n = y.len();
        let rhs: Vec<f64> = (0..n).map(|i| y[i] / n as f64 + lambda * r[i]).collect();
        k.weighted_system(&vec![1.0; n], lambda).unwrap().solve(&rhs)
    }

    #[test]
    fn gradient_vanishes_at_ridge_solution() {
        let (xs, y, _) = data(40, 1);
        let k = gram_matrix(KernelSpec::new(2).unwrap(), &xs).unwrap();
        let p = Problem::new(LossModel::Squared, &k, &y).unwrap();
        let reference: Vec<f64> = (0..40).map(|i| 0.01 * i as f64).collect();
        let beta = ridge_oracle(&k, &y, &reference, 0.05);
        let state = SubproblemState {
            current: Estimator::new(beta),
            reference: Estimator::new(reference),
            lambda: 0.05,
            decrement: 0.0,
            iterations: 0,
        };
        let g = subproblem_gradient_coeffs(&p, &state).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-9), "{g:?}");
    }

    #[test]
    fn gradient_vanishes_at_reference_with_zero_residual() {
        let xs = [0.2, 0.7];
        let k = gram_matrix(KernelSpec::new(2).unwrap(), &xs).unwrap();
        let beta = vec![0.4, -0.3];
        let y = k.apply(&beta);
        let p = Problem::new(LossModel::Squared, &k, &y).unwrap();
        let state = SubproblemState {
            current: Estimator::new(beta.clone()),
            reference: Estimator::new(beta),
            lambda: 3.0,
            decrement: 0.0,
            iterations: 0,
        };
        let g = subproblem_gradient_coeffs(&p, &state).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn scalar_case_by_hand() {
        // n = 1, k = 13/12, squared loss y = 1, beta = 0.5, ref = 0, lambda = 0.2:
        // f = 13/24, gamma = (f - 1) + 0.2 * 0.5 = -11/24 + 0.1
        let k = gram_matrix(KernelSpec::new(2).unwrap(), &[0.5]).unwrap();
        let y = [1.0];
        let p = Problem::new(LossModel::Squared, &k, &y).unwrap();
        let state = SubproblemState {
            current: Estimator::new(vec![0.5]),
            reference: Estimator::zeros(1),
            lambda: 0.2,
            decrement: 0.0,
            iterations: 0,
        };
        let g = subproblem_gradient_coeffs(&p, &state).unwrap();
        let expected = 13.0 / 24.0 - 1.0 + 0.1;
        assert!((g[0] - expected).abs() < 1e-15);
        // decrement^2 = gamma^2 k / (k + lambda)
        let kk = 13.0 / 12.0;
        let dec = newton_decrement(&p, &state.current, &state.reference, 0.2).unwrap();
        assert!((dec - (expected * expected * kk / (kk + 0.2)).sqrt()).abs() < 1e-15);
        // the exact prox point: beta = y / (k + lambda)
        let s = solve_subproblem(&p, &Estimator::zeros(1), 0.2, NewtonOptions::default()).unwrap();
        assert!((s.current.coefficients[0] - 1.0 / (kk + 0.2)).abs() < 1e-14);
    }

    #[test]
    fn squared_loss_matches_ridge_closed_form() {
        let (xs, y, _) = data(60, 2);
        let k = gram_matrix(KernelSpec::new(2).unwrap(), &xs).unwrap();
        let p = Problem::new(LossModel::Squared, &k, &y).unwrap();
        for &lambda in &[1e-3, 1e-1] {
            let s = solve_subproblem(&p, &Estimator::zeros(60), lambda, NewtonOptions::default()).unwrap();
            let oracle = ridge_oracle(&k, &y, &vec![0.0; 60], lambda);
            let err: f64 = s.current.coefficients.iter().zip(&oracle).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = oracle.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(err <= 1e-8 * norm, "lambda {lambda}: {err} vs {norm}");
        }
    }

    #[test]
    fn logistic_reaches_tolerance() {
        let (xs, _, y) = data(50, 3);
        let k = gram_matrix(KernelSpec::new(2).unwrap(), &xs).unwrap();
        let p = Problem::new(LossModel::Logistic, &k, &y).unwrap();
        let opts = NewtonOptions { tol: 1e-10, max_iter: 100 };
        for &lambda in &[1e-4, 1e-2, 1.0] {
            let s = solve_subproblem(&p, &Estimator::zeros(50), lambda, opts).unwrap();
            assert!(s.decrement <= 1e-10);
            let again = newton_decrement(&p, &s.current, &Estimator::zeros(50), lambda).unwrap();
            assert_eq!(again, s.decrement);
        }
    }

    #[test]
    fn fixed_point_at_global_minimizer() {
        // squared loss with y in the range of K: the interpolant is a global
        // minimizer, and the prox of a minimizer is itself
        let xs = [0.1, 0.4, 0.8];
        let k = gram_matrix(KernelSpec::new(2).unwrap(), &xs).unwrap();
        let beta = vec![0.5, -0.2, 0.1];
        let y = k.apply(&beta);
        let p = Problem::new(LossModel::Squared, &k, &y).unwrap();
        let s = solve_subproblem(&p, &Estimator::new(beta.clone()), 0.3, NewtonOptions::default()).unwrap();
        assert_eq!(s.iterations, 0);
        assert!(s.decrement < 1e-15);
        assert_eq!(s.current.coefficients, beta);
    }

    #[test]
    fn decrement_against_eigen_evaluation() {
        // independent route: eigendecomposition of the symmetric weighted
        // operator S K S / n, using decrement^2 = gamma^T K (DK/n + lambda)^-1 gamma
        //   = (1/lambda) [gamma^T K gamma - gamma^T K S (SKS/n + lambda)^-1 S K gamma / n]
        let (xs, _, y) = data(30, 4);
        let k = gram_matrix(KernelSpec::new(2).unwrap(), &xs).unwrap();
        let p = Problem::new(LossModel::Logistic, &k, &y).unwrap();
        let beta: Vec<f64> = (0..30).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.1).collect();
        let reference = vec![0.02; 30];
        let lambda = 0.01;
        let dec = newton_decrement(&p, &Estimator::new(beta.clone()), &Estimator::new(reference.clone()), lambda).unwrap();

        let n = 30;
        let f = k.apply(&beta);
        let mut gamma = vec![0.0; n];
        let mut s = vec![0.0; n];
        for i in 0..n {
            let d = LossModel::Logistic.derivatives(y[i], f[i]).unwrap();
            gamma[i] = d.d1 / n as f64 + lambda * (beta[i] - reference[i]);
            s[i] = d.d2.sqrt();
        }
        let kg = k.apply(&gamma);
        let w = faer::Mat::from_fn(n, n, |i, j| s[i] * k.get(i, j) * s[j] / n as f64);
        let evd = w.self_adjoint_eigen(faer::Side::Lower).unwrap();
        let (vals, vecs) = (evd.S().column_vector(), evd.U());
        let skg: Vec<f64> = (0..n).map(|i| s[i] * kg[i]).collect();
        let mut quad = 0.0;
        for l in 0..n {
            let proj: f64 = (0..n).map(|i| vecs[(i, l)] * skg[i]).sum();
            quad += proj * proj / (vals[l] + lambda);
        }
        let oracle = ((dot(&gamma, &kg) - quad / n as f64) / lambda).sqrt();
        assert!((dec - oracle).abs() <= 1e-8 * oracle, "{dec} vs {oracle}");
    }

    #[test]
    fn decrement_ignores_null_space_of_k() {
        // duplicated inputs make K rank deficient; moving gamma's preimage
        // along a null vector of K leaves the decrement unchanged
        let xs = [0.3, 0.3, 0.6];
        let k = gram_matrix(KernelSpec::new(2).unwrap(), &xs).unwrap();
        let y = [1.0, -1.0, 1.0];
        let p = Problem::new(LossModel::Squared, &k, &y).unwrap();
        let base = Estimator::new(vec![0.2, 0.1, -0.4]);
        let shifted = Estimator::new(vec![0.2 + 0.7, 0.1 - 0.7, -0.4]);
        let reference = Estimator::zeros(3);
        // shifting beta by v with K v = 0 shifts gamma by lambda v and the
        // solve by v; both vanish under K
        let a = newton_decrement(&p, &base, &reference, 0.5).unwrap();
        let b = newton_decrement(&p, &shifted, &reference, 0.5).unwrap();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        let zero = newton_decrement(&p, &Estimator::new(vec![0.0; 3]), &Estimator::zeros(3), 0.5).unwrap();
        assert!(zero > 0.0);
    }

    #[test]
    fn objective_nonincreasing_and_structured_agrees() {
        let (xs, _, y) = data(80, 5);
        let dense = gram_matrix(KernelSpec::new(2).unwrap(), &xs).unwrap();
        let fast = SplineGram2::new(&xs).unwrap();
        let pd = Problem::new(LossModel::Logistic, &dense, &y).unwrap();
        let pf = Problem::new(LossModel::Logistic, &fast, &y).unwrap();
        let reference = Estimator::zeros(80);
        let a = solve_subproblem(&pd, &reference, 1e-3, NewtonOptions::default()).unwrap();
        let b = solve_subproblem(&pf, &reference, 1e-3, NewtonOptions::default()).unwrap();
        let d = rkhs_distance(&dense, &a.current, &b.current);
        assert!(d < 1e-8 * a.current.rkhs_norm_sq(&dense).sqrt(), "{d}");

        for &lambda in &[1e-4, 1e-2] {
            let mut trace = Vec::new();
            solve_traced(&pd, &reference, lambda, NewtonOptions::default(), Some(&mut trace)).unwrap();
            assert!(trace.len() > 2);
            for w in trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-15, "{trace:?}");
            }
        }
    }

    #[test]
    fn prox_is_nonexpansive_for_squared_loss() {
        let (xs, y, _) = data(40, 6);
        let k = gram_matrix(KernelSpec::new(2).unwrap(), &xs).unwrap();
        let p = Problem::new(LossModel::Squared, &k, &y).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let a = Estimator::new((0..40).map(|_| rng.random::<f64>() - 0.5).collect());
            let b = Estimator::new((0..40).map(|_| rng.random::<f64>() - 0.5).collect());
            let pa = solve_subproblem(&p, &a, 0.05, NewtonOptions::default()).unwrap().current;
            let pb = solve_subproblem(&p, &b, 0.05, NewtonOptions::default()).unwrap().current;
            assert!(rkhs_distance(&k, &pa, &pb) <= rkhs_distance(&k, &a, &b) + 1e-8);
        }
    }

    #[test]
    fn argument_errors() {
        let k = gram_matrix(KernelSpec::new(2).unwrap(), &[0.1, 0.2]).unwrap();
        assert!(Problem::new(LossModel::Logistic, &k, &[1.0, 0.0]).is_err());
        assert!(Problem::new(LossModel::Squared, &k, &[1.0]).is_err());
        let y = [1.0, -1.0];
        let p = Problem::new(LossModel::Logistic, &k, &y).unwrap();
        assert!(solve_subproblem(&p, &Estimator::zeros(2), 0.0, NewtonOptions::default()).is_err());
        assert!(solve_subproblem(&p, &Estimator::zeros(2), 0.1, NewtonOptions { tol: 0.0, max_iter: 5 }).is_err());
        let e = solve_subproblem(&p, &Estimator::zeros(2), 1e-4, NewtonOptions { tol: 1e-12, max_iter: 0 });
        assert!(matches!(e, Err(Error::MaxIterations { .. })));
    }
}
