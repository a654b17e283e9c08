//! Monte Carlo excess risk against the planted optimum.
//!
//! Inputs are drawn fresh from the Monte Carlo stream of `(task seed, mc_seed)`
//! and the conditional expectation over labels is taken in closed form:
//!
//! * logistic: `E_y[l(y, theta)] - E_y[l(y, theta*)]` with
//!   `P(y = 1 | x) = sigmoid(theta*(x))`, a pointwise KL divergence;
//! * squared: `(theta - theta*)^2 / 2`, the noise terms cancel.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gram::Gram;
use crate::losses::{sigmoid, softplus, LossModel};
use crate::prox_newton::Estimator;
use crate::rng::monte_carlo_stream;
use crate::stats::compensated_sum;
use crate::synthetic::TaskSpec;

pub const DEFAULT_MC_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub value: f64,
    pub mc_samples: usize,
    /// Sample standard deviation over `sqrt(mc_samples)`.
    pub std_error: f64,
}

impl RiskEstimate {
    pub fn from_terms(terms: &[f64]) -> Self {
        let m = terms.len();
        let mean = compensated_sum(terms.iter().copied()) / m as f64;
        let std_error = if m > 1 {
            let ss = compensated_sum(terms.iter().map(|t| (t - mean) * (t - mean)));
            (ss / (m - 1) as f64).sqrt() / (m as f64).sqrt()
        } else {
            0.0
        };
        Self {
            value: mean,
            mc_samples: m,
            std_error,
        }
    }
}

/// Expected logistic loss at `theta` minus that at `theta_star`, labels drawn
/// with `P(y = 1) = sigmoid(theta_star)`.
pub fn logistic_excess_term(theta: f64, theta_star: f64) -> f64 {
    let b = sigmoid(-theta_star);
    let d = theta_star - theta;
    if d < 30.0 {
        (b * d.exp_m1()).ln_1p() - b * d
    } else {
        softplus(-theta) - softplus(-theta_star) - b * d
    }
}

pub fn squared_excess_term(theta: f64, theta_star: f64) -> f64 {
    0.5 * (theta - theta_star) * (theta - theta_star)
}

pub fn excess_term(loss: LossModel, theta: f64, theta_star: f64) -> f64 {
    match loss {
        LossModel::Logistic => logistic_excess_term(theta, theta_star),
        LossModel::Squared => squared_excess_term(theta, theta_star),
    }
}

/// Uniform inputs from the Monte Carlo stream.
pub fn mc_inputs(task_seed: u64, mc_seed: u64, count: usize) -> Vec<f64> {
    let mut rng = monte_carlo_stream(task_seed, mc_seed);
    (0..count).map(|_| rng.random::<f64>()).collect()
}

/// Monte Carlo inputs with the planted optimum evaluated on them, reusable
/// across every estimator fitted on the same task.
#[derive(Debug, Clone)]
pub struct McSample {
    pub loss: LossModel,
    pub inputs: Vec<f64>,
    pub theta_star: Vec<f64>,
}

impl McSample {
    pub fn new(task: &TaskSpec, mc_seed: u64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidArgument("at least one Monte Carlo sample is required".into()));
        }
        let inputs = mc_inputs(task.seed, mc_seed, count);
        let theta_star = task.theta_star()?.eval_many(&inputs)?;
        Ok(Self {
            loss: task.loss,
            inputs,
            theta_star,
        })
    }

    pub fn from_predictions(&self, predictions: &[f64]) -> Result<RiskEstimate> {
        excess_risk_from_predictions(self.loss, predictions, &self.theta_star)
    }

    pub fn excess_risk<G: Gram + ?Sized>(&self, gram: &G, est: &Estimator) -> Result<RiskEstimate> {
        let pred = gram.predict(&est.coefficients, &self.inputs)?;
        self.from_predictions(&pred)
    }
}

pub fn excess_risk_from_predictions(loss: LossModel, predictions: &[f64], theta_star: &[f64]) -> Result<RiskEstimate> {
    if predictions.len() != theta_star.len() || predictions.is_empty() {
        return Err(Error::InvalidArgument("predictions and optimum values must have equal nonzero length".into()));
    }
    if predictions.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("prediction"));
    }
    let terms: Vec<f64> = predictions
        .iter()
        .zip(theta_star)
        .map(|(&p, &t)| excess_term(loss, p, t))
        .collect();
    Ok(RiskEstimate::from_terms(&terms))
}

/// `f(x) = sum_i beta_i k(x_i, x)`.
pub fn predict<G: Gram + ?Sized>(gram: &G, est: &Estimator, x_new: &[f64]) -> Result<Vec<f64>> {
    gram.predict(&est.coefficients, x_new)
}

fn excess_risk_checked<G: Gram + ?Sized>(
    loss: LossModel,
    est: &Estimator,
    gram: &G,
    task: &TaskSpec,
    mc_samples: usize,
    mc_seed: u64,
) -> Result<RiskEstimate> {
    if task.loss != loss {
        return Err(Error::InvalidArgument(format!("task uses the {} loss", task.loss)));
    }
    McSample::new(task, mc_seed, mc_samples)?.excess_risk(gram, est)
}

pub fn excess_risk_logistic<G: Gram + ?Sized>(
    est: &Estimator,
    gram: &G,
    task: &TaskSpec,
    mc_samples: usize,
    mc_seed: u64,
) -> Result<RiskEstimate> {
    excess_risk_checked(LossModel::Logistic, est, gram, task, mc_samples, mc_seed)
}

pub fn excess_risk_squared<G: Gram + ?Sized>(
    est: &Estimator,
    gram: &G,
    task: &TaskSpec,
    mc_samples: usize,
    mc_seed: u64,
) -> Result<RiskEstimate> {
    excess_risk_checked(LossModel::Squared, est, gram, task, mc_samples, mc_seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{gram_matrix, KernelSpec};
    use crate::structured::SplineGram2;
    use crate::synthetic::generate;

    fn task(loss: LossModel) -> TaskSpec {
        TaskSpec {
            loss,
            r: 0.25,
            alpha: 2,
            n: 30,
            seed: 3,
            noise_sigma: 0.5,
        }
    }

    #[test]
    fn optimum_has_zero_excess() {
        for loss in [LossModel::Logistic, LossModel::Squared] {
            let mc = McSample::new(&task(loss), 1, 500).unwrap();
            let r = mc.from_predictions(&mc.theta_star.clone()).unwrap();
            assert_eq!(r.value, 0.0);
            assert_eq!(r.std_error, 0.0);
        }
        assert_eq!(logistic_excess_term(0.0, 0.0), 0.0);
    }

    #[test]
    fn constant_offset_squared() {
        let mc = McSample::new(&task(LossModel::Squared), 2, 100).unwrap();
        let shifted: Vec<f64> = mc.theta_star.iter().map(|t| t + 0.3).collect();
        let r = mc.from_predictions(&shifted).unwrap();
        assert!((r.value - 0.045).abs() < 1e-15);
    }

    #[test]
    fn squared_matches_gaussian_quadrature() {
        // three-point Gauss-Hermite rule, exact for polynomials of degree 5
        let nodes = [(-(3f64.sqrt()), 1.0 / 6.0), (0.0, 2.0 / 3.0), (3f64.sqrt(), 1.0 / 6.0)];
        let sigma = 0.7;
        for (theta, star) in [(0.2, 1.0), (-3.0, 0.5), (1.0, 1.0)] {
            let expect = |z: f64| -> f64 {
                nodes
                    .iter()
                    .map(|(g, w)| w * LossModel::Squared.value(star + sigma * g, z).unwrap())
                    .sum()
            };
            let naive = expect(theta) - expect(star);
            assert!((naive - squared_excess_term(theta, star)).abs() < 1e-14);
        }
    }

    #[test]
    fn logistic_matches_label_enumeration() {
        for star in [-4.0, -0.3, 0.0, 1.1, 6.0] {
            for theta in [-8.0, -1.0, 0.0, 0.4, 2.5, 9.0] {
                let p = sigmoid(star);
                let e = |z: f64| {
                    p * LossModel::Logistic.value(1.0, z).unwrap()
                        + (1.0 - p) * LossModel::Logistic.value(-1.0, z).unwrap()
                };
                let naive = e(theta) - e(star);
                let stable = logistic_excess_term(theta, star);
                assert!((naive - stable).abs() < 1e-12 * (1.0 + naive.abs()), "{theta} {star}: {naive} {stable}");
            }
        }
    }

    #[test]
    fn logistic_term_nonnegative() {
        for i in 0..=200 {
            for j in 0..=50 {
                let theta = -50.0 + 0.5 * i as f64;
                let star = -5.0 + 0.2 * j as f64;
                assert!(logistic_excess_term(theta, star) >= -1e-12);
            }
        }
        assert!(logistic_excess_term(-800.0, 1.0).is_finite());
        assert!(logistic_excess_term(800.0, 1.0).is_finite());
    }

    #[test]
    fn std_error_scales_with_samples() {
        let ds = generate(&task(LossModel::Logistic)).unwrap();
        let k = gram_matrix(KernelSpec::new(2).unwrap(), &ds.inputs).unwrap();
        let est = Estimator::new((0..30).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.1).collect());
        let (mut small, mut big) = (0.0, 0.0);
        for seed in 0..20 {
            small += excess_risk_logistic(&est, &k, &ds.spec, 2_000, seed).unwrap().std_error;
            big += excess_risk_logistic(&est, &k, &ds.spec, 8_000, seed + 100).unwrap().std_error;
        }
        let ratio = small / big;
        assert!((ratio / 2.0 - 1.0).abs() <= 0.1, "{ratio}");
    }

    #[test]
    fn predictions_agree_across_backends() {
        let ds = generate(&task(LossModel::Squared)).unwrap();
        let dense = gram_matrix(KernelSpec::new(2).unwrap(), &ds.inputs).unwrap();
        let fast = SplineGram2::new(&ds.inputs).unwrap();
        let mut e1 = vec![0.0; 30];
        e1[0] = 1.0;
        let est = Estimator::new(e1);
        let xs = mc_inputs(1, 2, 50);
        let a = predict(&dense, &est, &xs).unwrap();
        let b = predict(&fast, &est, &xs).unwrap();
        for (i, x) in xs.iter().enumerate() {
            let slice = KernelSpec::new(2).unwrap().eval(ds.inputs[0], *x).unwrap();
            assert!((a[i] - slice).abs() < 1e-14);
            assert!((b[i] - slice).abs() < 1e-12);
        }
        let zero = predict(&dense, &Estimator::zeros(30), &xs).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let at_train = predict(&dense, &est, &ds.inputs).unwrap();
        let kb = est.predictions(&dense);
        for (u, v) in at_train.iter().zip(&kb) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn loss_mismatch_rejected() {
        let ds = generate(&task(LossModel::Squared)).unwrap();
        let k = gram_matrix(KernelSpec::new(2).unwrap(), &ds.inputs).unwrap();
        assert!(excess_risk_logistic(&Estimator::zeros(30), &k, &ds.spec, 10, 0).is_err());
        assert!(excess_risk_squared(&Estimator::zeros(30), &k, &ds.spec, 0, 0).is_err());
    }
}
