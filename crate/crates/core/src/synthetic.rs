//! Synthetic tasks with a planted optimum `theta*(x) = Lambda_{q*}(0, x)`,
//! `q* = (r + 1/2) alpha + 1/2`, and uniform inputs on `[0, 1]`.
//!
//! Classification labels are `+1` with probability `sigmoid(theta*(x))`, which
//! makes `theta*` the pointwise minimizer of the expected logistic loss.
//! Regression labels are `theta*(x) + sigma g` with standard normal `g`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{target_order, KernelSpec};
use crate::losses::{sigmoid, LossModel};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub loss: LossModel,
    pub r: f64,
    pub alpha: u32,
    pub n: usize,
    pub seed: u64,
    /// Gaussian noise level, regression only.
    pub noise_sigma: f64,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<u32> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        self.learning_kernel()?;
        self.target_order()
    }

    /// Order of the planted optimum.
    pub fn target_order(&self) -> Result<u32> {
        target_order(self.r, self.alpha as f64)
    }

    /// Spline kernel of order `alpha` used by the estimators.
    pub fn learning_kernel(&self) -> Result<KernelSpec> {
        KernelSpec::new(self.alpha as i64)
    }

    pub fn theta_star(&self) -> Result<PlantedOptimum> {
        Ok(PlantedOptimum {
            kernel: KernelSpec::new(self.target_order()? as i64)?,
        })
    }

    pub fn with_n(self, n: usize) -> Self {
        Self { n, ..self }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// `theta*(x) = Lambda_{q*}(0, x)`.
#[derive(Debug, Clone, Copy)]
pub struct PlantedOptimum {
    kernel: KernelSpec,
}

impl PlantedOptimum {
    pub fn order(&self) -> u32 {
        self.kernel.order()
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        self.kernel.eval(0.0, x)
    }

    pub fn eval_many(&self, xs: &[f64]) -> Result<Vec<f64>> {
        xs.iter().map(|&x| self.eval(x)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<f64>,
    pub labels: Vec<f64>,
    pub theta_star_values: Vec<f64>,
    pub spec: TaskSpec,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Whether all inputs are pairwise distinct.
    pub fn inputs_distinct(&self) -> bool {
        let mut xs = self.inputs.clone();
        xs.sort_by(f64::total_cmp);
        xs.windows(2).all(|w| w[0] != w[1])
    }
}

fn draw_inputs(spec: &TaskSpec) -> Vec<f64> {
    let mut rng = stream(spec.seed, Stream::Inputs);
    (0..spec.n).map(|_| rng.random::<f64>()).collect()
}

/// `+1` with probability `sigmoid(theta)`, else `-1`.
pub fn draw_binary_labels<R: Rng>(theta: &[f64], rng: &mut R) -> Vec<f64> {
    theta
        .iter()
        .map(|&t| if rng.random::<f64>() < sigmoid(t) { 1.0 } else { -1.0 })
        .collect()
}

/// `theta + sigma g`.
pub fn draw_gaussian_labels<R: Rng>(theta: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    theta
        .iter()
        .map(|&t| {
            let g: f64 = rng.sample(StandardNormal);
            t + sigma * g
        })
        .collect()
}

pub fn generate_classification(spec: &TaskSpec) -> Result<Dataset> {
    if spec.loss != LossModel::Logistic {
        return Err(Error::InvalidArgument("classification tasks use the logistic loss".into()));
    }
    spec.validate()?;
    let inputs = draw_inputs(spec);
    let theta = spec.theta_star()?.eval_many(&inputs)?;
    let labels = draw_binary_labels(&theta, &mut stream(spec.seed, Stream::Labels));
    Ok(Dataset {
        inputs,
        labels,
        theta_star_values: theta,
        spec: *spec,
    })
}

pub fn generate_regression(spec: &TaskSpec) -> Result<Dataset> {
    if spec.loss != LossModel::Squared {
        return Err(Error::InvalidArgument("regression tasks use the squared loss".into()));
    }
    spec.validate()?;
    let inputs = draw_inputs(spec);
    let theta = spec.theta_star()?.eval_many(&inputs)?;
    let labels = if spec.noise_sigma == 0.0 {
        theta.clone()
    } else {
        draw_gaussian_labels(&theta, spec.noise_sigma, &mut stream(spec.seed, Stream::Noise))
    };
    Ok(Dataset {
        inputs,
        labels,
        theta_star_values: theta,
        spec: *spec,
    })
}

pub fn generate(spec: &TaskSpec) -> Result<Dataset> {
    match spec.loss {
        LossModel::Logistic => generate_classification(spec),
        LossModel::Squared => generate_regression(spec),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub x: f64,
    pub theta_star: f64,
    pub argmin: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    pub target_order: u32,
    pub probes: Vec<ProbeResult>,
    pub max_deviation: f64,
}

/// Minimizer of `z -> a softplus(-z) + b softplus(z)` with
/// `a = sigmoid(theta)`, `b = sigmoid(-theta)`, found by safeguarded Newton.
pub fn pointwise_minimizer(theta: f64) -> f64 {
    let a = sigmoid(theta);
    let b = sigmoid(-theta);
    // h'(z) = b sigmoid(z) - a sigmoid(-z): both terms keep full relative
    // precision, so the root is resolved even when a is close to 1.
    let grad = |z: f64| b * sigmoid(z) - a * sigmoid(-z);
    let (mut lo, mut hi) = (-1.0, 1.0);
    while grad(lo) > 0.0 {
        lo *= 2.0;
    }
    while grad(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut z = 0.5 * (lo + hi);
    for _ in 0..200 {
        let g = grad(z);
        if g == 0.0 {
            break;
        }
        if g > 0.0 {
            hi = z;
        } else {
            lo = z;
        }
        let h2 = sigmoid(z) * sigmoid(-z);
        let step = z - g / h2;
        let next = if step > lo && step < hi && h2 > 0.0 { step } else { 0.5 * (lo + hi) };
        if (next - z).abs() <= 4.0 * f64::EPSILON * z.abs().max(1.0) {
            z = next;
            break;
        }
        z = next;
    }
    z
}

/// Numerically minimize the expected logistic loss at each probe and compare
/// the minimizer with `theta*(x)`.
pub fn verify_optimality(spec: &TaskSpec, probes: &[f64]) -> Result<OptimalityReport> {
    if spec.loss != LossModel::Logistic {
        return Err(Error::InvalidArgument("optimality check applies to the logistic task".into()));
    }
    let planted = spec.theta_star()?;
    let mut results = Vec::with_capacity(probes.len());
    for &x in probes {
        let theta = planted.eval(x)?;
        let argmin = pointwise_minimizer(theta);
        results.push(ProbeResult {
            x,
            theta_star: theta,
            argmin,
            deviation: (argmin - theta).abs(),
        });
    }
    let max_deviation = results.iter().map(|p| p.deviation).fold(0.0, f64::max);
    Ok(OptimalityReport {
        target_order: planted.order(),
        probes: results,
        max_deviation,
    })
}

/// Path of the metadata file written next to a dataset file.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Write `x,y,theta_star` rows plus a `key=value` metadata file.
pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(64 * ds.len() + 32);
    out.push_str("x,y,theta_star\n");
    for i in 0..ds.len() {
        let _ = writeln!(out, "{},{},{}", ds.inputs[i], ds.labels[i], ds.theta_star_values[i]);
    }
    fs::write(path, out)?;
    let s = &ds.spec;
    let meta = format!(
        "loss={}\nr={}\nalpha={}\nn={}\nseed={}\nnoise_sigma={}\ntarget_order={}\n",
        s.loss,
        s.r,
        s.alpha,
        s.n,
        s.seed,
        s.noise_sigma,
        s.target_order()?
    );
    fs::write(meta_path(path), meta)?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let raw = map
        .get(key)
        .ok_or_else(|| Error::Parse(format!("metadata is missing `{key}`")))?;
    raw.parse()
        .map_err(|_| Error::Parse(format!("bad value `{raw}` for `{key}`")))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let meta_text = fs::read_to_string(meta_path(path))?;
    let map: BTreeMap<String, String> = meta_text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Parse(format!("bad metadata line `{l}`")))
        })
        .collect::<Result<_>>()?;
    let spec = TaskSpec {
        loss: parse_field(&map, "loss")?,
        r: parse_field(&map, "r")?,
        alpha: parse_field(&map, "alpha")?,
        n: parse_field(&map, "n")?,
        seed: parse_field(&map, "seed")?,
        noise_sigma: parse_field(&map, "noise_sigma")?,
    };

    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "x,y,theta_star" => {}
        other => return Err(Error::Parse(format!("unexpected header {other:?}"))),
    }
    let (mut inputs, mut labels, mut theta) = (Vec::new(), Vec::new(), Vec::new());
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(Error::Parse(format!("line {}: expected 3 columns", lineno + 2)));
        }
        let num = |s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad number `{s}`", lineno + 2)))
        };
        inputs.push(num(cols[0])?);
        labels.push(num(cols[1])?);
        theta.push(num(cols[2])?);
    }
    if inputs.len() != spec.n {
        return Err(Error::Parse(format!("metadata says n={} but file has {} rows", spec.n, inputs.len())));
    }
    Ok(Dataset {
        inputs,
        labels,
        theta_star_values: theta,
        spec,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(loss: LossModel, n: usize) -> TaskSpec {
        TaskSpec {
            loss,
            r: 0.25,
            alpha: 2,
            n,
            seed: 11,
            noise_sigma: 0.5,
        }
    }

    #[test]
    fn zero_theta_is_a_fair_coin() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(pointwise_minimizer(0.0), 0.0);
    }

    #[test]
    fn label_frequency_matches_sigmoid() {
        let theta = task(LossModel::Logistic, 1).theta_star().unwrap().eval(0.3).unwrap();
        let draws = 100_000;
        let ys = draw_binary_labels(&vec![theta; draws], &mut stream(5, Stream::Labels));
        let freq = ys.iter().filter(|&&y| y == 1.0).count() as f64 / draws as f64;
        let p = sigmoid(theta);
        let sd = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((freq - p).abs() <= 3.0 * sd, "{freq} vs {p}");
    }

    #[test]
    fn noise_variance() {
        let draws = 100_000;
        let ys = draw_gaussian_labels(&vec![0.7; draws], 0.5, &mut stream(6, Stream::Noise));
        let m = ys.iter().sum::<f64>() / draws as f64;
        let var = ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (draws - 1) as f64;
        assert!((var / 0.25 - 1.0).abs() <= 0.05, "{var}");
    }

    #[test]
    fn noiseless_regression_is_exact() {
        let spec = TaskSpec {
            noise_sigma: 0.0,
            ..task(LossModel::Squared, 50)
        };
        let ds = generate_regression(&spec).unwrap();
        assert_eq!(ds.labels, ds.theta_star_values);
    }

    #[test]
    fn deterministic_per_seed() {
        for loss in [LossModel::Logistic, LossModel::Squared] {
            let a = generate(&task(loss, 100)).unwrap();
            let b = generate(&task(loss, 100)).unwrap();
            assert_eq!(a, b);
            let c = generate(&task(loss, 100).with_seed(12)).unwrap();
            assert_ne!(a.inputs, c.inputs);
        }
        let ds = generate(&task(LossModel::Logistic, 300)).unwrap();
        assert!(ds.labels.iter().all(|&y| y == 1.0 || y == -1.0));
        assert!(ds.inputs.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn inputs_independent_of_loss() {
        let a = generate(&task(LossModel::Logistic, 40)).unwrap();
        let b = generate(&task(LossModel::Squared, 40)).unwrap();
        assert_eq!(a.inputs, b.inputs);
    }

    #[test]
    fn wrong_loss_or_smoothness_rejected() {
        assert!(generate_classification(&task(LossModel::Squared, 10)).is_err());
        assert!(generate_regression(&task(LossModel::Logistic, 10)).is_err());
        let bad = TaskSpec {
            r: 0.5,
            ..task(LossModel::Logistic, 10)
        };
        assert!(matches!(generate(&bad), Err(Error::InvalidSmoothness { .. })));
    }

    #[test]
    fn optimality_on_random_probes() {
        let probes: Vec<f64> = (0..20).map(|i| (i as f64 * 0.618_033_988_7) % 1.0).collect();
        for r in [0.25, 3.25, 10.25] {
            let spec = TaskSpec {
                r,
                ..task(LossModel::Logistic, 1)
            };
            let rep = verify_optimality(&spec, &probes).unwrap();
            assert!(rep.max_deviation <= 1e-6, "{}", rep.max_deviation);
        }
    }

    #[test]
    fn minimizer_at_extreme_values() {
        for theta in [-35.0, -12.5, 8.0, 20.0, 35.0] {
            let z = pointwise_minimizer(theta);
            assert!((z - theta).abs() <= 1e-6 * theta.abs().max(1.0), "{theta} -> {z}");
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        for loss in [LossModel::Logistic, LossModel::Squared] {
            let ds = generate(&task(loss, 64)).unwrap();
            write_dataset(&ds, &path).unwrap();
            let back = read_dataset(&path).unwrap();
            assert_eq!(ds, back);
        }
        let meta = fs::read_to_string(meta_path(&path)).unwrap();
        assert!(meta.contains("target_order=2"));
    }
}
