//! Grid sweeps over `(n, lambda, t, seed)`, best-lambda selection and
//! log-log learning-rate fits.
//!
//! One trajectory is run per `(n, repetition, lambda)` up to the largest `t`
//! requested; the stored iterates give the estimator for every smaller `t`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gram::Gram;
use crate::iterated::{enforce_bound_default, make_schedule, run_iterated_tikhonov};
use crate::kernels::gram_matrix;
use crate::losses::LossModel;
use crate::prox_newton::Problem;
use crate::risk::{McSample, DEFAULT_MC_SAMPLES};
use crate::rng::mix_seed;
use crate::stats::{logspace, ols};
use crate::structured::SplineGram2;
use crate::synthetic::{generate, TaskSpec};

/// Which Gram operator the sweep uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// Linear-time operator for order-2 kernels with distinct inputs,
    /// dense otherwise.
    Auto,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// `n` and `seed` are overwritten per cell.
    pub task: TaskSpec,
    pub n_grid: Vec<usize>,
    pub lambda_grid: Vec<f64>,
    pub t_list: Vec<usize>,
    pub repetitions: usize,
    pub target_eps: f64,
    pub mc_samples: usize,
    /// Base seed; cell seeds are derived from it.
    pub seed: u64,
    /// Worker threads, 0 for the rayon default.
    pub threads: usize,
    pub backend: Backend,
    pub output_path: Option<PathBuf>,
}

pub const DEFAULT_LAMBDA_MIN: f64 = 1e-4;
pub const DEFAULT_LAMBDA_MAX: f64 = 1.0;
pub const DEFAULT_LAMBDA_COUNT: usize = 50;
pub const DEFAULT_REPETITIONS: usize = 20;
pub const DEFAULT_TARGET_EPS: f64 = 1e-8;

impl SweepConfig {
    pub fn new(task: TaskSpec, n_grid: Vec<usize>, t_list: Vec<usize>) -> Self {
        Self {
            task,
            n_grid,
            lambda_grid: logspace(DEFAULT_LAMBDA_MIN, DEFAULT_LAMBDA_MAX, DEFAULT_LAMBDA_COUNT),
            t_list,
            repetitions: DEFAULT_REPETITIONS,
            target_eps: DEFAULT_TARGET_EPS,
            mc_samples: DEFAULT_MC_SAMPLES,
            seed: 0,
            threads: 0,
            backend: Backend::Auto,
            output_path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n_grid.is_empty() || self.lambda_grid.is_empty() || self.t_list.is_empty() {
            return bad("n, lambda and t grids must be nonempty");
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1");
        }
        if self.n_grid.contains(&0) || self.t_list.contains(&0) {
            return bad("n and t values must be positive");
        }
        if self.lambda_grid.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return bad("lambda values must be positive");
        }
        if self.mc_samples == 0 {
            return bad("mc_samples must be positive");
        }
        self.task.validate().map(|_| ())
    }

    /// Seed of the dataset for grid size `n` and repetition `rep`.
    pub fn cell_seed(&self, n: usize, rep: usize) -> u64 {
        mix_seed(self.seed, n as u64, rep as u64)
    }
}

/// Selection status of a record within its `(loss, r, alpha, t, n, seed)` group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Chosen {
    Yes,
    No,
    /// The fit or risk evaluation failed for this cell.
    Error,
}

impl Chosen {
    pub fn as_str(self) -> &'static str {
        match self {
            Chosen::Yes => "true",
            Chosen::No => "false",
            Chosen::Error => "error",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "true" => Ok(Chosen::Yes),
            "false" => Ok(Chosen::No),
            "error" => Ok(Chosen::Error),
            other => Err(Error::Parse(format!("bad chosen value `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub loss: LossModel,
    pub r: f64,
    pub alpha: u32,
    pub t: usize,
    pub n: usize,
    pub lambda: f64,
    pub seed: u64,
    pub excess_risk: f64,
    pub std_error: f64,
    pub chosen: Chosen,
    pub wall_time_ms: f64,
}

pub const RECORD_HEADER: &str = "loss,r,alpha,t,n,lambda,seed,excess_risk,std_error,chosen,wall_time_ms";

/// Group key `(loss, r, alpha, t, n, seed)`; `r` by its bit pattern.
type GroupKey = (&'static str, u64, u32, usize, usize, u64);

impl ExperimentRecord {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.loss,
            self.r,
            self.alpha,
            self.t,
            self.n,
            self.lambda,
            self.seed,
            self.excess_risk,
            self.std_error,
            self.chosen.as_str(),
            self.wall_time_ms
        )
    }

    pub fn from_csv_line(line: &str) -> Result<Self> {
        let c: Vec<&str> = line.trim().split(',').collect();
        if c.len() != 11 {
            return Err(Error::Parse(format!("expected 11 columns, got {}: `{line}`", c.len())));
        }
        fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
            s.parse()
                .map_err(|_| Error::Parse(format!("bad {what} `{s}`")))
        }
        Ok(Self {
            loss: c[0].parse()?,
            r: num(c[1], "r")?,
            alpha: num(c[2], "alpha")?,
            t: num(c[3], "t")?,
            n: num(c[4], "n")?,
            lambda: num(c[5], "lambda")?,
            seed: num(c[6], "seed")?,
            excess_risk: num(c[7], "excess_risk")?,
            std_error: num(c[8], "std_error")?,
            chosen: Chosen::parse(c[9])?,
            wall_time_ms: num(c[10], "wall_time_ms")?,
        })
    }

    fn group_key(&self) -> GroupKey {
        (self.loss.name(), self.r.to_bits(), self.alpha, self.t, self.n, self.seed)
    }

    /// Sort key: group, then lambda.
    pub fn sort_key(&self) -> (GroupKey, u64) {
        (self.group_key(), self.lambda.to_bits())
    }
}

pub fn parse_records(text: &str) -> Result<Vec<ExperimentRecord>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == RECORD_HEADER => {}
        other => return Err(Error::Parse(format!("unexpected records header {other:?}"))),
    }
    lines.map(ExperimentRecord::from_csv_line).collect()
}

pub fn read_records(path: &std::path::Path) -> Result<Vec<ExperimentRecord>> {
    parse_records(&std::fs::read_to_string(path)?)
}

/// Mark the minimum-risk lambda of each group, ties going to the larger lambda.
pub fn mark_chosen(records: &mut [ExperimentRecord]) {
    let mut best: BTreeMap<GroupKey, usize> = BTreeMap::new();
    for (i, rec) in records.iter().enumerate() {
        if rec.chosen == Chosen::Error {
            continue;
        }
        let entry = best.entry(rec.group_key()).or_insert(i);
        let cur = &records[*entry];
        if rec.excess_risk < cur.excess_risk || (rec.excess_risk == cur.excess_risk && rec.lambda > cur.lambda) {
            *entry = i;
        }
    }
    for rec in records.iter_mut() {
        if rec.chosen != Chosen::Error {
            rec.chosen = Chosen::No;
        }
    }
    for &i in best.values() {
        records[i].chosen = Chosen::Yes;
    }
}

fn build_gram(ds_inputs: &[f64], task: &TaskSpec, backend: Backend, distinct: bool) -> Result<Box<dyn Gram>> {
    let spec = task.learning_kernel()?;
    if backend == Backend::Auto && spec.order() == 2 && distinct {
        Ok(Box::new(SplineGram2::new(ds_inputs)?))
    } else {
        Ok(Box::new(gram_matrix(spec, ds_inputs)?))
    }
}

/// All records of one `(n, repetition)` cell, chosen flags set.
fn run_cell(config: &SweepConfig, n: usize, rep: usize, t_sorted: &[usize]) -> Vec<ExperimentRecord> {
    let seed = config.cell_seed(n, rep);
    let task = config.task.with_n(n).with_seed(seed);
    let t_max = *t_sorted.last().expect("nonempty t list");
    let record = |t: usize, lambda: f64, risk: Option<(f64, f64)>, ms: f64| {
        let (excess_risk, std_error, chosen) = match risk {
            Some((v, s)) => (v, s, Chosen::No),
            None => (f64::NAN, f64::NAN, Chosen::Error),
        };
        ExperimentRecord {
            loss: task.loss,
            r: task.r,
            alpha: task.alpha,
            t,
            n,
            lambda,
            seed,
            excess_risk,
            std_error,
            chosen,
            wall_time_ms: ms,
        }
    };
    let error_rows = |lambdas: &[f64]| -> Vec<ExperimentRecord> {
        lambdas
            .iter()
            .flat_map(|&l| t_sorted.iter().map(move |&t| (t, l)))
            .map(|(t, l)| record(t, l, None, 0.0))
            .collect()
    };

    let setup = (|| -> Result<_> {
        let ds = generate(&task)?;
        let distinct = ds.inputs_distinct();
        let gram = build_gram(&ds.inputs, &task, config.backend, distinct)?;
        let mc = McSample::new(&task, config.seed, config.mc_samples)?;
        let radius = task.loss.gsc_radius(&gram.diagonal())?;
        Ok((ds, gram, mc, radius))
    })();
    let (ds, gram, mc, radius) = match setup {
        Ok(v) => v,
        Err(_) => return error_rows(&config.lambda_grid),
    };
    let problem = match Problem::new(task.loss, gram.as_ref(), &ds.labels) {
        Ok(p) => p,
        Err(_) => return error_rows(&config.lambda_grid),
    };

    let mut out = Vec::with_capacity(config.lambda_grid.len() * t_sorted.len());
    for &lambda in &config.lambda_grid {
        let traj = make_schedule(lambda, t_max, config.target_eps, radius, enforce_bound_default(task.loss))
            .and_then(|c| run_iterated_tikhonov(&problem, &c));
        match traj {
            Ok(traj) => {
                for &t in t_sorted {
                    // fit time up to step t plus this evaluation
                    let eval = Instant::now();
                    let risk = mc.excess_risk(gram.as_ref(), &traj.iterates[t]).ok();
                    let ms = (traj.elapsed[t - 1] + eval.elapsed()).as_secs_f64() * 1e3;
                    out.push(record(t, lambda, risk.map(|r| (r.value, r.std_error)), ms));
                }
            }
            Err(_) => out.extend(error_rows(&[lambda])),
        }
    }
    mark_chosen(&mut out);
    out
}

/// Run the full grid. Records are appended to `config.output_path` one cell
/// at a time, so an interrupted sweep leaves a valid prefix. The returned
/// records are sorted by group and lambda.
pub fn run_sweep(config: &SweepConfig) -> Result<Vec<ExperimentRecord>> {
    config.validate()?;
    let mut t_sorted = config.t_list.clone();
    t_sorted.sort_unstable();
    t_sorted.dedup();

    let writer = match &config.output_path {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            writeln!(w, "{RECORD_HEADER}")?;
            w.flush()?;
            Some(Mutex::new(w))
        }
        None => None,
    };

    // dense kernels run sequentially inside each cell so that results do not
    // depend on the number of threads
    faer::set_global_parallelism(faer::Par::Seq);

    let cells: Vec<(usize, usize)> = config
        .n_grid
        .iter()
        .flat_map(|&n| (0..config.repetitions).map(move |rep| (n, rep)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;

    let results: Vec<Result<Vec<ExperimentRecord>>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(n, rep)| {
                let recs = run_cell(config, n, rep, &t_sorted);
                if let Some(w) = &writer {
                    let mut text = String::new();
                    for r in &recs {
                        let _ = writeln!(text, "{}", r.to_csv_line());
                    }
                    let mut w = w.lock().unwrap_or_else(|e| e.into_inner());
                    w.write_all(text.as_bytes())?;
                    w.flush()?;
                }
                Ok(recs)
            })
            .collect()
    });
    let mut all = Vec::new();
    for r in results {
        all.extend(r?);
    }
    all.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    Ok(all)
}

/// `s' = min{r, t - 1/2}`.
fn effective_smoothness(r: f64, t: usize) -> f64 {
    r.min(t as f64 - 0.5)
}

/// Exponent of the excess-risk rate, `alpha (1 + 2s') / (1 + alpha (1 + 2s'))`.
pub fn theoretical_rate(r: f64, alpha: f64, t: usize) -> f64 {
    let a = alpha * (1.0 + 2.0 * effective_smoothness(r, t));
    a / (1.0 + a)
}

/// Exponent of the optimal lambda, `alpha / (1 + alpha (1 + 2s'))`.
pub fn theoretical_lambda_rate(r: f64, alpha: f64, t: usize) -> f64 {
    alpha / (1.0 + alpha * (1.0 + 2.0 * effective_smoothness(r, t)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub loss: LossModel,
    pub r: f64,
    pub alpha: u32,
    pub t: usize,
    /// Minus the OLS slope of log excess risk against log n.
    pub gamma_hat: f64,
    pub gamma_theory: f64,
    pub intercept: f64,
    pub residual_r2: f64,
    /// Chosen records used, averaged per `n` before the fit.
    pub points: usize,
    /// Chosen records dropped for a nonpositive or non-finite risk.
    pub excluded: usize,
    /// OLS slope of the mean log chosen lambda against log n.
    pub lambda_slope: f64,
    pub lambda_theory: f64,
}

/// Fit the rate of one `(loss, r, alpha, t)` group from its chosen records:
/// the chosen risks are averaged over repetitions for each `n` and
/// `log(mean risk)` is regressed on `log n`.
pub fn fit_rate(records: &[ExperimentRecord], loss: LossModel, r: f64, alpha: u32, t: usize) -> Result<RateFit> {
    let chosen: Vec<&ExperimentRecord> = records
        .iter()
        .filter(|c| c.chosen == Chosen::Yes && c.loss == loss && c.r == r && c.alpha == alpha && c.t == t)
        .collect();
    let usable: Vec<&&ExperimentRecord> = chosen
        .iter()
        .filter(|c| c.excess_risk > 0.0 && c.excess_risk.is_finite())
        .collect();
    let excluded = chosen.len() - usable.len();
    let mut distinct: Vec<usize> = usable.iter().map(|c| c.n).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "rate fit needs at least 3 distinct n with positive risk, got {} ({excluded} excluded)",
            distinct.len()
        )));
    }
    // arithmetic mean over repetitions per n, then OLS in log-log
    let mut per_n: BTreeMap<usize, (f64, f64, usize)> = BTreeMap::new();
    for c in &usable {
        let e = per_n.entry(c.n).or_insert((0.0, 0.0, 0));
        e.0 += c.excess_risk;
        e.1 += c.lambda.ln();
        e.2 += 1;
    }
    let risk_pts: Vec<(f64, f64)> = per_n
        .iter()
        .map(|(&n, &(s, _, k))| ((n as f64).ln(), (s / k as f64).ln()))
        .collect();
    let lambda_pts: Vec<(f64, f64)> = per_n
        .iter()
        .map(|(&n, &(_, l, k))| ((n as f64).ln(), l / k as f64))
        .collect();
    let fit = ols(&risk_pts);
    let lfit = ols(&lambda_pts);
    Ok(RateFit {
        loss,
        r,
        alpha,
        t,
        gamma_hat: -fit.slope,
        gamma_theory: theoretical_rate(r, alpha as f64, t),
        intercept: fit.intercept,
        residual_r2: fit.r2,
        points: usable.len(),
        excluded,
        lambda_slope: lfit.slope,
        lambda_theory: theoretical_lambda_rate(r, alpha as f64, t),
    })
}

/// Rate fits for every `(loss, r, alpha, t)` group present in the records.
/// Groups that cannot be fitted are returned with their error message.
pub fn fit_all(records: &[ExperimentRecord]) -> Vec<std::result::Result<RateFit, (String, String)>> {
    let mut groups: BTreeMap<(&'static str, u64, u32, usize), (LossModel, f64)> = BTreeMap::new();
    for rec in records {
        groups.insert((rec.loss.name(), rec.r.to_bits(), rec.alpha, rec.t), (rec.loss, rec.r));
    }
    groups
        .into_iter()
        .map(|((_, _, alpha, t), (loss, r))| {
            fit_rate(records, loss, r, alpha, t)
                .map_err(|e| (format!("{loss} r={r} alpha={alpha} t={t}"), e.to_string()))
        })
        .collect()
}

/// Human-readable rate table.
pub fn format_rate_table(fits: &[RateFit]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<9} {:>6} {:>5} {:>3} {:>9} {:>9} {:>7} {:>6} {:>10} {:>10}",
        "loss", "r", "alpha", "t", "gamma", "theory", "r2", "pts", "lam_slope", "lam_theory"
    );
    for f in fits {
        let _ = writeln!(
            s,
            "{:<9} {:>6} {:>5} {:>3} {:>9.4} {:>9.4} {:>7.4} {:>6} {:>10.4} {:>10.4}",
            f.loss.name(),
            f.r,
            f.alpha,
            f.t,
            f.gamma_hat,
            f.gamma_theory,
            f.residual_r2,
            f.points,
            -f.lambda_slope,
            f.lambda_theory
        );
    }
    s
}

/// Excess risks ready for a log axis: nonpositive values are replaced by the
/// smallest positive risk of their group times `1e-3`.
pub fn plot_values(records: &[ExperimentRecord]) -> Vec<f64> {
    let mut floor: BTreeMap<GroupKey, f64> = BTreeMap::new();
    for r in records {
        if r.excess_risk > 0.0 {
            let e = floor.entry(r.group_key()).or_insert(f64::INFINITY);
            *e = e.min(r.excess_risk);
        }
    }
    records
        .iter()
        .map(|r| {
            if r.excess_risk > 0.0 || r.excess_risk.is_nan() {
                r.excess_risk
            } else {
                floor.get(&r.group_key()).map_or(f64::NAN, |m| m * 1e-3)
            }
        })
        .collect()
}
