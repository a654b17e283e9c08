use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use itreg_core::harness::{
    self, fit_all, format_rate_table, plot_values, read_records, run_sweep, Backend, Chosen, SweepConfig,
};
use itreg_core::iterated::{enforce_bound_default, make_schedule, run_iterated_tikhonov, ProxRunConfig};
use itreg_core::losses::LossModel;
use itreg_core::risk::{McSample, DEFAULT_MC_SAMPLES};
use itreg_core::spectral::{filter_apply, qualification_check, unit_sigma_grid, FilterSpec};
use itreg_core::stats::logspace;
use itreg_core::synthetic::{generate, read_dataset, write_dataset, Dataset, TaskSpec};
use itreg_core::{gram_matrix, Gram, Problem, SplineGram2};

#[derive(Parser)]
#[command(name = "itreg", version, about = "Iterated Tikhonov kernel estimators and learning-rate experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset and write it as CSV plus metadata.
    Generate(GenerateArgs),
    /// Fit one (lambda, t) estimator and report coefficients and excess risk.
    Fit(FitArgs),
    /// Run a grid sweep and write a records file.
    Sweep(SweepArgs),
    /// Fit learning rates from a records file.
    Rate(RateArgs),
    /// Compare the proximal path with the spectral filter on squared loss.
    OracleCheck(OracleArgs),
    /// Report the residual bound of the iterated Tikhonov filter.
    Qualification(QualificationArgs),
}

#[derive(Args, Clone)]
struct TaskArgs {
    #[arg(long, default_value = "logistic")]
    loss: LossModel,
    /// Source parameter; (r + 1/2) alpha + 1/2 must be an even integer.
    #[arg(long, default_value_t = 0.25)]
    r: f64,
    /// Capacity parameter, the spline order of the learning kernel.
    #[arg(long, default_value_t = 2)]
    alpha: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gaussian label noise for squared loss.
    #[arg(long, default_value_t = 0.5)]
    noise_sigma: f64,
}

impl TaskArgs {
    fn spec(&self, n: usize) -> TaskSpec {
        TaskSpec {
            loss: self.loss,
            r: self.r,
            alpha: self.alpha,
            n,
            seed: self.seed,
            noise_sigma: self.noise_sigma,
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    task: TaskArgs,
    #[arg(long, default_value_t = 256)]
    n: usize,
    /// Dataset CSV; metadata goes to `<out>.meta`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    task: TaskArgs,
    #[arg(long, default_value_t = 256)]
    n: usize,
    /// Read the dataset from a file written by `generate` instead.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    lambda: f64,
    #[arg(long, default_value_t = 1)]
    t: usize,
    #[arg(long, default_value_t = harness::DEFAULT_TARGET_EPS)]
    eps: f64,
    #[arg(long, default_value_t = DEFAULT_MC_SAMPLES)]
    mc_samples: usize,
    #[arg(long, default_value_t = 0)]
    mc_seed: u64,
    /// Use the dense Gram matrix even when a faster operator applies.
    #[arg(long)]
    dense: bool,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,3,8")]
    t_list: Vec<usize>,
    #[arg(long, default_value_t = harness::DEFAULT_LAMBDA_MIN)]
    lambda_min: f64,
    #[arg(long, default_value_t = harness::DEFAULT_LAMBDA_MAX)]
    lambda_max: f64,
    #[arg(long, default_value_t = harness::DEFAULT_LAMBDA_COUNT)]
    lambda_count: usize,
}

impl GridArgs {
    fn lambdas(&self) -> Result<Vec<f64>> {
        if self.lambda_min.is_nan() || self.lambda_min <= 0.0 || self.lambda_max < self.lambda_min || self.lambda_count == 0 {
            bail!("need 0 < lambda-min <= lambda-max and lambda-count >= 1");
        }
        Ok(logspace(self.lambda_min, self.lambda_max, self.lambda_count))
    }
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    task: TaskArgs,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, value_delimiter = ',', default_value = "64,128,256,512,1024,2048")]
    n_grid: Vec<usize>,
    #[arg(long, default_value_t = harness::DEFAULT_REPETITIONS)]
    reps: usize,
    #[arg(long, default_value_t = harness::DEFAULT_TARGET_EPS)]
    eps: f64,
    #[arg(long, default_value_t = DEFAULT_MC_SAMPLES)]
    mc_samples: usize,
    /// Worker threads, 0 for all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long)]
    dense: bool,
    /// Records file (CSV).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RateArgs {
    /// Records file written by `sweep`.
    records: PathBuf,
    /// Write the fits as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write plot-ready rows (chosen records, floored risks) here.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 0.25)]
    r: f64,
    #[arg(long, default_value_t = 2)]
    alpha: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    noise_sigma: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.001,0.01,0.1")]
    lambda_list: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1,3,8")]
    t_list: Vec<usize>,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Largest acceptable relative L2 error.
    #[arg(long, default_value_t = 1e-6)]
    threshold: f64,
}

#[derive(Args)]
struct QualificationArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    t_list: Vec<u32>,
    /// Exponents; values >= t use the saturation bound.
    #[arg(long, value_delimiter = ',', default_value = "0.5,1")]
    nu: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.001,0.01,0.1")]
    lambda_list: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    grid_points: usize,
}

fn load_or_generate(task: &TaskArgs, n: usize, data: Option<&PathBuf>) -> Result<Dataset> {
    match data {
        Some(path) => read_dataset(path).with_context(|| format!("reading {}", path.display())),
        None => Ok(generate(&task.spec(n))?),
    }
}

fn make_gram(ds: &Dataset, dense: bool) -> Result<Box<dyn Gram>> {
    let spec = ds.spec.learning_kernel()?;
    if !dense && spec.order() == 2 && ds.inputs_distinct() {
        Ok(Box::new(SplineGram2::new(&ds.inputs)?))
    } else {
        Ok(Box::new(gram_matrix(spec, &ds.inputs)?))
    }
}

fn write_or_print(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let ds = generate(&a.task.spec(a.n))?;
    write_dataset(&ds, &a.out)?;
    let positives = ds.labels.iter().filter(|&&y| y > 0.0).count();
    println!(
        "wrote {} samples to {} (target order {}, {} positive labels)",
        ds.len(),
        a.out.display(),
        ds.spec.target_order()?,
        positives
    );
    Ok(())
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let ds = load_or_generate(&a.task, a.n, a.data.as_ref())?;
    let gram = make_gram(&ds, a.dense)?;
    let loss = ds.spec.loss;
    let problem = Problem::new(loss, gram.as_ref(), &ds.labels)?;
    let radius = loss.gsc_radius(&gram.diagonal())?;
    let config = make_schedule(a.lambda, a.t, a.eps, radius, enforce_bound_default(loss))?;
    let traj = run_iterated_tikhonov(&problem, &config)?;
    let est = traj.last();
    let risk = McSample::new(&ds.spec, a.mc_seed, a.mc_samples)?.excess_risk(gram.as_ref(), est)?;
    let report = json!({
        "loss": loss.name(),
        "n": ds.len(),
        "lambda": a.lambda,
        "t": a.t,
        "schedule": config.schedule,
        "achieved_decrements": traj.achieved_decrements,
        "newton_iterations": traj.newton_iterations,
        "empirical_risk": problem.empirical_risk(&est.predictions(gram.as_ref())),
        "excess_risk": risk.value,
        "std_error": risk.std_error,
        "mc_samples": risk.mc_samples,
        "coefficients": est.coefficients,
    });
    write_or_print(a.out.as_ref(), &serde_json::to_string_pretty(&report)?)
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let mut config = SweepConfig::new(a.task.spec(1), a.n_grid, a.grid.t_list.clone());
    config.lambda_grid = a.grid.lambdas()?;
    config.repetitions = a.reps;
    config.target_eps = a.eps;
    config.mc_samples = a.mc_samples;
    config.seed = a.task.seed;
    config.threads = a.threads;
    config.backend = if a.dense { Backend::Dense } else { Backend::Auto };
    config.output_path = Some(a.out.clone());
    let records = run_sweep(&config)?;
    let errors = records.iter().filter(|r| r.chosen == Chosen::Error).count();
    println!("wrote {} records to {} ({errors} failed)", records.len(), a.out.display());
    Ok(())
}

fn cmd_rate(a: RateArgs) -> Result<()> {
    let records = read_records(&a.records).with_context(|| format!("reading {}", a.records.display()))?;
    let mut fits = Vec::new();
    for res in fit_all(&records) {
        match res {
            Ok(f) => fits.push(f),
            Err((group, msg)) => eprintln!("skipping {group}: {msg}"),
        }
    }
    print!("{}", format_rate_table(&fits));
    if let Some(path) = &a.out {
        std::fs::write(path, serde_json::to_string_pretty(&fits)?)?;
    }
    if let Some(path) = &a.plot {
        let chosen: Vec<_> = records.iter().filter(|r| r.chosen != Chosen::Error).cloned().collect();
        let floored = plot_values(&chosen);
        let mut text = String::from("loss,r,alpha,t,n,lambda,seed,chosen,excess_risk_plot\n");
        for (r, v) in chosen.iter().zip(floored) {
            text.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.loss,
                r.r,
                r.alpha,
                r.t,
                r.n,
                r.lambda,
                r.seed,
                r.chosen.as_str(),
                v
            ));
        }
        std::fs::write(path, text)?;
    }
    Ok(())
}

fn cmd_oracle(a: OracleArgs) -> Result<bool> {
    let spec = TaskSpec {
        loss: LossModel::Squared,
        r: a.r,
        alpha: a.alpha,
        n: a.n,
        seed: a.seed,
        noise_sigma: a.noise_sigma,
    };
    let ds = generate(&spec)?;
    let k = gram_matrix(spec.learning_kernel()?, &ds.inputs)?;
    let problem = Problem::new(LossModel::Squared, &k, &ds.labels)?;
    let t_max = a.t_list.iter().copied().max().unwrap_or(1);
    let mut worst = 0.0f64;
    println!("{:>10} {:>3} {:>12}", "lambda", "t", "rel_error");
    for &lambda in &a.lambda_list {
        let config = ProxRunConfig {
            lambda,
            steps: t_max,
            target_eps: a.tol,
            schedule: vec![a.tol; t_max],
            max_iter: itreg_core::prox_newton::DEFAULT_MAX_ITER,
        };
        let traj = run_iterated_tikhonov(&problem, &config)?;
        for &t in &a.t_list {
            let oracle = filter_apply(FilterSpec::new(t as u32, lambda)?, &k, &ds.labels)?;
            let prox = &traj.iterates[t].coefficients;
            let num: f64 = prox.iter().zip(&oracle.coefficients).map(|(p, o)| (p - o).powi(2)).sum();
            let den: f64 = oracle.coefficients.iter().map(|o| o * o).sum();
            let err = (num / den).sqrt();
            worst = worst.max(err);
            println!("{lambda:>10} {t:>3} {err:>12.3e}");
        }
    }
    let ok = worst <= a.threshold;
    println!("max relative error {worst:.3e}: {}", if ok { "ok" } else { "ABOVE THRESHOLD" });
    Ok(ok)
}

fn cmd_qualification(a: QualificationArgs) -> Result<bool> {
    let grid = unit_sigma_grid(a.grid_points);
    let mut ok = true;
    println!("{:>3} {:>6} {:>10} {:>14} {:>12} {:>14} {:>9}", "t", "nu", "lambda", "sup", "argmax", "bound", "status");
    for &t in &a.t_list {
        for &nu in &a.nu {
            let rep = qualification_check(t, nu, &a.lambda_list, &grid)?;
            for row in &rep.rows {
                ok &= !row.violated;
                println!(
                    "{t:>3} {nu:>6} {:>10} {:>14.6e} {:>12.6e} {:>14.6e} {:>9}",
                    row.lambda,
                    row.sup,
                    row.argmax,
                    row.bound,
                    if row.violated { "VIOLATED" } else { "ok" }
                );
            }
        }
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a).map(|_| true),
        Command::Fit(a) => cmd_fit(a).map(|_| true),
        Command::Sweep(a) => cmd_sweep(a).map(|_| true),
        Command::Rate(a) => cmd_rate(a).map(|_| true),
        Command::OracleCheck(a) => cmd_oracle(a),
        Command::Qualification(a) => cmd_qualification(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
