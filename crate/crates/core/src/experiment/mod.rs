//! Config-driven experiments: regret-versus-budget curves, design reports,
//! barrier estimates and policy-elimination runs, written as CSV tables.
//!
//! Every table except the `seconds` column of `designs.csv` is a pure
//! function of the configuration and the seed: trial `i` of method `m` at
//! budget `T` draws from the stream derived from `(seed, m, T, i)` and rows
//! are emitted in a fixed order, whatever the worker count.

mod config;

pub use config::{default_t_grid, ConfigError, ExperimentConfig, InstanceSpec, KEYS};

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::design::{active_design, g_optimal_design, passive_design, DesignOptions, DesignProblem};
use crate::error::SclbError;
use crate::eval::{
    barrier_estimate, match_samples, naive_baseline_regret, simple_regret, ActionRule, MeanStderr,
    StochasticActions, UniformActions,
};
use crate::explore::{active_sclb_design, passive_sclb_design, run_with_design, ExplorationConfig, Method};
use crate::instances::{empirical_context_dist, hard_instance_with_noise, load_tabular, random_instance};
use crate::model::{BanditInstance, Design};
use crate::rage::{active_contextual_rage, enumerate_policies, rho_values, RageConfig, RageStatus, POLICY_CAP};
use crate::seed::{self, stream};

/// Failures of an experiment run, each with a process exit code.
#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{path}: {error}")]
    Config { path: String, error: ConfigError },
    #[error("dataset not found: {}", .0.display())]
    MissingDataset(PathBuf),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Library(#[from] SclbError),
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

impl ExperimentError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config { .. } => 2,
            ExperimentError::MissingDataset(_) => 3,
            _ => 1,
        }
    }
}

pub type ExperimentResult<T> = std::result::Result<T, ExperimentError>;

/// Command-line overrides shared by all subcommands.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    pub seed: Option<u64>,
    /// Worker threads; `None` uses every available core.
    pub jobs: Option<usize>,
    pub out_dir: PathBuf,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            seed: None,
            jobs: None,
            out_dir: out_dir.into(),
        }
    }

    pub fn jobs(mut self, jobs: usize) -> Self {
        self.jobs = Some(jobs);
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

/// Reads and parses a config file; relative dataset paths are resolved
/// against the file's directory.
pub fn load_config(path: &Path) -> ExperimentResult<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| ExperimentError::Config {
        path: path.display().to_string(),
        error: ConfigError {
            line: None,
            message: format!("cannot read config: {e}"),
        },
    })?;
    let mut config = ExperimentConfig::parse(&text).map_err(|error| ExperimentError::Config {
        path: path.display().to_string(),
        error,
    })?;
    if let InstanceSpec::Tabular { features, rewards } = &mut config.instance {
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [features, rewards] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
    Ok(config)
}

/// Builds the configured instance. Random instances draw from the stream
/// derived from the seed.
pub fn build_instance(config: &ExperimentConfig, seed: u64) -> ExperimentResult<BanditInstance> {
    match &config.instance {
        InstanceSpec::Hard { d, n_actions } => Ok(hard_instance_with_noise(*d, *n_actions, config.noise_std)?),
        InstanceSpec::Random {
            d,
            n_contexts,
            n_actions,
        } => {
            let mut rng = seed::rng(seed, &[stream::INSTANCE]);
            Ok(random_instance(*d, *n_contexts, *n_actions, config.noise_std, &mut rng)?.normalized())
        }
        InstanceSpec::Tabular { features, rewards } => {
            for p in [features, rewards] {
                if !p.exists() {
                    return Err(ExperimentError::MissingDataset(p.clone()));
                }
            }
            Ok(load_tabular(features, rewards)?)
        }
    }
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> ExperimentResult<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder.build().map_err(|e| ExperimentError::Pool(e.to_string()))?;
    Ok(pool.install(f))
}

fn method_code(m: Method) -> u64 {
    Method::ALL.iter().position(|&x| x == m).unwrap() as u64
}

/// One trial of one method at one budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResultRow {
    pub method: Method,
    pub horizon: usize,
    pub trial: usize,
    pub regret: f64,
    pub seed: u64,
}

/// Mean regret of one method at one budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub method: Method,
    pub horizon: usize,
    pub regret: MeanStderr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub curve: Vec<CurvePoint>,
    pub naive_regret: f64,
}

impl RunOutput {
    pub fn point(&self, method: Method, horizon: usize) -> Option<&CurvePoint> {
        self.curve.iter().find(|p| p.method == method && p.horizon == horizon)
    }
}

fn design_options(config: &ExperimentConfig) -> DesignOptions {
    DesignOptions::default().backend(config.backend)
}

fn exploration_config(config: &ExperimentConfig, horizon: usize, seed: u64) -> ExplorationConfig {
    let mut c = ExplorationConfig::new(horizon, config.lambda, seed)
        .alpha(config.alpha)
        .replacement(config.replacement)
        .design_options(design_options(config));
    c.delta = config.delta;
    c
}

/// Runs every configured method at every budget for `trials` trials and
/// scores the learned policies. No files are written.
pub fn simulate(
    instance: &BanditInstance,
    config: &ExperimentConfig,
    seed: u64,
    jobs: Option<usize>,
) -> ExperimentResult<RunOutput> {
    with_pool(jobs, || simulate_in_pool(instance, config, seed))?
}

fn simulate_in_pool(instance: &BanditInstance, config: &ExperimentConfig, seed: u64) -> ExperimentResult<RunOutput> {
    let planning = match config.empirical_p {
        Some(m) => {
            let mut rng = seed::rng(seed, &[stream::EMPIRICAL]);
            Some(instance.with_context_dist(empirical_context_dist(instance, m, &mut rng)?)?)
        }
        None => None,
    };

    // fixed designs do not depend on the trial
    let fixed: Vec<(Method, usize)> = config
        .methods
        .iter()
        .filter(|m| matches!(m, Method::ActiveSclb | Method::PassiveSclb))
        .flat_map(|&m| config.t_grid.iter().map(move |&t| (m, t)))
        .collect();
    let designs: HashMap<(Method, usize), Design> = fixed
        .par_iter()
        .map(|&(m, t)| {
            let cfg = exploration_config(config, t, seed);
            let w = match m {
                Method::ActiveSclb => active_sclb_design(planning.as_ref().unwrap_or(instance), &cfg)?,
                _ => passive_sclb_design(instance, &cfg)?,
            };
            Ok(((m, t), w))
        })
        .collect::<Result<_, SclbError>>()?;

    let jobs: Vec<(Method, usize, usize)> = config
        .methods
        .iter()
        .flat_map(|&m| {
            config
                .t_grid
                .iter()
                .flat_map(move |&t| (0..config.trials).map(move |i| (m, t, i)))
        })
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(method, horizon, trial)| {
            let trial_seed = seed::derive(seed, &[stream::TRIALS, method_code(method), horizon as u64, trial as u64]);
            let cfg = exploration_config(config, horizon, trial_seed);
            let run = match designs.get(&(method, horizon)) {
                Some(w) => run_with_design(instance, w, &cfg)?,
                None => method.run(instance, &cfg)?,
            };
            Ok(ResultRow {
                method,
                horizon,
                trial,
                regret: simple_regret(instance, &run.policy)?,
                seed: trial_seed,
            })
        })
        .collect::<Result<Vec<_>, SclbError>>()?;

    let curve = rows
        .chunks(config.trials)
        .map(|chunk| CurvePoint {
            method: chunk[0].method,
            horizon: chunk[0].horizon,
            regret: MeanStderr::of(&chunk.iter().map(|r| r.regret).collect::<Vec<_>>()),
        })
        .collect();
    Ok(RunOutput {
        rows,
        curve,
        naive_regret: naive_baseline_regret(instance)?,
    })
}

fn write_file(path: &Path, contents: &str) -> ExperimentResult<()> {
    fs::write(path, contents).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Shortest round-trip text, in scientific notation for very small or large magnitudes.
pub fn format_f64(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e15).contains(&a) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

fn prepare_out(opts: &RunOptions) -> ExperimentResult<()> {
    fs::create_dir_all(&opts.out_dir).map_err(|source| ExperimentError::Io {
        path: opts.out_dir.clone(),
        source,
    })
}

/// `run`: writes `results.csv`, `designs.csv` and `summary.txt`.
pub fn run_experiment(config: &ExperimentConfig, opts: &RunOptions) -> ExperimentResult<RunOutput> {
    let seed = opts.seed.unwrap_or(config.seed);
    let instance = build_instance(config, seed)?;
    prepare_out(opts)?;
    let output = simulate(&instance, config, seed, opts.jobs)?;

    let results = csv_table(
        &["method", "T", "trial", "regret", "seed"],
        output.rows.iter().map(|r| {
            vec![
                r.method.to_string(),
                r.horizon.to_string(),
                r.trial.to_string(),
                format_f64(r.regret),
                r.seed.to_string(),
            ]
        }),
    );
    write_file(&opts.out_dir.join("results.csv"), &results)?;
    write_designs(&instance, config, opts)?;
    write_file(&opts.out_dir.join("summary.txt"), &summary(&instance, config, seed, &output)?)?;
    Ok(output)
}

fn summary(instance: &BanditInstance, config: &ExperimentConfig, seed: u64, output: &RunOutput) -> ExperimentResult<String> {
    let mut s = format!(
        "instance: {} (contexts {}, actions {}, dim {})\nseed: {seed}\ntrials: {}\nnaive_baseline_regret: {}\n\n",
        config.instance.label(),
        instance.n_contexts(),
        instance.n_actions(),
        instance.dim(),
        config.trials,
        format_f64(output.naive_regret)
    );
    s.push_str(&csv_table(
        &["method", "T", "trials", "mean_regret", "stderr"],
        output.curve.iter().map(|p| {
            vec![
                p.method.to_string(),
                p.horizon.to_string(),
                p.regret.n.to_string(),
                format_f64(p.regret.mean),
                format_f64(p.regret.stderr),
            ]
        }),
    ));
    let curve_of = |m: Method| -> Vec<(u64, f64)> {
        output
            .curve
            .iter()
            .filter(|p| p.method == m)
            .map(|p| (p.horizon as u64, p.regret.mean))
            .collect()
    };
    if config.methods.contains(&Method::ActiveSclb) {
        let reference = curve_of(Method::ActiveSclb);
        let mut rows = Vec::new();
        for &m in config.methods.iter().filter(|&&m| m != Method::ActiveSclb) {
            for e in match_samples(&reference, &curve_of(m))? {
                rows.push(vec![
                    m.to_string(),
                    e.reference.to_string(),
                    e.baseline.to_string(),
                    e.saturated.to_string(),
                ]);
            }
        }
        if !rows.is_empty() {
            s.push_str("\nbudget a baseline needs to match active_sclb\n");
            s.push_str(&csv_table(&["method", "T_active", "T_baseline", "saturated"], rows));
        }
    }
    Ok(s)
}

/// One line of `designs.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignRow {
    pub instance: String,
    pub method: String,
    pub alpha: f64,
    pub lambda: f64,
    pub objective: f64,
    pub gap: f64,
    pub seconds: f64,
}

/// Design objectives of the G-optimal, active and passive designs at the
/// report horizon.
pub fn report_designs(instance: &BanditInstance, config: &ExperimentConfig) -> ExperimentResult<Vec<DesignRow>> {
    let horizon = config
        .design_t
        .unwrap_or_else(|| config.t_grid.iter().copied().max().unwrap_or(1));
    let opts = design_options(config);
    let label = config.instance.label();
    let mut rows = Vec::new();

    let start = Instant::now();
    let (q, rep) = g_optimal_design(instance, config.lambda, horizon, opts.tol)?;
    rows.push(DesignRow {
        instance: label.clone(),
        method: "g_optimal".into(),
        alpha: 0.0,
        lambda: config.lambda,
        objective: crate::design::design_objective(instance, &q)?,
        gap: rep.certificate_gap,
        seconds: start.elapsed().as_secs_f64(),
    });
    for (name, passive) in [("active", false), ("passive", true)] {
        let start = Instant::now();
        let problem = DesignProblem::new(instance, config.lambda, horizon).alpha(config.alpha);
        let (_, rep) = if passive {
            passive_design(&problem, &opts)?
        } else {
            active_design(&problem, &opts)?
        };
        rows.push(DesignRow {
            instance: label.clone(),
            method: name.into(),
            alpha: config.alpha,
            lambda: config.lambda,
            objective: rep.objective_value,
            gap: rep.certificate_gap,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(rows)
}

fn write_designs(instance: &BanditInstance, config: &ExperimentConfig, opts: &RunOptions) -> ExperimentResult<Vec<DesignRow>> {
    let rows = report_designs(instance, config)?;
    let table = csv_table(
        &["instance", "method", "alpha", "lambda", "objective", "gap", "seconds"],
        rows.iter().map(|r| {
            vec![
                r.instance.clone(),
                r.method.clone(),
                format_f64(r.alpha),
                format_f64(r.lambda),
                format_f64(r.objective),
                format_f64(r.gap),
                format!("{:.6}", r.seconds),
            ]
        }),
    );
    write_file(&opts.out_dir.join("designs.csv"), &table)?;
    Ok(rows)
}

/// `designs`: writes `designs.csv`.
pub fn run_designs(config: &ExperimentConfig, opts: &RunOptions) -> ExperimentResult<Vec<DesignRow>> {
    let seed = opts.seed.unwrap_or(config.seed);
    let instance = build_instance(config, seed)?;
    prepare_out(opts)?;
    with_pool(opts.jobs, || write_designs(&instance, config, opts))?
}

/// One line of `barrier.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierRow {
    pub scheme: String,
    pub horizon: usize,
    pub trials: usize,
    pub lambda: f64,
    pub gamma: MeanStderr,
    pub scaled: MeanStderr,
    pub dim: usize,
}

/// `barrier`: Monte-Carlo `E[Gamma]` of passive schemes (uniform actions
/// and the passive design's conditional actions); writes `barrier.csv`.
pub fn run_barrier(config: &ExperimentConfig, opts: &RunOptions) -> ExperimentResult<Vec<BarrierRow>> {
    let seed = opts.seed.unwrap_or(config.seed);
    let instance = build_instance(config, seed)?;
    prepare_out(opts)?;
    let rows = with_pool(opts.jobs, || -> ExperimentResult<Vec<BarrierRow>> {
        let mut rows = Vec::new();
        for &t in &config.barrier_t {
            let uniform = UniformActions {
                n_actions: instance.n_actions(),
            };
            let problem = DesignProblem::new(&instance, config.lambda, t);
            let (w, _) = passive_design(&problem, &design_options(config))?;
            let conditional = StochasticActions::from_design(&instance, &w)?;
            let schemes: [(&str, &dyn ActionRule); 2] = [("uniform", &uniform), ("passive_design", &conditional)];
            for (k, (name, rule)) in schemes.into_iter().enumerate() {
                let s = seed::derive(seed, &[stream::BARRIER, k as u64, t as u64]);
                let est = barrier_estimate(&instance, rule, t, config.barrier_trials, config.barrier_lambda, s)?;
                rows.push(BarrierRow {
                    scheme: name.into(),
                    horizon: t,
                    trials: config.barrier_trials,
                    lambda: config.barrier_lambda,
                    gamma: est.gamma,
                    scaled: est.scaled,
                    dim: instance.dim(),
                });
            }
        }
        Ok(rows)
    })??;
    let label = config.instance.label();
    let table = csv_table(
        &[
            "instance",
            "scheme",
            "T",
            "trials",
            "lambda",
            "mean_gamma",
            "stderr_gamma",
            "mean_scaled",
            "stderr_scaled",
            "d",
        ],
        rows.iter().map(|r| {
            vec![
                label.clone(),
                r.scheme.clone(),
                r.horizon.to_string(),
                r.trials.to_string(),
                format_f64(r.lambda),
                format_f64(r.gamma.mean),
                format_f64(r.gamma.stderr),
                format_f64(r.scaled.mean),
                format_f64(r.scaled.stderr),
                r.dim.to_string(),
            ]
        }),
    );
    write_file(&opts.out_dir.join("barrier.csv"), &table)?;
    Ok(rows)
}

/// Outcome of the `rage` subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct RageReport {
    pub runs: usize,
    pub kept_optimum: usize,
    pub mean_samples: f64,
    pub rho_active: f64,
    pub rho_passive: f64,
}

/// `rage`: repeated Active-ContextualRAGE runs over all policies, plus the
/// `rho` values; writes `rage.csv` and `rage_summary.txt`.
pub fn run_rage(config: &ExperimentConfig, opts: &RunOptions) -> ExperimentResult<RageReport> {
    let seed = opts.seed.unwrap_or(config.seed);
    let instance = build_instance(config, seed)?;
    prepare_out(opts)?;
    let class = enumerate_policies(&instance, POLICY_CAP)?;
    let star = class
        .position(&instance.optimal_policy())
        .expect("enumeration contains every policy");
    let rage_config = RageConfig::new(config.rage_epsilon, config.rage_delta).aggregator(config.rage_aggregator);
    let (results, rho) = with_pool(opts.jobs, || -> ExperimentResult<_> {
        let results = (0..config.rage_runs)
            .into_par_iter()
            .map(|i| {
                let mut rng = seed::rng(seed, &[stream::RAGE, i as u64]);
                active_contextual_rage(&instance, &class, &rage_config, &mut rng)
            })
            .collect::<Result<Vec<_>, SclbError>>()?;
        let rho = rho_values(&instance, config.rage_epsilon, &design_options(config))?;
        Ok((results, rho))
    })??;

    let table = csv_table(
        &["run", "epsilon", "delta", "survivors", "contains_optimum", "samples", "status"],
        results.iter().enumerate().map(|(i, r)| {
            vec![
                i.to_string(),
                format_f64(config.rage_epsilon),
                format_f64(config.rage_delta),
                r.survivors.len().to_string(),
                r.survivors.contains(&star).to_string(),
                r.total_samples.to_string(),
                match r.status {
                    RageStatus::Completed => "completed".into(),
                    RageStatus::BudgetCapped => "budget_capped".into(),
                },
            ]
        }),
    );
    write_file(&opts.out_dir.join("rage.csv"), &table)?;
    let report = RageReport {
        runs: results.len(),
        kept_optimum: results.iter().filter(|r| r.survivors.contains(&star)).count(),
        mean_samples: results.iter().map(|r| r.total_samples as f64).sum::<f64>() / results.len() as f64,
        rho_active: rho.active,
        rho_passive: rho.passive,
    };
    let text = format!(
        "instance: {}\npolicies: {}\nruns: {}\noptimum kept: {}\nmean samples: {}\nrho_active: {}\nrho_passive: {}\n",
        config.instance.label(),
        class.len(),
        report.runs,
        report.kept_optimum,
        format_f64(report.mean_samples),
        format_f64(report.rho_active),
        format_f64(report.rho_passive)
    );
    write_file(&opts.out_dir.join("rage_summary.txt"), &text)?;
    Ok(report)
}
