//! Sweep presets for the sample-size, context-length, width and
//! regularization studies, the Monte Carlo runner and result aggregation.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use icl_core::activation::Activation;
use icl_core::config::{validate_config, ExperimentConfig, ValidConfig};
use icl_core::features::{calibrate_trace, sample_feature_matrix};
use icl_core::hermite::HermiteExpansion;
use icl_core::rng::{derive_stream, mix, Purpose};
use icl_core::stats;
use icl_core::task::build_dataset;

use crate::error::{LabError, Result};
use crate::evaluation::{paired_difference, test_noise, EvalContext, PairedDifference, TestBatch};
use crate::models::{fit_linear_block, fit_mlp_preact, fit_surrogate_preact, FeatureBlock, TrainedModel};
use crate::ridge::SolverPath;

pub const PRESETS: [&str; 5] = ["fig1_relu", "fig1_tanh", "fig2a", "fig2b", "fig2c"];
pub const DEFAULT_SCALE_D: usize = 40;

pub const FIG1_N_GRID: [f64; 7] = [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0];
pub const FIG2A_ELL_GRID: [f64; 5] = [0.25, 0.5, 1.0, 1.5, 2.0];
pub const FIG2B_M_GRID: [f64; 10] = [0.25, 0.5, 0.75, 0.9, 1.0, 1.1, 1.25, 1.5, 2.0, 4.0];
pub const FIG2C_LAMBDA_GRID: [f64; 5] = [1e-8, 1e-6, 1e-4, 1e-2, 1e-1];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    N,
    Ell,
    M,
    Lambda,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::N => "n",
            SweepParam::Ell => "ell",
            SweepParam::M => "m",
            SweepParam::Lambda => "lambda",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "n" => Some(SweepParam::N),
            "ell" => Some(SweepParam::Ell),
            "m" => Some(SweepParam::M),
            "lambda" => Some(SweepParam::Lambda),
            _ => None,
        }
    }

    /// Whether the parameter is plotted on a log axis.
    pub fn is_logarithmic(self) -> bool {
        self == SweepParam::Lambda
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ModelKind {
    Linear,
    Mlp(Activation),
    Surrogate(Activation),
}

impl ModelKind {
    pub fn label(&self) -> String {
        match self {
            ModelKind::Linear => "linear".into(),
            ModelKind::Mlp(a) => format!("mlp_{a}"),
            ModelKind::Surrogate(a) => format!("surrogate_{a}"),
        }
    }

    pub fn parse(label: &str) -> Result<Self> {
        if label == "linear" {
            return Ok(ModelKind::Linear);
        }
        let (kind, act) = label
            .split_once('_')
            .ok_or_else(|| LabError::Invalid(format!("unknown model `{label}`")))?;
        let act = Activation::from_name(act)?;
        match kind {
            "mlp" => Ok(ModelKind::Mlp(act)),
            "surrogate" => Ok(ModelKind::Surrogate(act)),
            _ => Err(LabError::Invalid(format!("unknown model `{label}`"))),
        }
    }

    fn needs_features(&self) -> bool {
        !matches!(self, ModelKind::Linear)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub name: String,
    pub base: ExperimentConfig,
    pub sweep_param: SweepParam,
    pub values: Vec<f64>,
    pub models: Vec<ModelKind>,
    pub n_runs: usize,
}

impl SweepSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.base.master_seed = seed;
        self
    }

    pub fn with_runs(mut self, runs: usize) -> Self {
        self.n_runs = runs;
        self.base.n_runs = runs;
        self
    }

    pub fn d(&self) -> usize {
        self.base.d
    }

    /// The base configuration with the swept parameter set to `value`.
    pub fn config_at(&self, value: f64) -> Result<ValidConfig> {
        let mut cfg = self.base.clone();
        let count = || -> Result<usize> {
            if value.fract() == 0.0 && value >= 0.0 && value.is_finite() {
                Ok(value as usize)
            } else {
                Err(LabError::Invalid(format!(
                    "{} must be a whole number (got {value})",
                    self.sweep_param
                )))
            }
        };
        match self.sweep_param {
            SweepParam::N => cfg.n = count()?,
            SweepParam::Ell => cfg.ell = count()?,
            SweepParam::M => cfg.m = count()?,
            SweepParam::Lambda => cfg.lambda = value,
        }
        Ok(validate_config(cfg)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(LabError::Invalid("sweep has no values".into()));
        }
        if self.values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LabError::Invalid(
                "sweep values must be strictly increasing".into(),
            ));
        }
        if self.models.is_empty() {
            return Err(LabError::Invalid("sweep has no models".into()));
        }
        if self.n_runs == 0 {
            return Err(LabError::Invalid("n_runs must be at least 1".into()));
        }
        for &v in &self.values {
            self.config_at(v)?;
        }
        Ok(())
    }
}

fn scaled(factors: &[f64], unit: f64) -> Vec<f64> {
    let mut out: Vec<f64> = factors.iter().map(|f| (f * unit).round().max(1.0)).collect();
    out.dedup();
    out
}

/// A named preset at scale `d` (ℓ = d, k = d/2, ρ = 0.01 throughout).
pub fn preset(name: &str, d: usize) -> Result<SweepSpec> {
    if d < 2 {
        return Err(LabError::Invalid(format!("scale d must be at least 2 (got {d})")));
    }
    let df = d as f64;
    let d2 = d * d;
    let n_fig2 = d2 * 3 / 2;
    let base = |target: &str, n: usize, m: usize, lambda: f64| {
        ExperimentConfig::new(d, d, d / 2, n, m, 0.01, lambda, target, "relu", 0)
    };
    let five = vec![
        ModelKind::Linear,
        ModelKind::Mlp(Activation::Relu),
        ModelKind::Surrogate(Activation::Relu),
        ModelKind::Mlp(Activation::Tanh),
        ModelKind::Surrogate(Activation::Tanh),
    ];
    let spec = match name {
        "fig1_relu" | "fig1_tanh" => SweepSpec {
            name: name.into(),
            base: base(&name[5..], n_fig2, d2, 1e-8),
            sweep_param: SweepParam::N,
            values: scaled(&FIG1_N_GRID, d2 as f64),
            models: five,
            n_runs: icl_core::config::DEFAULT_N_RUNS,
        },
        "fig2a" => SweepSpec {
            name: name.into(),
            base: base("relu", n_fig2, d2, 1e-8),
            sweep_param: SweepParam::Ell,
            values: scaled(&FIG2A_ELL_GRID, df),
            models: five,
            n_runs: icl_core::config::DEFAULT_N_RUNS,
        },
        "fig2b" => SweepSpec {
            name: name.into(),
            base: base("relu", n_fig2, d2, 1e-8),
            sweep_param: SweepParam::M,
            values: scaled(&FIG2B_M_GRID, n_fig2 as f64),
            models: five,
            n_runs: icl_core::config::DEFAULT_N_RUNS,
        },
        "fig2c" => SweepSpec {
            name: name.into(),
            base: base("relu", n_fig2, n_fig2, 1e-8),
            sweep_param: SweepParam::Lambda,
            values: FIG2C_LAMBDA_GRID.to_vec(),
            models: vec![
                ModelKind::Linear,
                ModelKind::Mlp(Activation::Relu),
                ModelKind::Surrogate(Activation::Relu),
            ],
            n_runs: icl_core::config::DEFAULT_N_RUNS,
        },
        other => return Err(LabError::UnknownPreset(other.into())),
    };
    Ok(spec)
}

/// One (sweep value, model, run) measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub sweep_value: f64,
    pub model: String,
    pub run_index: usize,
    pub icl_error: f64,
    pub stderr: f64,
    pub null_risk: f64,
    pub solver_path: SolverPath,
    pub wall_time_seconds: f64,
    pub dataset_checksum: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub sweep_value: f64,
    pub run_index: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub sweep_value: f64,
    pub model: String,
    pub mean: f64,
    /// Across-run sample standard deviation.
    pub std: f64,
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub rows: Vec<RunRow>,
    pub failures: Vec<RunFailure>,
    pub aggregate: Vec<AggregateRow>,
}

impl SweepResult {
    pub fn group(&self, value: f64, model: &str) -> Result<&AggregateRow> {
        self.aggregate
            .iter()
            .find(|a| a.sweep_value == value && a.model == model)
            .ok_or_else(|| LabError::EmptyGroup {
                value,
                model: model.into(),
            })
    }

    /// Run-paired difference `a − b` of the ICL errors at `value`, over runs
    /// where both models succeeded.
    pub fn paired(&self, value: f64, model_a: &str, model_b: &str) -> Result<PairedDifference> {
        let runs = |model: &str| -> BTreeMap<usize, f64> {
            self.rows
                .iter()
                .filter(|r| r.sweep_value == value && r.model == model)
                .map(|r| (r.run_index, r.icl_error))
                .collect()
        };
        let (a, b) = (runs(model_a), runs(model_b));
        let (xs, ys): (Vec<f64>, Vec<f64>) = a
            .iter()
            .filter_map(|(run, x)| b.get(run).map(|y| (*x, *y)))
            .unzip();
        if xs.is_empty() {
            return Err(LabError::EmptyGroup {
                value,
                model: format!("{model_a} & {model_b}"),
            });
        }
        paired_difference(&xs, &ys)
    }

    /// Aggregate means of `model` in sweep-value order.
    pub fn curve(&self, model: &str) -> Vec<(f64, f64)> {
        self.aggregate
            .iter()
            .filter(|a| a.model == model)
            .map(|a| (a.sweep_value, a.mean))
            .collect()
    }
}

/// Per-(value, model) mean and across-run standard deviation. Groups are
/// ordered by value then model label, and each group is reduced over
/// ascending run index, so the result does not depend on row order.
pub fn aggregate(rows: &[RunRow]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(OrdF64, &str), Vec<(usize, f64)>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((OrdF64(r.sweep_value), r.model.as_str()))
            .or_default()
            .push((r.run_index, r.icl_error));
    }
    groups
        .into_iter()
        .map(|((v, model), mut runs)| {
            runs.sort_by_key(|&(i, _)| i);
            let errs: Vec<f64> = runs.iter().map(|&(_, e)| e).collect();
            AggregateRow {
                sweep_value: v.0,
                model: model.into(),
                mean: stats::mean(&errs),
                std: stats::sample_std(&errs),
                runs: errs.len(),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses rayon's default.
    pub threads: Option<usize>,
    /// Print a progress line to stderr.
    pub progress: bool,
}

/// Seed of the run `(value, run)`; every stream of the run derives from it.
pub fn run_seed(master_seed: u64, value: f64, run: usize) -> u64 {
    mix(&[master_seed, value.to_bits(), run as u64])
}

pub fn run_sweep(spec: &SweepSpec, options: RunOptions) -> Result<SweepResult> {
    spec.validate()?;
    let mut expansions = BTreeMap::new();
    for kind in &spec.models {
        if let ModelKind::Surrogate(act) = kind {
            expansions.insert(act.name(), HermiteExpansion::of(*act, spec.base.degree_r)?);
        }
    }
    let jobs: Vec<(f64, usize)> = spec
        .values
        .iter()
        .flat_map(|&v| (0..spec.n_runs).map(move |r| (v, r)))
        .collect();
    let done = AtomicUsize::new(0);
    let total = jobs.len();
    let work = |&(value, run): &(f64, usize)| {
        let out = run_one(spec, &expansions, value, run);
        let k = done.fetch_add(1, Ordering::Relaxed) + 1;
        if options.progress {
            eprint!("\r{}: {k}/{total} runs", spec.name);
            let _ = std::io::stderr().flush();
        }
        (value, run, out)
    };
    let outcomes: Vec<_> = match options.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| LabError::Invalid(format!("cannot start worker pool: {e}")))?
            .install(|| jobs.par_iter().map(work).collect()),
        None => jobs.par_iter().map(work).collect(),
    };
    if options.progress {
        eprintln!();
    }
    let (rows, failures) = partition(outcomes);
    let aggregate = aggregate(&rows);
    Ok(SweepResult {
        spec: spec.clone(),
        rows,
        failures,
        aggregate,
    })
}

type Outcome = (f64, usize, Result<Vec<RunRow>>);

/// Splits job outcomes into rows and failure markers, keeping job order.
fn partition(outcomes: Vec<Outcome>) -> (Vec<RunRow>, Vec<RunFailure>) {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (value, run, out) in outcomes {
        match out {
            Ok(r) => rows.extend(r),
            Err(e) => failures.push(RunFailure {
                sweep_value: value,
                run_index: run,
                message: e.to_string(),
            }),
        }
    }
    (rows, failures)
}

fn run_one(
    spec: &SweepSpec,
    expansions: &BTreeMap<&str, HermiteExpansion>,
    value: f64,
    run: usize,
) -> Result<Vec<RunRow>> {
    let cfg = spec.config_at(value)?;
    let seed = run_seed(cfg.master_seed, value, run);
    let needs_f = spec.models.iter().any(ModelKind::needs_features);

    let f = if needs_f {
        let t = calibrate_trace(&derive_stream(seed, Purpose::Calibration, 0), &cfg)?;
        Some(sample_feature_matrix(
            &mut derive_stream(seed, Purpose::Features, 0),
            cfg.p(),
            cfg.m,
            t,
        )?)
    } else {
        None
    };
    let train = build_dataset(&derive_stream(seed, Purpose::Task, 0), &cfg);
    let checksum = train.checksum();
    let targets = train.targets();
    let block = FeatureBlock::from_prompts(&train.prompts)?;
    drop(train);
    let train_preact = f.as_ref().map(|f| block.project(f)).transpose()?;

    let test_stream = derive_stream(seed, Purpose::Test, 0);
    let batch = TestBatch::draw(&cfg, &test_stream, cfg.n_test)?;
    let null_risk = batch.null_risk();
    let ctx = EvalContext::new(&batch, f.as_ref())?;
    let eval_noise = test_noise(&test_stream);
    let train_noise = derive_stream(seed, Purpose::SurrogateNoise, 0);
    let lambda_eff = cfg.lambda_eff();

    let mut rows = Vec::with_capacity(spec.models.len());
    for kind in &spec.models {
        let start = Instant::now();
        let model = match (kind, &f, &train_preact) {
            (ModelKind::Linear, _, _) => {
                TrainedModel::Linear(fit_linear_block(&block, &targets, lambda_eff)?)
            }
            (ModelKind::Mlp(act), Some(f), Some(a)) => {
                TrainedModel::Mlp(fit_mlp_preact(a.as_ref(), f, *act, &targets, lambda_eff)?)
            }
            (ModelKind::Surrogate(act), Some(f), Some(a)) => TrainedModel::Surrogate(fit_surrogate_preact(
                a.as_ref(),
                f,
                &expansions[act.name()],
                *act,
                &targets,
                lambda_eff,
                &train_noise,
            )?),
            _ => unreachable!("feature matrix is sampled whenever a model needs it"),
        };
        let est = ctx.evaluate(&model, &eval_noise, cfg.freeze_surrogate_noise)?;
        rows.push(RunRow {
            sweep_value: value,
            model: kind.label(),
            run_index: run,
            icl_error: est.mean,
            stderr: est.stderr,
            null_risk,
            solver_path: model.report().solver_path,
            wall_time_seconds: start.elapsed().as_secs_f64(),
            dataset_checksum: checksum,
        });
    }
    Ok(rows)
}
