//! Monte Carlo ICL error over fresh tasks, the zero-predictor baseline and
//! the concentration / Gaussianity diagnostics of the random features.

use std::fmt::Write as _;

use faer::Mat;
use serde::{Deserialize, Serialize};

use icl_core::config::{TraceMode, ValidConfig};
use icl_core::features::{build_h, fresh_prompt, h_norm_sq, FeatureVector, RandomFeatureMatrix};
use icl_core::rng::RngStream;
use icl_core::stats;
use icl_core::task::sample_task;

use crate::error::{LabError, Result};
use crate::models::{predict_mlp_preact, predict_surrogate_preact, FeatureBlock, TrainedModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    pub mean: f64,
    /// iid standard error over test prompts.
    pub stderr: f64,
    pub n_test: usize,
}

impl ErrorEstimate {
    pub fn from_squared_errors(sq: &[f64]) -> Result<Self> {
        if sq.is_empty() {
            return Err(LabError::Invalid("no test prompts to average over".into()));
        }
        Ok(Self {
            mean: stats::mean(sq),
            stderr: stats::std_error(sq),
            n_test: sq.len(),
        })
    }
}

/// Mean and paired standard error of `a − b` over matched samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairedDifference {
    pub mean: f64,
    pub stderr: f64,
}

pub fn paired_difference(a: &[f64], b: &[f64]) -> Result<PairedDifference> {
    if a.len() != b.len() || a.is_empty() {
        return Err(LabError::Invalid(format!(
            "paired samples need equal nonzero lengths (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Ok(PairedDifference {
        mean: stats::mean(&diff),
        stderr: stats::std_error(&diff),
    })
}

/// Test prompts with fresh tasks: prompt `j` is
/// `fresh_prompt(stream, cfg, j, Marginal)`, noisy query label included.
#[derive(Clone, Debug, PartialEq)]
pub struct TestBatch {
    block: FeatureBlock,
    targets: Vec<f64>,
}

impl TestBatch {
    pub fn draw(cfg: &ValidConfig, stream: &RngStream, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(LabError::Invalid("n_test must be at least 1".into()));
        }
        let prompts: Vec<_> = (0..count as u64)
            .map(|j| fresh_prompt(stream, cfg, j, TraceMode::Marginal))
            .collect();
        let targets = prompts.iter().map(|p| p.query_y()).collect();
        Ok(Self {
            block: FeatureBlock::from_prompts(&prompts)?,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn block(&self) -> &FeatureBlock {
        &self.block
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Mean of `y²` over the batch: the error of the zero predictor.
    pub fn null_risk(&self) -> f64 {
        stats::mean(&self.targets.iter().map(|y| y * y).collect::<Vec<_>>())
    }
}

/// A test batch together with its hidden pre-activations under one `F`, so
/// the MLP and surrogate of a run share the projection.
pub struct EvalContext<'a> {
    batch: &'a TestBatch,
    f: Option<&'a RandomFeatureMatrix>,
    preact: Option<Mat<f64>>,
}

impl<'a> EvalContext<'a> {
    pub fn new(batch: &'a TestBatch, f: Option<&'a RandomFeatureMatrix>) -> Result<Self> {
        let preact = f.map(|f| batch.block.project(f)).transpose()?;
        Ok(Self { batch, f, preact })
    }

    /// Predictions for the whole batch. Surrogate residual noise comes from
    /// `noise` (see [`predict_surrogate_preact`]).
    pub fn predict(&self, model: &TrainedModel, noise: &RngStream, frozen: bool) -> Result<Vec<f64>> {
        if let TrainedModel::Linear(lin) = model {
            let block = &self.batch.block;
            if lin.gamma_vec.len() != block.p() {
                return Err(icl_core::Error::DimensionMismatch {
                    what: "feature vector",
                    expected: lin.gamma_vec.len(),
                    found: block.p(),
                }
                .into());
            }
            return Ok((0..block.rows())
                .map(|j| dot(&lin.gamma_vec, block.row(j)))
                .collect());
        }
        let (f, preact) = match (self.f, &self.preact) {
            (Some(f), Some(a)) => (f, a),
            _ => {
                return Err(LabError::Invalid(format!(
                    "model {} needs the feature matrix it was trained with",
                    model.label()
                )))
            }
        };
        let expected = model.f_checksum().unwrap_or_default();
        if expected != f.checksum() {
            return Err(LabError::FeatureMismatch {
                expected,
                found: f.checksum(),
            });
        }
        match model {
            TrainedModel::Mlp(m) => predict_mlp_preact(m, preact.as_ref()),
            TrainedModel::Surrogate(s) => predict_surrogate_preact(s, preact.as_ref(), noise, frozen),
            TrainedModel::Linear(_) => unreachable!(),
        }
    }

    pub fn squared_errors(&self, model: &TrainedModel, noise: &RngStream, frozen: bool) -> Result<Vec<f64>> {
        let pred = self.predict(model, noise, frozen)?;
        let sq: Vec<f64> = pred
            .iter()
            .zip(&self.batch.targets)
            .map(|(p, y)| (y - p) * (y - p))
            .collect();
        if sq.iter().any(|v| !v.is_finite()) {
            return Err(LabError::NonFinite("test predictions"));
        }
        Ok(sq)
    }

    pub fn evaluate(&self, model: &TrainedModel, noise: &RngStream, frozen: bool) -> Result<ErrorEstimate> {
        ErrorEstimate::from_squared_errors(&self.squared_errors(model, noise, frozen)?)
    }
}

/// Root of the surrogate noise used when evaluating on `stream`.
pub fn test_noise(stream: &RngStream) -> RngStream {
    stream.substream(2, 0)
}

/// ICL error of `model` over `cfg.n_test` fresh prompts drawn from `stream`.
pub fn icl_error(
    model: &TrainedModel,
    f: Option<&RandomFeatureMatrix>,
    cfg: &ValidConfig,
    stream: &RngStream,
) -> Result<ErrorEstimate> {
    let batch = TestBatch::draw(cfg, stream, cfg.n_test)?;
    EvalContext::new(&batch, f)?.evaluate(model, &test_noise(stream), cfg.freeze_surrogate_noise)
}

/// Monte Carlo `E[y²]` of the noisy query label over `samples` fresh prompts.
pub fn null_risk(cfg: &ValidConfig, stream: &RngStream, samples: usize) -> Result<f64> {
    if samples == 0 {
        return Err(LabError::Invalid("null risk needs at least one sample".into()));
    }
    let total: f64 = (0..samples as u64)
        .map(|j| {
            let y = fresh_prompt(stream, cfg, j, TraceMode::Marginal).query_y();
            y * y
        })
        .sum();
    Ok(total / samples as f64)
}

/// `‖vec H_Z‖² / t` over `samples` fresh prompts.
pub fn lemma1_ratios(cfg: &ValidConfig, t: f64, stream: &RngStream, samples: usize) -> Result<Vec<f64>> {
    if samples < 100 {
        return Err(icl_core::Error::TooFewSamples {
            what: "concentration diagnostic",
            required: 100,
            got: samples,
        }
        .into());
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(LabError::Invalid(format!(
            "trace constant must be positive (got {t})"
        )));
    }
    Ok((0..samples as u64)
        .map(|j| h_norm_sq(&fresh_prompt(stream, cfg, j, TraceMode::Marginal)) / t)
        .collect())
}

/// Sample standard deviation of `‖vec H_Z‖² / t`; shrinks as `ℓ, d` grow.
pub fn lemma1_diagnostic(cfg: &ValidConfig, t: f64, stream: &RngStream, samples: usize) -> Result<f64> {
    Ok(stats::sample_std(&lemma1_ratios(cfg, t, stream, samples)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// Covariance of `f₁ᵀ vec H_Z` with `ξᵀ x_q`.
    pub cross_cov: f64,
    pub sample_var: f64,
}

/// Moments of the first random projection `f₁ᵀ vec H_Z` for a single fixed
/// task (drawn from sub-stream `(0, 0)` of `stream`).
pub fn gaussianity_diagnostic(
    cfg: &ValidConfig,
    f: &RandomFeatureMatrix,
    stream: &RngStream,
    samples: usize,
) -> Result<MomentReport> {
    gaussianity_diagnostic_with(cfg, f, stream, samples, TraceMode::Conditional)
}

/// [`gaussianity_diagnostic`] with the task either fixed
/// ([`TraceMode::Conditional`]) or fresh per prompt ([`TraceMode::Marginal`]).
pub fn gaussianity_diagnostic_with(
    cfg: &ValidConfig,
    f: &RandomFeatureMatrix,
    stream: &RngStream,
    samples: usize,
    mode: TraceMode,
) -> Result<MomentReport> {
    if samples < 1000 {
        return Err(icl_core::Error::TooFewSamples {
            what: "gaussianity diagnostic",
            required: 1000,
            got: samples,
        }
        .into());
    }
    if f.p() != cfg.p() {
        return Err(icl_core::Error::DimensionMismatch {
            what: "feature matrix rows",
            expected: cfg.p(),
            found: f.p(),
        }
        .into());
    }
    let f1 = f.column(0);
    let mut proj = Vec::with_capacity(samples);
    let mut signal = Vec::with_capacity(samples);
    for j in 0..samples as u64 {
        let prompt = fresh_prompt(stream, cfg, j, mode);
        let task_index = if mode == TraceMode::Conditional { 0 } else { j };
        let xi = sample_task(&mut stream.substream(0, task_index), cfg.d);
        let phi: FeatureVector = build_h(&prompt, cfg.d, cfg.ell)?;
        proj.push(dot(f1, &phi.values));
        signal.push(dot(xi.as_slice(), prompt.query_x()));
    }
    let m = stats::moments(&proj);
    Ok(MomentReport {
        skewness: m.skewness,
        excess_kurtosis: m.excess_kurtosis,
        cross_cov: stats::covariance(&proj, &signal),
        sample_var: m.variance,
    })
}

/// One line of diagnostic output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub metric: String,
    pub value: f64,
    #[serde(rename = "N")]
    pub samples: usize,
    pub d: usize,
    pub ell: usize,
}

impl DiagnosticRow {
    pub fn new(metric: &str, value: f64, samples: usize, cfg: &ValidConfig) -> Self {
        Self {
            metric: metric.into(),
            value,
            samples,
            d: cfg.d,
            ell: cfg.ell,
        }
    }
}

/// Aligned text table of diagnostic rows.
pub fn render_table(rows: &[DiagnosticRow]) -> String {
    let width = rows.iter().map(|r| r.metric.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>14}  {:>8}  {:>5}  {:>5}",
        "metric", "value", "N", "d", "ell"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>14.6e}  {:>8}  {:>5}  {:>5}",
            r.metric, r.value, r.samples, r.d, r.ell
        );
    }
    out
}

/// CSV with columns `metric,value,N,d,ell`.
pub fn diagnostics_csv(rows: &[DiagnosticRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "value", "N", "d", "ell"])
        .map_err(|e| LabError::Invalid(e.to_string()))?;
    for r in rows {
        w.write_record([
            r.metric.clone(),
            format!("{:?}", r.value),
            r.samples.to_string(),
            r.d.to_string(),
            r.ell.to_string(),
        ])
        .map_err(|e| LabError::Invalid(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| LabError::Invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
