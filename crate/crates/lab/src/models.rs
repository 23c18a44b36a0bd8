//! The three predictors compared in a run: the linear-attention readout `Γ`,
//! the random-feature MLP head `wᵀσ(Fᵀ vec H)` and its Hermite surrogate
//! `wᵀσ̂_r(Fᵀ vec H)`.

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use icl_core::activation::Activation;
use icl_core::config::ValidConfig;
use icl_core::features::{build_h_into, hidden_preactivations, FeatureVector, RandomFeatureMatrix};
use icl_core::hermite::{surrogate_apply, HermiteExpansion};
use icl_core::rng::RngStream;
use icl_core::task::{Prompt, TrainingSet};

use crate::error::{LabError, Result};
use crate::linalg;
use crate::ridge::{solve_ridge, RidgeProblem, RidgeSolution, SolverPath};

/// Sub-stream lane of the surrogate noise stream used for training designs.
pub const TRAIN_NOISE_LANE: u64 = 0;
/// Lane used for per-prompt noise at prediction time.
pub const TEST_NOISE_LANE: u64 = 1;
/// Lane of the single shared draw when the test-time noise is frozen.
pub const FROZEN_NOISE_LANE: u64 = 2;

/// `vec(H_Z)` of a set of prompts, stored as the columns of a `p × rows`
/// column-major matrix so each prompt's features are contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBlock {
    p: usize,
    rows: usize,
    data: Vec<f64>,
}

impl FeatureBlock {
    pub fn from_prompts(prompts: &[Prompt]) -> Result<Self> {
        let d = prompts.first().map_or(0, Prompt::d);
        let p = d * (d + 1);
        let mut data = vec![0.0; p * prompts.len()];
        for (prompt, col) in prompts.iter().zip(data.chunks_exact_mut(p.max(1))) {
            if prompt.d() != d {
                return Err(LabError::Invalid(format!(
                    "prompts of mixed dimension ({} and {d})",
                    prompt.d()
                )));
            }
            build_h_into(prompt, col);
        }
        Ok(Self {
            p,
            rows: prompts.len(),
            data,
        })
    }

    pub fn from_features(p: usize, features: &[FeatureVector]) -> Result<Self> {
        let mut data = Vec::with_capacity(p * features.len());
        for phi in features {
            if phi.len() != p {
                return Err(icl_core::Error::DimensionMismatch {
                    what: "feature vector",
                    expected: p,
                    found: phi.len(),
                }
                .into());
            }
            data.extend_from_slice(&phi.values);
        }
        Ok(Self {
            p,
            rows: features.len(),
            data,
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.p..(j + 1) * self.p]
    }

    /// The `rows × p` design view.
    pub fn design(&self) -> MatRef<'_, f64> {
        MatRef::from_column_major_slice(&self.data, self.p, self.rows).transpose()
    }

    /// `rows × m` matrix of hidden pre-activations `vec(H)ᵀ F`.
    pub fn project(&self, f: &RandomFeatureMatrix) -> Result<Mat<f64>> {
        if f.p() != self.p {
            return Err(icl_core::Error::DimensionMismatch {
                what: "feature matrix rows",
                expected: self.p,
                found: f.p(),
            }
            .into());
        }
        let fm = MatRef::from_column_major_slice(f.entries(), f.p(), f.m());
        Ok(linalg::product(self.design(), fm))
    }
}

/// Elementwise `σ` of a pre-activation matrix.
pub fn activate(preact: MatRef<'_, f64>, activation: Activation) -> Mat<f64> {
    Mat::from_fn(preact.nrows(), preact.ncols(), |j, i| {
        activation.apply(preact[(j, i)])
    })
}

/// Elementwise `σ̂_r`; row `j` takes its `m` residual draws, in unit order,
/// from `noise.substream(lane, j)`.
pub fn surrogate_activate(
    preact: MatRef<'_, f64>,
    expansion: &HermiteExpansion,
    noise: &RngStream,
    lane: u64,
) -> Mat<f64> {
    let (rows, m) = (preact.nrows(), preact.ncols());
    let mut out = Mat::<f64>::zeros(rows, m);
    let mut z = vec![0.0; m];
    for j in 0..rows {
        noise.substream(lane, j as u64).fill_normal(&mut z, 1.0);
        for (i, &zi) in z.iter().enumerate() {
            out[(j, i)] = surrogate_apply(expansion, preact[(j, i)], zi);
        }
    }
    out
}

/// Solver metadata kept with every fitted model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub solver_path: SolverPath,
    pub residual_norm: f64,
    pub jittered: bool,
    pub certificate: f64,
}

impl FitReport {
    fn of(sol: &RidgeSolution) -> Self {
        Self {
            solver_path: sol.solver_path,
            residual_norm: sol.residual_norm,
            jittered: sol.jittered,
            certificate: sol.certificate,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    /// `vec(Γ)`, column-major over the `d × (d+1)` layout of `H_Z`.
    pub gamma_vec: Vec<f64>,
    pub report: FitReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    pub w: Vec<f64>,
    pub activation: Activation,
    pub f_checksum: u64,
    pub report: FitReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateModel {
    pub w: Vec<f64>,
    pub expansion: HermiteExpansion,
    /// The σ the expansion was fitted to.
    pub activation: Activation,
    pub f_checksum: u64,
    pub report: FitReport,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainedModel {
    Linear(LinearModel),
    Mlp(MlpModel),
    Surrogate(SurrogateModel),
}

impl TrainedModel {
    pub fn report(&self) -> &FitReport {
        match self {
            TrainedModel::Linear(m) => &m.report,
            TrainedModel::Mlp(m) => &m.report,
            TrainedModel::Surrogate(m) => &m.report,
        }
    }

    /// Checksum of the feature matrix the model was trained with, if any.
    pub fn f_checksum(&self) -> Option<u64> {
        match self {
            TrainedModel::Linear(_) => None,
            TrainedModel::Mlp(m) => Some(m.f_checksum),
            TrainedModel::Surrogate(m) => Some(m.f_checksum),
        }
    }

    /// `linear`, `mlp_<σ>` or `surrogate_<σ>`.
    pub fn label(&self) -> String {
        match self {
            TrainedModel::Linear(_) => "linear".into(),
            TrainedModel::Mlp(m) => format!("mlp_{}", m.activation),
            TrainedModel::Surrogate(m) => format!("surrogate_{}", m.activation),
        }
    }
}

fn check_rows(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(icl_core::Error::DimensionMismatch {
            what,
            expected,
            found,
        }
        .into())
    }
}

fn check_f(expected: u64, f: &RandomFeatureMatrix) -> Result<()> {
    if f.checksum() == expected {
        Ok(())
    } else {
        Err(LabError::FeatureMismatch {
            expected,
            found: f.checksum(),
        })
    }
}

fn check_training_set(train: &TrainingSet, cfg: &ValidConfig) -> Result<()> {
    check_rows("training set size", cfg.n, train.len())?;
    if let Some(p) = train.prompts.first() {
        check_rows("prompt dimension d", cfg.d, p.d())?;
        check_rows("prompt context length", cfg.ell, p.ell())?;
    }
    Ok(())
}

pub fn fit_linear(train: &TrainingSet, cfg: &ValidConfig) -> Result<LinearModel> {
    check_training_set(train, cfg)?;
    let block = FeatureBlock::from_prompts(&train.prompts)?;
    fit_linear_block(&block, &train.targets(), cfg.lambda_eff())
}

/// [`fit_linear`] on a prebuilt feature block.
pub fn fit_linear_block(block: &FeatureBlock, targets: &[f64], lambda_eff: f64) -> Result<LinearModel> {
    let sol = solve_ridge(&RidgeProblem::new(block.design(), targets, lambda_eff)?)?;
    Ok(LinearModel {
        report: FitReport::of(&sol),
        gamma_vec: sol.weights,
    })
}

pub fn predict_linear(model: &LinearModel, phi: &FeatureVector) -> Result<f64> {
    check_rows("feature vector", model.gamma_vec.len(), phi.len())?;
    Ok(dot(&model.gamma_vec, &phi.values))
}

pub fn fit_mlp(train: &TrainingSet, f: &RandomFeatureMatrix, cfg: &ValidConfig) -> Result<MlpModel> {
    check_training_set(train, cfg)?;
    let preact = FeatureBlock::from_prompts(&train.prompts)?.project(f)?;
    fit_mlp_preact(
        preact.as_ref(),
        f,
        cfg.activation(),
        &train.targets(),
        cfg.lambda_eff(),
    )
}

/// [`fit_mlp`] from precomputed training pre-activations `vec(H)ᵀF`.
pub fn fit_mlp_preact(
    preact: MatRef<'_, f64>,
    f: &RandomFeatureMatrix,
    activation: Activation,
    targets: &[f64],
    lambda_eff: f64,
) -> Result<MlpModel> {
    check_rows("pre-activation columns", f.m(), preact.ncols())?;
    let design = activate(preact, activation);
    let sol = solve_ridge(&RidgeProblem::new(design.as_ref(), targets, lambda_eff)?)?;
    Ok(MlpModel {
        report: FitReport::of(&sol),
        w: sol.weights,
        activation,
        f_checksum: f.checksum(),
    })
}

pub fn predict_mlp(model: &MlpModel, f: &RandomFeatureMatrix, phi: &FeatureVector) -> Result<f64> {
    check_f(model.f_checksum, f)?;
    let a = hidden_preactivations(f, phi)?;
    Ok(model
        .w
        .iter()
        .zip(&a)
        .map(|(w, &x)| w * model.activation.apply(x))
        .sum())
}

/// Predictions for every row of a pre-activation matrix; row `j` is
/// `Σ_i w_i σ(a_ji)` summed in unit order.
pub fn predict_mlp_preact(model: &MlpModel, preact: MatRef<'_, f64>) -> Result<Vec<f64>> {
    check_rows("pre-activation columns", model.w.len(), preact.ncols())?;
    Ok((0..preact.nrows())
        .map(|j| {
            model
                .w
                .iter()
                .enumerate()
                .map(|(i, w)| w * model.activation.apply(preact[(j, i)]))
                .sum()
        })
        .collect())
}

pub fn fit_surrogate(
    train: &TrainingSet,
    f: &RandomFeatureMatrix,
    expansion: &HermiteExpansion,
    cfg: &ValidConfig,
    noise: &RngStream,
) -> Result<SurrogateModel> {
    check_training_set(train, cfg)?;
    let preact = FeatureBlock::from_prompts(&train.prompts)?.project(f)?;
    fit_surrogate_preact(
        preact.as_ref(),
        f,
        expansion,
        cfg.activation(),
        &train.targets(),
        cfg.lambda_eff(),
        noise,
    )
}

/// [`fit_surrogate`] from precomputed training pre-activations. Row `j` of
/// the design draws its residual noise from `noise.substream(0, j)`.
pub fn fit_surrogate_preact(
    preact: MatRef<'_, f64>,
    f: &RandomFeatureMatrix,
    expansion: &HermiteExpansion,
    activation: Activation,
    targets: &[f64],
    lambda_eff: f64,
    noise: &RngStream,
) -> Result<SurrogateModel> {
    check_rows("pre-activation columns", f.m(), preact.ncols())?;
    let design = surrogate_activate(preact, expansion, noise, TRAIN_NOISE_LANE);
    let sol = solve_ridge(&RidgeProblem::new(design.as_ref(), targets, lambda_eff)?)?;
    Ok(SurrogateModel {
        report: FitReport::of(&sol),
        w: sol.weights,
        expansion: expansion.clone(),
        activation,
        f_checksum: f.checksum(),
    })
}

/// `wᵀσ̂_r(Fᵀphi)` with `m` fresh residual draws taken from `noise`.
pub fn predict_surrogate(
    model: &SurrogateModel,
    f: &RandomFeatureMatrix,
    phi: &FeatureVector,
    noise: &mut RngStream,
) -> Result<f64> {
    check_f(model.f_checksum, f)?;
    let a = hidden_preactivations(f, phi)?;
    Ok(model
        .w
        .iter()
        .zip(&a)
        .map(|(w, &x)| w * surrogate_apply(&model.expansion, x, noise.normal()))
        .sum())
}

/// Batched [`predict_surrogate`]. Row `j` draws from
/// `noise.substream(1, j)`; with `frozen` every row reuses the single draw
/// of `noise.substream(2, 0)`.
pub fn predict_surrogate_preact(
    model: &SurrogateModel,
    preact: MatRef<'_, f64>,
    noise: &RngStream,
    frozen: bool,
) -> Result<Vec<f64>> {
    let m = model.w.len();
    check_rows("pre-activation columns", m, preact.ncols())?;
    let mut z = vec![0.0; m];
    if frozen {
        noise.substream(FROZEN_NOISE_LANE, 0).fill_normal(&mut z, 1.0);
    }
    Ok((0..preact.nrows())
        .map(|j| {
            if !frozen {
                noise
                    .substream(TEST_NOISE_LANE, j as u64)
                    .fill_normal(&mut z, 1.0);
            }
            model
                .w
                .iter()
                .zip(&z)
                .enumerate()
                .map(|(i, (w, &zi))| w * surrogate_apply(&model.expansion, preact[(j, i)], zi))
                .sum()
        })
        .collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
