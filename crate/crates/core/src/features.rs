//! The reparameterized linear-attention feature `vec(H_Z)` and the fixed
//! random first layer `F` of the MLP head.
//!
//! `H_Z = x_q uᵀ` with `u = [(d/ℓ) Σ yᵢ xᵢ ; (1/ℓ) Σ yᵢ²] ∈ ℝ^{d+1}`, a rank-one
//! `d × (d+1)` matrix. It is vectorized column-major, so entry `(a, b)` lands
//! at `b·d + a` and `vec(H_Z) = u ⊗ x_q`.

use alloc::vec;
use alloc::vec::Vec;

use crate::checksum::checksum_f64;
use crate::config::{TraceMode, ValidConfig};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::task::{check_len, dot, sample_task, Prompt, PromptShape};

/// Identifies the vectorization order of `H_Z` (and of `Γ`).
pub const LAYOUT_TAG: &str = "col-major:d x (d+1)";

/// Smallest trace estimate accepted by [`calibrate_trace`].
pub const MIN_TRACE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub const LAYOUT: &'static str = LAYOUT_TAG;

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// The right factor `u` of `H_Z = x_q uᵀ`.
pub fn label_statistic(prompt: &Prompt) -> Vec<f64> {
    let (d, ell) = (prompt.d(), prompt.ell());
    let mut u = vec![0.0; d + 1];
    let mut sq = 0.0;
    for (i, &y) in prompt.context_y().iter().enumerate() {
        for (acc, &x) in u[..d].iter_mut().zip(prompt.context_input(i)) {
            *acc += y * x;
        }
        sq += y * y;
    }
    let s = d as f64 / ell as f64;
    for v in &mut u[..d] {
        *v *= s;
    }
    u[d] = sq / ell as f64;
    u
}

/// Writes `vec(H_Z)` into `out` (length d(d+1)).
pub fn build_h_into(prompt: &Prompt, out: &mut [f64]) {
    let d = prompt.d();
    let u = label_statistic(prompt);
    let xq = prompt.query_x();
    for (col, &ub) in out.chunks_exact_mut(d).zip(&u) {
        for (o, &xa) in col.iter_mut().zip(xq) {
            *o = xa * ub;
        }
    }
}

pub fn build_h(prompt: &Prompt, d: usize, ell: usize) -> Result<FeatureVector> {
    check_len("prompt dimension d", d, prompt.d())?;
    check_len("prompt context length", ell, prompt.ell())?;
    let mut values = vec![0.0; d * (d + 1)];
    build_h_into(prompt, &mut values);
    Ok(FeatureVector { values })
}

/// `‖vec(H_Z)‖²`, computed as `‖x_q‖²·‖u‖²` without materializing `H_Z`.
pub fn h_norm_sq(prompt: &Prompt) -> f64 {
    let u = label_statistic(prompt);
    dot(prompt.query_x(), prompt.query_x()) * dot(&u, &u)
}

/// Fresh-prompt draws shared by calibration and the diagnostics: prompt `j`
/// uses task sub-stream `(0, j)` and prompt sub-stream `(1, j)` of `stream`.
/// Under [`TraceMode::Conditional`] every prompt reuses task `(0, 0)`.
pub fn fresh_prompt(stream: &RngStream, cfg: &ValidConfig, j: u64, mode: TraceMode) -> Prompt {
    let task_index = match mode {
        TraceMode::Marginal => j,
        TraceMode::Conditional => 0,
    };
    let task = sample_task(&mut stream.substream(0, task_index), cfg.d);
    PromptShape::of(cfg).sample(&mut stream.substream(1, j), &task, true)
}

/// Monte Carlo estimate of `t = tr Cov(vec H_Z) = E‖vec H_Z‖²` over
/// `cfg.n_cal` fresh prompts.
pub fn calibrate_trace(stream: &RngStream, cfg: &ValidConfig) -> Result<f64> {
    trace_estimate(stream, cfg, cfg.n_cal)
}

/// [`calibrate_trace`] with an explicit sample count.
pub fn trace_estimate(stream: &RngStream, cfg: &ValidConfig, samples: usize) -> Result<f64> {
    if samples < 100 {
        return Err(Error::TooFewSamples {
            what: "trace calibration",
            required: 100,
            got: samples,
        });
    }
    let total: f64 = (0..samples as u64)
        .map(|j| h_norm_sq(&fresh_prompt(stream, cfg, j, cfg.trace_mode)))
        .sum();
    let t = total / samples as f64;
    if t.is_finite() && t > MIN_TRACE {
        Ok(t)
    } else {
        Err(Error::DegenerateTrace { t })
    }
}

/// The fixed first layer `F ∈ ℝ^{p×m}`, stored column-major so that column
/// `i` (the weights of hidden unit `i`) is contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomFeatureMatrix {
    p: usize,
    m: usize,
    entries: Vec<f64>,
    trace_constant: f64,
    checksum: u64,
}

impl RandomFeatureMatrix {
    pub fn from_parts(p: usize, m: usize, entries: Vec<f64>, trace_constant: f64) -> Result<Self> {
        check_len("feature matrix entries", p * m, entries.len())?;
        if !(trace_constant > 0.0 && trace_constant.is_finite()) {
            return Err(Error::InvalidArgument {
                what: "trace_constant",
                reason: "must be positive and finite",
            });
        }
        let checksum = checksum_f64(&entries);
        Ok(Self {
            p,
            m,
            entries,
            trace_constant,
            checksum,
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn trace_constant(&self) -> f64 {
        self.trace_constant
    }

    /// FNV-1a digest of the entries, fixed at construction.
    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    /// Column-major entries.
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn column(&self, i: usize) -> &[f64] {
        &self.entries[i * self.p..(i + 1) * self.p]
    }
}

/// Draws p·m iid `N(0, 1/t)` entries, column by column.
pub fn sample_feature_matrix(
    stream: &mut RngStream,
    p: usize,
    m: usize,
    t: f64,
) -> Result<RandomFeatureMatrix> {
    if p == 0 || m == 0 {
        return Err(Error::InvalidArgument {
            what: "feature matrix shape",
            reason: "p and m must be at least 1",
        });
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument {
            what: "trace_constant",
            reason: "must be positive and finite",
        });
    }
    let mut entries = vec![0.0; p * m];
    stream.fill_normal(&mut entries, 1.0 / libm::sqrt(t));
    RandomFeatureMatrix::from_parts(p, m, entries, t)
}

/// `Fᵀ phi`, accumulated in index order.
pub fn hidden_preactivations(f: &RandomFeatureMatrix, phi: &FeatureVector) -> Result<Vec<f64>> {
    check_len("feature vector", f.p, phi.len())?;
    Ok((0..f.m).map(|i| dot(f.column(i), &phi.values)).collect())
}

/// Row-wise [`hidden_preactivations`] for a block of feature vectors; row `j`
/// of the row-major `rows × m` result is bit-identical to the single call.
pub fn hidden_preactivations_batch(f: &RandomFeatureMatrix, phis: &[FeatureVector]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(phis.len() * f.m);
    for phi in phis {
        out.extend(hidden_preactivations(f, phi)?);
    }
    Ok(out)
}
