//! Task vectors, prompts and training sets drawn from the regression model
//! `x ~ N(0, I/d)`, `y = σ*(ξᵀx) + ε`, `ε ~ N(0, ρ)`, `ξ ~ N(0, I)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::activation::Activation;
use crate::checksum::Fnv64;
use crate::config::ValidConfig;
use crate::error::{Error, Result};
use crate::rng::{Purpose, RngStream};

#[derive(Clone, Debug, PartialEq)]
pub struct TaskVector(Vec<f64>);

impl TaskVector {
    pub fn new(xi: Vec<f64>) -> Self {
        Self(xi)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// One prompt: ℓ labelled context pairs plus the query input and its label.
///
/// Context inputs are stored row-major (`ell × d`).
#[derive(Clone, Debug, PartialEq)]
pub struct Prompt {
    d: usize,
    ell: usize,
    context_x: Vec<f64>,
    context_y: Vec<f64>,
    query_x: Vec<f64>,
    query_y: f64,
}

impl Prompt {
    pub fn from_parts(
        d: usize,
        ell: usize,
        context_x: Vec<f64>,
        context_y: Vec<f64>,
        query_x: Vec<f64>,
        query_y: f64,
    ) -> Result<Self> {
        check_len("context_x", ell * d, context_x.len())?;
        check_len("context_y", ell, context_y.len())?;
        check_len("query_x", d, query_x.len())?;
        Ok(Self {
            d,
            ell,
            context_x,
            context_y,
            query_x,
            query_y,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn context_input(&self, i: usize) -> &[f64] {
        &self.context_x[i * self.d..(i + 1) * self.d]
    }

    pub fn context_x(&self) -> &[f64] {
        &self.context_x
    }

    pub fn context_y(&self) -> &[f64] {
        &self.context_y
    }

    pub fn query_x(&self) -> &[f64] {
        &self.query_x
    }

    pub fn query_y(&self) -> f64 {
        self.query_y
    }

    pub(crate) fn hash_into(&self, h: &mut Fnv64) {
        h.write_f64s(&self.context_x);
        h.write_f64s(&self.context_y);
        h.write_f64s(&self.query_x);
        h.write_f64s(&[self.query_y]);
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sample_task(stream: &mut RngStream, d: usize) -> TaskVector {
    let mut xi = vec![0.0; d];
    stream.fill_normal(&mut xi, 1.0);
    TaskVector(xi)
}

/// Sampling parameters shared by every prompt of one configuration.
#[derive(Clone, Copy, Debug)]
pub struct PromptShape {
    pub d: usize,
    pub ell: usize,
    pub noise_sd: f64,
    pub target: Activation,
}

impl PromptShape {
    pub fn of(cfg: &ValidConfig) -> Self {
        Self {
            d: cfg.d,
            ell: cfg.ell,
            noise_sd: libm::sqrt(cfg.rho),
            target: cfg.target(),
        }
    }

    /// Draws ℓ+1 positions in order; each position consumes d input draws
    /// followed by one noise draw. The query noise is drawn even when it is
    /// not applied, so toggling `query_noise` leaves every other value intact.
    pub fn sample(&self, stream: &mut RngStream, task: &TaskVector, query_noise: bool) -> Prompt {
        let (d, ell) = (self.d, self.ell);
        let scale = 1.0 / libm::sqrt(d as f64);
        let mut context_x = vec![0.0; ell * d];
        let mut context_y = vec![0.0; ell];
        for i in 0..ell {
            let x = &mut context_x[i * d..(i + 1) * d];
            stream.fill_normal(x, scale);
            let eps = stream.normal();
            context_y[i] = self.target.apply(dot(task.as_slice(), x)) + self.noise_sd * eps;
        }
        let mut query_x = vec![0.0; d];
        stream.fill_normal(&mut query_x, scale);
        let eps = stream.normal();
        let mut query_y = self.target.apply(dot(task.as_slice(), &query_x));
        if query_noise {
            query_y += self.noise_sd * eps;
        }
        Prompt {
            d,
            ell,
            context_x,
            context_y,
            query_x,
            query_y,
        }
    }
}

/// Draws one prompt for `task`; every label, the query's included, carries
/// independent N(0, ρ) noise.
pub fn sample_prompt(stream: &mut RngStream, task: &TaskVector, cfg: &ValidConfig) -> Result<Prompt> {
    check_len("task vector", cfg.d, task.dim())?;
    Ok(PromptShape::of(cfg).sample(stream, task, true))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    pub prompts: Vec<Prompt>,
    /// Zero-based task index of each prompt.
    pub task_of: Vec<usize>,
    pub tasks: Vec<TaskVector>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.prompts.iter().map(Prompt::query_y).collect()
    }

    pub fn checksum(&self) -> u64 {
        let mut h = Fnv64::new();
        for t in &self.tasks {
            h.write_f64s(t.as_slice());
        }
        for (p, &t) in self.prompts.iter().zip(&self.task_of) {
            h.write_u64(t as u64);
            p.hash_into(&mut h);
        }
        h.finish()
    }
}

/// Samples k tasks and n prompts, prompt j using task `j mod k`.
///
/// Tasks come from the `task` sibling of `stream`, prompts from its `prompt`
/// sibling, each through a per-index sub-stream.
pub fn build_dataset(stream: &RngStream, cfg: &ValidConfig) -> TrainingSet {
    let task_stream = stream.sibling(Purpose::Task);
    let prompt_stream = stream.sibling(Purpose::Prompt);
    let tasks: Vec<TaskVector> = (0..cfg.k)
        .map(|t| sample_task(&mut task_stream.substream(0, t as u64), cfg.d))
        .collect();
    let shape = PromptShape::of(cfg);
    let task_of: Vec<usize> = (0..cfg.n).map(|j| j % cfg.k).collect();
    let prompts = task_of
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            shape.sample(
                &mut prompt_stream.substream(0, j as u64),
                &tasks[t],
                cfg.train_query_noise,
            )
        })
        .collect();
    TrainingSet {
        prompts,
        task_of,
        tasks,
    }
}
