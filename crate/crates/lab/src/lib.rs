//! Experiment harness for random-feature in-context regression: ridge
//! solvers, the linear / MLP / surrogate predictors, Monte Carlo
//! evaluation, sweep presets, file formats and the `icl-lab` CLI.

pub mod cli;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod models;
pub mod plot;
pub mod ridge;

pub use error::{LabError, Result};
