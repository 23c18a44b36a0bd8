//! Allocation-only numerical core for in-context regression experiments with
//! linear attention and random-feature MLP heads.
//!
//! Everything here is pure: sampling draws from explicitly derived
//! [`rng::RngStream`]s, and no function touches the filesystem or spawns
//! threads. The std companion crate (`icl-lab`) layers dense linear algebra,
//! orchestration and IO on top.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod activation;
pub mod checksum;
pub mod config;
pub mod error;
pub mod features;
pub mod hermite;
pub mod rng;
pub mod stats;
pub mod task;

pub use activation::{target_fn, Activation, PointwiseFn};
pub use config::{effective_lambda, validate_config, ExperimentConfig, TraceMode, ValidConfig};
pub use error::{Error, Result};
pub use features::{
    build_h, calibrate_trace, hidden_preactivations, sample_feature_matrix, FeatureVector,
    RandomFeatureMatrix,
};
pub use hermite::{
    gauss_hermite_rule, hermite_coefficients, hermite_eval, residual_coefficient, second_moment,
    surrogate_apply, HermiteExpansion, QuadratureRule,
};
pub use rng::{derive_stream, Purpose, RngStream};
pub use task::{build_dataset, sample_prompt, sample_task, Prompt, TaskVector, TrainingSet};
