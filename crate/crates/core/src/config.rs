//! Experiment configuration and its validation.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::activation::Activation;

pub const DEFAULT_DEGREE_R: usize = 4;
pub const DEFAULT_N_TEST: usize = 2000;
pub const DEFAULT_N_CAL: usize = 2000;
pub const DEFAULT_N_RUNS: usize = 20;

/// Which covariance normalizes the random feature matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    /// Average over fresh task vectors (the feature matrix is task-agnostic).
    #[default]
    Marginal,
    /// Condition on a single task vector drawn from the calibration stream.
    Conditional,
}

/// Raw experiment configuration, as read from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub d: usize,
    pub ell: usize,
    pub k: usize,
    pub n: usize,
    pub m: usize,
    pub rho: f64,
    pub lambda: f64,
    pub target_name: String,
    pub activation_name: String,
    #[serde(default = "default_degree_r")]
    pub degree_r: usize,
    pub master_seed: u64,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_n_cal")]
    pub n_cal: usize,
    #[serde(default = "default_n_runs")]
    pub n_runs: usize,
    /// Whether the query label of training prompts carries label noise.
    #[serde(default = "default_true")]
    pub train_query_noise: bool,
    #[serde(default)]
    pub trace_mode: TraceMode,
    /// Reuse one residual draw per hidden unit across all test prompts instead
    /// of drawing fresh residual noise per (prompt, unit).
    #[serde(default)]
    pub freeze_surrogate_noise: bool,
}

fn default_degree_r() -> usize {
    DEFAULT_DEGREE_R
}
fn default_n_test() -> usize {
    DEFAULT_N_TEST
}
fn default_n_cal() -> usize {
    DEFAULT_N_CAL
}
fn default_n_runs() -> usize {
    DEFAULT_N_RUNS
}
fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    /// Configuration with the given sizes and every optional field at its
    /// default.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        d: usize,
        ell: usize,
        k: usize,
        n: usize,
        m: usize,
        rho: f64,
        lambda: f64,
        target_name: &str,
        activation_name: &str,
        master_seed: u64,
    ) -> Self {
        Self {
            d,
            ell,
            k,
            n,
            m,
            rho,
            lambda,
            target_name: target_name.into(),
            activation_name: activation_name.into(),
            degree_r: DEFAULT_DEGREE_R,
            master_seed,
            n_test: DEFAULT_N_TEST,
            n_cal: DEFAULT_N_CAL,
            n_runs: DEFAULT_N_RUNS,
            train_query_noise: true,
            trace_mode: TraceMode::Marginal,
            freeze_surrogate_noise: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldViolation {
    pub field: &'static str,
    pub message: String,
}

/// Every invariant the configuration violates.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub violations: Vec<FieldViolation>,
}

impl ConfigError {
    pub fn fields(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.violations.iter().map(|v| v.field)
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("invalid configuration")?;
        for (i, v) in self.violations.iter().enumerate() {
            let sep = if i == 0 { ": " } else { "; " };
            write!(f, "{sep}{}: {}", v.field, v.message)?;
        }
        Ok(())
    }
}

impl core::error::Error for ConfigError {}

/// λ scaled by n/d, the penalty actually applied in both ridge objectives.
pub fn effective_lambda(lambda: f64, n: usize, d: usize) -> f64 {
    lambda * n as f64 / d as f64
}

/// A configuration whose invariants have been checked, with resolved
/// functions and derived sizes attached.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidConfig {
    cfg: ExperimentConfig,
    target: Activation,
    activation: Activation,
    p: usize,
    lambda_eff: f64,
}

impl ValidConfig {
    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn into_inner(self) -> ExperimentConfig {
        self.cfg
    }

    pub fn target(&self) -> Activation {
        self.target
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Feature dimension d(d+1).
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn lambda_eff(&self) -> f64 {
        self.lambda_eff
    }

    /// Replaces the target function, e.g. with a user-registered one.
    pub fn with_target(mut self, target: Activation) -> Self {
        self.target = target;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }
}

impl Deref for ValidConfig {
    type Target = ExperimentConfig;

    fn deref(&self) -> &ExperimentConfig {
        &self.cfg
    }
}

pub fn validate_config(cfg: ExperimentConfig) -> Result<ValidConfig, ConfigError> {
    let mut violations = Vec::new();
    let mut bad = |field: &'static str, message: String| violations.push(FieldViolation { field, message });

    for (field, value) in [
        ("d", cfg.d),
        ("ell", cfg.ell),
        ("k", cfg.k),
        ("n", cfg.n),
        ("m", cfg.m),
        ("n_test", cfg.n_test),
        ("n_cal", cfg.n_cal),
        ("n_runs", cfg.n_runs),
    ] {
        if value == 0 {
            bad(field, "must be at least 1".into());
        }
    }
    if cfg.k > cfg.n {
        bad(
            "k",
            alloc::format!("must not exceed n = {} (got {})", cfg.n, cfg.k),
        );
    }
    if !(cfg.rho.is_finite() && cfg.rho >= 0.0) {
        bad(
            "rho",
            alloc::format!("must be finite and non-negative (got {})", cfg.rho),
        );
    }
    if !(cfg.lambda.is_finite() && cfg.lambda >= 0.0) {
        bad(
            "lambda",
            alloc::format!("must be finite and non-negative (got {})", cfg.lambda),
        );
    }
    let target = Activation::from_name(&cfg.target_name);
    if target.is_err() {
        bad(
            "target_name",
            alloc::format!("unknown function `{}`", cfg.target_name),
        );
    }
    let activation = Activation::from_name(&cfg.activation_name);
    if activation.is_err() {
        bad(
            "activation_name",
            alloc::format!("unknown function `{}`", cfg.activation_name),
        );
    }

    match (target, activation) {
        (Ok(target), Ok(activation)) if violations.is_empty() => {
            let p = cfg.d * (cfg.d + 1);
            let lambda_eff = effective_lambda(cfg.lambda, cfg.n, cfg.d);
            Ok(ValidConfig {
                cfg,
                target,
                activation,
                p,
                lambda_eff,
            })
        }
        _ => Err(ConfigError { violations }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn fig1() -> ExperimentConfig {
        ExperimentConfig::new(80, 80, 40, 9600, 6400, 0.01, 1e-8, "relu", "relu", 1)
    }

    #[test]
    fn full_scale_config_is_valid() {
        let v = validate_config(fig1()).unwrap();
        assert_eq!(v.p(), 6480);
        assert!((v.lambda_eff() - 1.2e-6).abs() < 1e-18);
        assert_eq!(v.config(), &fig1());
        assert_eq!(v.degree_r, 4);
        assert_eq!(v.n_runs, 20);
    }

    #[test]
    fn zero_d_names_field() {
        let mut c = fig1();
        c.d = 0;
        let err = validate_config(c).unwrap_err();
        assert_eq!(err.fields().collect::<Vec<_>>(), vec!["d"]);
    }

    #[test]
    fn negative_lambda_names_field() {
        let mut c = fig1();
        c.lambda = -1.0;
        let err = validate_config(c).unwrap_err();
        assert_eq!(err.fields().collect::<Vec<_>>(), vec!["lambda"]);
    }

    #[test]
    fn reports_every_violation() {
        let mut c = fig1();
        c.n = 0;
        c.rho = f64::NAN;
        c.activation_name = "softplus".into();
        let err = validate_config(c).unwrap_err();
        let fields: Vec<_> = err.fields().collect();
        assert_eq!(fields, vec!["n", "k", "rho", "activation_name"]);
        let msg = alloc::format!("{err}");
        assert!(msg.contains("softplus"));
    }

    #[test]
    fn effective_lambda_examples() {
        assert!((effective_lambda(1e-8, 9600, 80) - 1.2e-6).abs() < 1e-20);
        assert_eq!(effective_lambda(0.0, 123, 7), 0.0);
        assert!((effective_lambda(1e-2, 2400, 40) - 0.6).abs() < 1e-15);
    }
}
