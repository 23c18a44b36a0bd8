//! Ridge regression `argmin_w ‖Xw − y‖² + λ_eff ‖w‖²`.
//!
//! Two algebraically equivalent routes are used: the primal normal equations
//! `(XᵀX + λI) w = Xᵀy` when the design is tall or square, and the dual form
//! `w = Xᵀ (XXᵀ + λI)⁻¹ y` when it is wide. Both solve by Cholesky; if the
//! factorization fails the diagonal is jittered once, and after that (or when
//! λ is negligible against the Gram scale) the solve goes through a
//! symmetric eigendecomposition that yields the minimum-norm solution for
//! exactly singular problems.

use std::fmt;

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef, Side};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::linalg;

pub use icl_core::config::effective_lambda;

/// λ below this multiple of the mean Gram eigenvalue goes straight to the
/// spectral route.
pub const SPECTRAL_THRESHOLD: f64 = 1e-10;

/// Diagonal jitter (relative to the mean Gram eigenvalue) tried once after a
/// failed factorization.
pub const JITTER: f64 = 1e-10;

#[derive(Clone, Copy, Debug)]
pub struct RidgeProblem<'a> {
    design: MatRef<'a, f64>,
    targets: &'a [f64],
    lambda_eff: f64,
}

impl<'a> RidgeProblem<'a> {
    pub fn new(design: MatRef<'a, f64>, targets: &'a [f64], lambda_eff: f64) -> Result<Self> {
        if targets.len() != design.nrows() {
            return Err(LabError::Invalid(format!(
                "ridge targets have length {} but the design has {} rows",
                targets.len(),
                design.nrows()
            )));
        }
        if !(lambda_eff.is_finite() && lambda_eff >= 0.0) {
            return Err(LabError::Invalid(format!(
                "lambda_eff must be finite and non-negative (got {lambda_eff})"
            )));
        }
        if targets.iter().any(|v| !v.is_finite()) {
            return Err(LabError::NonFinite("targets"));
        }
        for j in 0..design.ncols() {
            if design.col(j).iter().any(|v| !v.is_finite()) {
                return Err(LabError::NonFinite("design entries"));
            }
        }
        Ok(Self {
            design,
            targets,
            lambda_eff,
        })
    }

    pub fn design(&self) -> MatRef<'a, f64> {
        self.design
    }

    pub fn targets(&self) -> &'a [f64] {
        self.targets
    }

    pub fn lambda_eff(&self) -> f64 {
        self.lambda_eff
    }

    /// `‖Xw − y‖² + λ‖w‖²`.
    pub fn objective(&self, w: &[f64]) -> f64 {
        let fit = linalg::mul_vec(self.design, w);
        let rss: f64 = fit.iter().zip(self.targets).map(|(f, y)| (f - y) * (f - y)).sum();
        rss + self.lambda_eff * w.iter().map(|v| v * v).sum::<f64>()
    }

    /// `2Xᵀ(Xw − y) + 2λw`.
    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let resid: Vec<f64> = linalg::mul_vec(self.design, w)
            .iter()
            .zip(self.targets)
            .map(|(f, y)| f - y)
            .collect();
        linalg::mul_t_vec(self.design, &resid)
            .iter()
            .zip(w)
            .map(|(g, wi)| 2.0 * g + 2.0 * self.lambda_eff * wi)
            .collect()
    }

    /// Relative gradient norm `‖∇‖ / (2‖Xᵀy‖)`; zero at an exact minimizer.
    pub fn certificate(&self, w: &[f64]) -> f64 {
        let g = linalg::norm(&self.gradient(w));
        if g == 0.0 {
            return 0.0;
        }
        g / (2.0 * linalg::norm(&linalg::mul_t_vec(self.design, self.targets)))
    }

    pub fn certifies(&self, w: &[f64], tol: f64) -> bool {
        self.certificate(w) <= tol
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverPath {
    Primal,
    Dual,
    Spectral,
}

impl SolverPath {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverPath::Primal => "primal",
            SolverPath::Dual => "dual",
            SolverPath::Spectral => "spectral",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "primal" => Some(SolverPath::Primal),
            "dual" => Some(SolverPath::Dual),
            "spectral" => Some(SolverPath::Spectral),
            _ => None,
        }
    }
}

impl fmt::Display for SolverPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Forces a route; [`Route::Auto`] is what [`solve_ridge`] uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Route {
    Auto,
    Primal,
    Dual,
    Spectral,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RidgeSolution {
    pub weights: Vec<f64>,
    pub solver_path: SolverPath,
    /// Training RMSE `‖Xw − y‖ / √n`.
    pub residual_norm: f64,
    /// Whether the Cholesky route needed the one-off diagonal jitter.
    pub jittered: bool,
    /// Mean diagonal of the Gram matrix that was factorized.
    pub gram_scale: f64,
    /// [`RidgeProblem::certificate`] of the returned weights.
    pub certificate: f64,
}

pub fn solve_ridge(problem: &RidgeProblem<'_>) -> Result<RidgeSolution> {
    solve_ridge_via(problem, Route::Auto)
}

pub fn solve_ridge_via(problem: &RidgeProblem<'_>, route: Route) -> Result<RidgeSolution> {
    let x = problem.design;
    let (n, p) = (x.nrows(), x.ncols());
    let lambda = problem.lambda_eff;
    let dual = match route {
        Route::Primal => false,
        Route::Dual => true,
        Route::Auto | Route::Spectral => p > n,
    };

    let gram = linalg::gram_lower(x, dual);
    let dim = gram.nrows();
    let scale = if dim == 0 {
        0.0
    } else {
        (0..dim).map(|i| gram[(i, i)]).sum::<f64>() / dim as f64
    };
    let rhs: Vec<f64> = if dual {
        problem.targets.to_vec()
    } else {
        linalg::mul_t_vec(x, problem.targets)
    };

    let try_cholesky = match route {
        Route::Spectral => false,
        Route::Auto => lambda >= SPECTRAL_THRESHOLD * scale && scale > 0.0,
        Route::Primal | Route::Dual => scale > 0.0,
    };
    let mut jittered = false;
    let mut cholesky = None;
    if try_cholesky {
        cholesky = cholesky_solve(&gram, lambda, &rhs);
        if cholesky.is_none() {
            jittered = true;
            cholesky = cholesky_solve(&gram, lambda + JITTER * scale, &rhs);
        }
    }
    let (coef, path) = match cholesky {
        Some(c) => (
            c,
            if dual {
                SolverPath::Dual
            } else {
                SolverPath::Primal
            },
        ),
        None => {
            jittered = false;
            (spectral_solve(&gram, lambda, &rhs)?, SolverPath::Spectral)
        }
    };

    let weights = if dual { linalg::mul_t_vec(x, &coef) } else { coef };
    let resid: Vec<f64> = linalg::mul_vec(x, &weights)
        .iter()
        .zip(problem.targets)
        .map(|(f, y)| f - y)
        .collect();
    let residual_norm = if n == 0 {
        0.0
    } else {
        linalg::norm(&resid) / (n as f64).sqrt()
    };
    let grad: Vec<f64> = linalg::mul_t_vec(x, &resid)
        .iter()
        .zip(&weights)
        .map(|(g, w)| 2.0 * g + 2.0 * lambda * w)
        .collect();
    let g = linalg::norm(&grad);
    let certificate = if g == 0.0 {
        0.0
    } else {
        let xty = if dual {
            linalg::norm(&linalg::mul_t_vec(x, problem.targets))
        } else {
            linalg::norm(&rhs)
        };
        g / (2.0 * xty)
    };
    Ok(RidgeSolution {
        weights,
        solver_path: path,
        residual_norm,
        jittered,
        gram_scale: scale,
        certificate,
    })
}

fn cholesky_solve(gram: &Mat<f64>, shift: f64, rhs: &[f64]) -> Option<Vec<f64>> {
    let mut a = gram.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += shift;
    }
    let llt = a.llt(Side::Lower).ok()?;
    let sol = llt.solve(linalg::column(rhs));
    let sol = linalg::to_vec(sol.as_ref());
    sol.iter().all(|v| v.is_finite()).then_some(sol)
}

/// `Σ_i u_i (u_iᵀ rhs) / (s_i + λ)` over eigenpairs with `s_i` above the
/// numerical rank threshold; directions below it carry no signal and are
/// dropped, which gives the minimum-norm solution when λ = 0.
fn spectral_solve(gram: &Mat<f64>, lambda: f64, rhs: &[f64]) -> Result<Vec<f64>> {
    let dim = gram.nrows();
    if dim == 0 {
        return Ok(Vec::new());
    }
    let evd = gram
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| LabError::Solver(format!("eigendecomposition failed: {e:?}")))?;
    let u = evd.U();
    let s = evd.S();
    let s: Vec<f64> = (0..dim).map(|i| s[i]).collect();
    let s_max = s.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    let tol = s_max * dim as f64 * f64::EPSILON;
    let proj = linalg::product(u.transpose(), linalg::column(rhs));
    let scaled: Vec<f64> = (0..dim)
        .map(|i| {
            if s[i] > tol {
                proj[(i, 0)] / (s[i] + lambda)
            } else {
                0.0
            }
        })
        .collect();
    let out = linalg::to_vec(linalg::product(u, linalg::column(&scaled)).as_ref());
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(LabError::Solver(
            "spectral solve produced non-finite weights".into(),
        ))
    }
}
