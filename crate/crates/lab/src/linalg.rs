//! Thin wrappers over faer kernels. Everything runs with `Par::Seq`: the
//! harness parallelizes across Monte Carlo runs instead, which keeps every
//! product bit-identical regardless of the worker count.

use faer::linalg::matmul::matmul;
use faer::linalg::matmul::triangular::{self, BlockStructure};
use faer::{Accum, Mat, MatRef, Par};

/// Lower triangle of `XᵀX` (or `XXᵀ` when `rows` is true). The strict upper
/// triangle is left at zero.
pub fn gram_lower(x: MatRef<'_, f64>, rows: bool) -> Mat<f64> {
    let (lhs, rhs) = if rows {
        (x, x.transpose())
    } else {
        (x.transpose(), x)
    };
    let dim = lhs.nrows();
    let mut g = Mat::<f64>::zeros(dim, dim);
    triangular::matmul(
        g.as_mut(),
        BlockStructure::TriangularLower,
        Accum::Replace,
        lhs,
        BlockStructure::Rectangular,
        rhs,
        BlockStructure::Rectangular,
        1.0,
        Par::Seq,
    );
    g
}

pub fn product(lhs: MatRef<'_, f64>, rhs: MatRef<'_, f64>) -> Mat<f64> {
    let mut out = Mat::<f64>::zeros(lhs.nrows(), rhs.ncols());
    matmul(out.as_mut(), Accum::Replace, lhs, rhs, 1.0, Par::Seq);
    out
}

pub fn column(v: &[f64]) -> MatRef<'_, f64> {
    MatRef::from_column_major_slice(v, v.len(), 1)
}

pub fn to_vec(col: MatRef<'_, f64>) -> Vec<f64> {
    (0..col.nrows()).map(|i| col[(i, 0)]).collect()
}

/// `X v`.
pub fn mul_vec(x: MatRef<'_, f64>, v: &[f64]) -> Vec<f64> {
    to_vec(product(x, column(v)).as_ref())
}

/// `Xᵀ v`.
pub fn mul_t_vec(x: MatRef<'_, f64>, v: &[f64]) -> Vec<f64> {
    to_vec(product(x.transpose(), column(v)).as_ref())
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
