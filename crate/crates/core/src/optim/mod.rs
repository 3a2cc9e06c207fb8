//! Numerical kernel: proximal maps, sparse-recovery solvers and a symmetric
//! eigensolver.

pub mod admm;
pub mod eigen;
pub mod lasso;
mod simplex;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use admm::{constrained_l1_solve, weighted_constrained_l1_solve, BallBlock};
pub use eigen::{hermitian_eigenvalues, psd_project, sym_eigen, SymEigen};
pub use lasso::lasso_solve;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub tol_abs: f64,
    pub tol_rel: f64,
    /// Initial ADMM penalty.
    pub rho0: f64,
    /// Fixed proximal-gradient step; `None` uses `1/L` with `L` from power
    /// iteration on `QᵀQ`.
    pub step_size: Option<f64>,
    pub power_iterations: usize,
    pub power_tol: f64,
    /// Try to finish by solving exactly on the detected support.
    pub polish: bool,
    /// For problems whose radii are all zero: if ADMM has not converged
    /// after this many iterations, solve the linear program by simplex
    /// instead. `None` keeps ADMM for the whole budget.
    pub lp_fallback_after: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50_000,
            tol_abs: 1e-8,
            tol_rel: 1e-6,
            rho0: 1.0,
            step_size: None,
            power_iterations: 20,
            power_tol: 1e-6,
            polish: true,
            lp_fallback_after: Some(300),
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::param("max_iterations must be at least 1"));
        }
        if !(self.tol_abs > 0.0 && self.tol_rel > 0.0) {
            return Err(Error::param("solver tolerances must be positive"));
        }
        if !(self.rho0 > 0.0) {
            return Err(Error::param("rho0 must be positive"));
        }
        if let Some(step) = self.step_size {
            if !(step > 0.0) {
                return Err(Error::param("step size must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub polished: bool,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// `‖A_k x − b_k‖₂` per constraint block (constrained solver) or the
    /// data residual `‖Qw − y‖₂` (LASSO).
    pub constraint_residuals: Vec<f64>,
    pub kkt_violation: f64,
    pub rho: f64,
    pub lipschitz: f64,
}

#[derive(Debug, Clone)]
pub struct SolverOutput {
    pub x: Vec<f64>,
    pub diagnostics: SolverDiagnostics,
}

/// Dense `m × d` sensing matrix with cached column norms.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOperatorMatrix {
    q: DMatrix<f64>,
    col_norms: Vec<f64>,
}

impl LinearOperatorMatrix {
    pub fn new(q: DMatrix<f64>) -> Result<Self> {
        if q.nrows() == 0 || q.ncols() == 0 {
            return Err(Error::param("sensing matrix must have at least one row and column"));
        }
        if q.iter().any(|x| !x.is_finite()) {
            return Err(Error::param("sensing matrix has non-finite entries"));
        }
        let col_norms = q.column_iter().map(|c| c.norm()).collect();
        Ok(Self { q, col_norms })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::dim("sensing matrix row", d, bad.len()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(DMatrix::from_row_slice(rows.len(), d, &flat))
    }

    pub fn nrows(&self) -> usize {
        self.q.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.q.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn col_norms(&self) -> &[f64] {
        &self.col_norms
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.q * x
    }

    pub fn apply_t(&self, y: &DVector<f64>) -> DVector<f64> {
        self.q.tr_mul(y)
    }

    /// Power-iteration estimate of the largest eigenvalue of `QᵀQ`.
    pub fn gram_max_eigenvalue(&self, iterations: usize, tol: f64) -> f64 {
        // Deterministic start with a component along every column.
        let mut v = DVector::from_iterator(
            self.ncols(),
            self.col_norms.iter().enumerate().map(|(i, c)| c + 1e-3 * (1.0 + (i % 7) as f64)),
        );
        let norm = v.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v /= norm;
        let mut estimate = 0.0;
        for _ in 0..iterations.max(1) {
            let w = self.apply_t(&self.apply(&v));
            let next = w.norm();
            if next == 0.0 {
                return 0.0;
            }
            v = w / next;
            let done = (next - estimate).abs() <= tol * next;
            estimate = next;
            if done {
                break;
            }
        }
        estimate
    }
}

/// Entrywise `sign(x_i) · max(|x_i| − λ, 0)`; ties `|x_i| = λ` map to 0.
pub fn soft_threshold(x: &[f64], lambda: f64) -> Vec<f64> {
    x.iter().map(|&xi| shrink(xi, lambda)).collect()
}

#[inline]
pub(crate) fn shrink(x: f64, lambda: f64) -> f64 {
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        0.0
    }
}

/// Solves `min ‖A_S x_S − b‖₂` over the columns `S` via the normal equations.
/// Returns `None` if the selected columns are numerically rank deficient.
pub(crate) fn least_squares_on_support(
    a: &DMatrix<f64>,
    support: &[usize],
    rhs_t: &DVector<f64>,
) -> Option<DVector<f64>> {
    let k = support.len();
    let mut gram = DMatrix::zeros(k, k);
    for (p, &i) in support.iter().enumerate() {
        for (q, &j) in support.iter().enumerate().skip(p) {
            let g = a.column(i).dot(&a.column(j));
            gram[(p, q)] = g;
            gram[(q, p)] = g;
        }
    }
    let max_diag = (0..k).map(|i| gram[(i, i)]).fold(0.0, f64::max);
    let chol = nalgebra::Cholesky::new(gram)?;
    let l = chol.l_dirty();
    let min_diag = (0..k).map(|i| l[(i, i)]).fold(f64::INFINITY, f64::min);
    if !(min_diag * min_diag > 1e-12 * max_diag) {
        return None;
    }
    Some(chol.solve(rhs_t))
}
