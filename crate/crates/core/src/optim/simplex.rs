//! Dense revised simplex for weighted basis pursuit,
//! `min Σ w_i |x_i| s.t. Ax = b`, with `x = x⁺ − x⁻`.
//!
//! Columns `0..d` are `+a_j`, `d..2d` are `−a_j`, and `2d..2d+m` are the
//! phase-one artificials `sign(b_i) e_i`. Artificials left basic at zero
//! after phase one (rank-deficient `A`) are pivoted out as soon as an
//! entering column touches their row.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::optim::SolverDiagnostics;

const REFACTOR_EVERY: usize = 64;
/// Degenerate pivots in a row before switching to Bland's rule.
const DEGENERATE_LIMIT: usize = 50;
const PIVOT_TOL: f64 = 1e-9;

pub(crate) struct LpSolution {
    pub x: DVector<f64>,
    pub iterations: usize,
}

struct Simplex<'a> {
    a: &'a DMatrix<f64>,
    b: &'a DVector<f64>,
    w: &'a [f64],
    sign: Vec<f64>,
    m: usize,
    d: usize,
    basis: Vec<usize>,
    /// Position in the basis of every column, if basic.
    position: Vec<Option<usize>>,
    binv: DMatrix<f64>,
    xb: DVector<f64>,
    iterations: usize,
    since_refactor: usize,
}

#[derive(Clone, Copy, PartialEq)]
enum Phase {
    One,
    Two,
}

impl<'a> Simplex<'a> {
    fn new(a: &'a DMatrix<f64>, b: &'a DVector<f64>, w: &'a [f64]) -> Self {
        let (m, d) = (a.nrows(), a.ncols());
        let sign: Vec<f64> = b.iter().map(|v| if *v < 0.0 { -1.0 } else { 1.0 }).collect();
        let basis: Vec<usize> = (0..m).map(|i| 2 * d + i).collect();
        let mut position = vec![None; 2 * d + m];
        for (i, &j) in basis.iter().enumerate() {
            position[j] = Some(i);
        }
        let binv = DMatrix::from_diagonal(&DVector::from_column_slice(&sign));
        let xb = b.abs();
        Self {
            a,
            b,
            w,
            sign,
            m,
            d,
            basis,
            position,
            binv,
            xb,
            iterations: 0,
            since_refactor: 0,
        }
    }

    fn is_artificial(&self, j: usize) -> bool {
        j >= 2 * self.d
    }

    fn cost(&self, j: usize, phase: Phase) -> f64 {
        match phase {
            Phase::One => {
                if self.is_artificial(j) {
                    1.0
                } else {
                    0.0
                }
            }
            Phase::Two => {
                if self.is_artificial(j) {
                    0.0
                } else {
                    self.w[j % self.d]
                }
            }
        }
    }

    fn column(&self, j: usize) -> DVector<f64> {
        let d = self.d;
        if j < d {
            self.a.column(j).into_owned()
        } else if j < 2 * d {
            -self.a.column(j - d)
        } else {
            let i = j - 2 * d;
            let mut e = DVector::zeros(self.m);
            e[i] = self.sign[i];
            e
        }
    }

    fn refactor(&mut self) -> Result<()> {
        let mut bm = DMatrix::zeros(self.m, self.m);
        for (i, &j) in self.basis.iter().enumerate() {
            bm.set_column(i, &self.column(j));
        }
        self.binv = bm.try_inverse().ok_or_else(|| self.failure("basis matrix became singular"))?;
        self.xb = &self.binv * self.b;
        self.since_refactor = 0;
        Ok(())
    }

    fn failure(&self, reason: &str) -> Error {
        Error::Solver {
            reason: format!("simplex: {reason} after {} pivots", self.iterations),
            diagnostics: Box::new(SolverDiagnostics {
                iterations: self.iterations,
                ..Default::default()
            }),
            best_iterate: self.x().as_slice().to_vec(),
        }
    }

    fn x(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.d);
        for (i, &j) in self.basis.iter().enumerate() {
            if j < self.d {
                x[j] += self.xb[i];
            } else if j < 2 * self.d {
                x[j - self.d] -= self.xb[i];
            }
        }
        x
    }

    /// Runs one phase to optimality.
    fn run(&mut self, phase: Phase, max_iterations: usize) -> Result<()> {
        let d = self.d;
        let wmax = self.w.iter().fold(1.0f64, |acc, v| acc.max(*v));
        let rc_tol = 1e-10 * wmax;
        let mut degenerate = 0usize;
        loop {
            if self.since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
            }
            let cb = DVector::from_iterator(self.m, self.basis.iter().map(|&j| self.cost(j, phase)));
            let y = self.binv.tr_mul(&cb);
            let r = self.a.tr_mul(&y);
            let bland = degenerate >= DEGENERATE_LIMIT;

            let mut entering: Option<(usize, f64)> = None;
            let candidates = if phase == Phase::One { 2 * d + self.m } else { 2 * d };
            for j in 0..candidates {
                if self.position[j].is_some() {
                    continue;
                }
                let rc = if j < d {
                    self.cost(j, phase) - r[j]
                } else if j < 2 * d {
                    self.cost(j, phase) + r[j - d]
                } else {
                    let i = j - 2 * d;
                    1.0 - self.sign[i] * y[i]
                };
                if rc < -rc_tol {
                    if bland {
                        entering = Some((j, rc));
                        break;
                    }
                    if entering.is_none_or(|(_, best)| rc < best) {
                        entering = Some((j, rc));
                    }
                }
            }
            let Some((q, _)) = entering else {
                return Ok(());
            };
            if self.iterations >= max_iterations {
                return Err(self.failure("iteration limit reached"));
            }

            let dq = &self.binv * self.column(q);
            let dmax = dq.amax().max(1.0);
            let mut leave: Option<(usize, f64)> = None;
            let mut forced: Option<usize> = None;
            for i in 0..self.m {
                let di = dq[i];
                if phase == Phase::Two && self.is_artificial(self.basis[i]) && di.abs() > PIVOT_TOL * dmax {
                    if forced.is_none_or(|k| di.abs() > dq[k].abs()) {
                        forced = Some(i);
                    }
                    continue;
                }
                if di > PIVOT_TOL * dmax {
                    let ratio = self.xb[i].max(0.0) / di;
                    let better = match leave {
                        None => true,
                        Some((k, best)) => {
                            let tie = (ratio - best).abs() <= 1e-12 * best.abs().max(1.0);
                            if tie {
                                if bland {
                                    self.basis[i] < self.basis[k]
                                } else {
                                    di > dq[k]
                                }
                            } else {
                                ratio < best
                            }
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let (p, theta) = match (forced, leave) {
                (Some(i), _) => (i, 0.0),
                (None, Some((i, ratio))) => (i, ratio),
                (None, None) => return Err(self.failure("unbounded direction")),
            };
            if theta <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(p, q, &dq, theta);
        }
    }

    fn pivot(&mut self, p: usize, q: usize, dq: &DVector<f64>, theta: f64) {
        self.xb.axpy(-theta, dq, 1.0);
        self.xb[p] = theta;
        // B⁻¹ ← B⁻¹ − (dq − e_p) (row p of B⁻¹) / dq_p
        let row_p = self.binv.row(p).transpose() / dq[p];
        let mut u = dq.clone();
        u[p] -= 1.0;
        self.binv.ger(-1.0, &u, &row_p, 1.0);
        self.position[self.basis[p]] = None;
        self.position[q] = Some(p);
        self.basis[p] = q;
        self.iterations += 1;
        self.since_refactor += 1;
    }
}

/// Solves `min Σ w_i |x_i| s.t. Ax = b` exactly (up to round-off).
///
/// Weights must be nonnegative. Errors on infeasible systems and when the
/// pivot budget runs out.
pub(crate) fn weighted_basis_pursuit(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    w: &[f64],
    max_iterations: usize,
) -> Result<LpSolution> {
    let mut lp = Simplex::new(a, b, w);
    lp.run(Phase::One, max_iterations)?;
    lp.refactor()?;
    let infeasibility: f64 = lp
        .basis
        .iter()
        .zip(lp.xb.iter())
        .filter(|(j, _)| lp.is_artificial(**j))
        .map(|(_, v)| v.abs())
        .sum();
    let scale = b.amax().max(1.0);
    if infeasibility > 1e-9 * scale * (lp.m as f64).sqrt() {
        return Err(lp.failure(&format!(
            "equality constraints are infeasible (phase-one residual {infeasibility:e})"
        )));
    }
    lp.run(Phase::Two, max_iterations)?;
    lp.refactor()?;
    Ok(LpSolution {
        x: lp.x(),
        iterations: lp.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random(m: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(m, d, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn matches_admm_objective() {
        use crate::optim::{weighted_constrained_l1_solve, BallBlock, LinearOperatorMatrix, SolverOptions};
        for seed in 0..5 {
            let a = random(12, 40, seed);
            let mut x0 = DVector::zeros(40);
            x0[3] = 1.5;
            x0[17] = -0.7;
            let b = &a * &x0;
            let sol = weighted_basis_pursuit(&a, &b, &[1.0; 40], 10_000).unwrap();
            assert!((&a * &sol.x - &b).amax() < 1e-12);
            let opts = SolverOptions {
                lp_fallback_after: None,
                ..Default::default()
            };
            let q = LinearOperatorMatrix::new(a).unwrap();
            let blocks = [BallBlock { rows: 0..12, radius: 0.0 }];
            let admm = weighted_constrained_l1_solve(&q, b.as_slice(), &blocks, None, &opts).unwrap();
            let admm_obj: f64 = admm.x.iter().map(|v| v.abs()).sum();
            assert!(sol.x.abs().sum() <= admm_obj + 1e-7);
        }
    }

    #[test]
    fn two_by_one() {
        // min |x0| + |x1| s.t. x0 + 2 x1 = 2: x = (0, 1).
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let b = DVector::from_column_slice(&[2.0]);
        let sol = weighted_basis_pursuit(&a, &b, &[1.0, 1.0], 100).unwrap();
        assert!((sol.x[0]).abs() < 1e-12 && (sol.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn redundant_rows_and_infeasibility() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 2.0, 2.0, 0.0, 0.0, 1.0, 1.0]);
        let b = DVector::from_column_slice(&[1.0, 2.0, 1.0]);
        let sol = weighted_basis_pursuit(&a, &b, &[1.0; 3], 100).unwrap();
        assert!((&a * &sol.x - &b).amax() < 1e-12);
        assert!((sol.x.abs().sum() - 1.0).abs() < 1e-12);
        let bad = DVector::from_column_slice(&[1.0, 3.0, 1.0]);
        assert!(matches!(
            weighted_basis_pursuit(&a, &bad, &[1.0; 3], 100),
            Err(Error::Solver { .. })
        ));
    }

    #[test]
    fn free_coordinates() {
        // min |x1| s.t. x0 + x1 = 2 with x0 free.
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = DVector::from_column_slice(&[2.0]);
        let sol = weighted_basis_pursuit(&a, &b, &[0.0, 1.0], 100).unwrap();
        assert!((sol.x[0] - 2.0).abs() < 1e-12 && sol.x[1].abs() < 1e-12);
    }
}
