//! Weighted ℓ1 minimization under ℓ2-ball residual constraints, by ADMM.
//!
//! The problem
//!
//! ```text
//! minimize Σ w_i |x_i|  subject to  ‖A_k x − b_k‖₂ ≤ ε_k  for every row block k
//! ```
//!
//! is split as `x = z`, `Ax = v` with `z` carrying the ℓ1 term and `v` the
//! ball constraints. Both splittings share one penalty `ρ`, so the x-update
//! always solves with `I + AᵀA` regardless of `ρ` and residual balancing
//! never forces a refactorization.

use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::simplex::weighted_basis_pursuit;
use super::{
    least_squares_on_support, shrink, LinearOperatorMatrix, SolverDiagnostics, SolverOptions,
    SolverOutput,
};
use crate::error::{Error, Result};

const RELAXATION: f64 = 1.6;
const BALANCE_EVERY: usize = 10;
const BALANCE_RATIO: f64 = 10.0;
const POLISH_EVERY: usize = 25;
/// Relative duality gap at which a polished point is accepted as optimal.
const GAP_TOL: f64 = 1e-9;

/// Rows `rows` of the system must satisfy `‖A x − b‖₂ ≤ radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallBlock {
    pub rows: Range<usize>,
    pub radius: f64,
}

/// Solves `min ‖x‖₁ s.t. ‖Qx − y‖₂ ≤ ε`; `ε = 0` is basis pursuit.
pub fn constrained_l1_solve(
    q: &LinearOperatorMatrix,
    y: &[f64],
    eps: f64,
    opts: &SolverOptions,
) -> Result<SolverOutput> {
    let blocks = [BallBlock {
        rows: 0..q.nrows(),
        radius: eps,
    }];
    weighted_constrained_l1_solve(q, y, &blocks, None, opts)
}

enum XSolver {
    /// `m ≤ d`: Woodbury identity with `AAᵀ` and the Cholesky factor of `I + AAᵀ`.
    Woodbury {
        aat: DMatrix<f64>,
        chol: Cholesky<f64, Dyn>,
    },
    /// `m > d`: Cholesky factor of `I + AᵀA` directly.
    Direct { chol: Cholesky<f64, Dyn> },
}

struct Scaled<'a> {
    a: DMatrix<f64>,
    b: DVector<f64>,
    blocks: &'a [BallBlock],
    radii: Vec<f64>,
    weights: Vec<f64>,
    solver: XSolver,
}

impl Scaled<'_> {
    /// Minimizes `‖x − p‖² + ‖Ax − q‖²`; returns `(x, Ax)`.
    fn x_update(&self, p: &DVector<f64>, q: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        match &self.solver {
            XSolver::Woodbury { aat, chol } => {
                let ap = &self.a * p;
                let rhs = &ap + aat * q;
                let s = q - chol.solve(&rhs);
                let x = p + self.a.tr_mul(&s);
                let ax = ap + aat * &s;
                (x, ax)
            }
            XSolver::Direct { chol } => {
                let rhs = p + self.a.tr_mul(q);
                let x = chol.solve(&rhs);
                let ax = &self.a * &x;
                (x, ax)
            }
        }
    }

    fn project(&self, w: &mut DVector<f64>) {
        for (block, &radius) in self.blocks.iter().zip(&self.radii) {
            let mut seg = w.rows_mut(block.rows.start, block.rows.len());
            let b = self.b.rows(block.rows.start, block.rows.len());
            seg -= &b;
            let norm = seg.norm();
            if norm > radius {
                seg *= if norm > 0.0 { radius / norm } else { 0.0 };
            }
            seg += &b;
        }
    }

    fn block_residuals(&self, ax: &DVector<f64>) -> Vec<f64> {
        self.blocks
            .iter()
            .map(|blk| {
                (ax.rows(blk.rows.start, blk.rows.len()) - self.b.rows(blk.rows.start, blk.rows.len()))
                    .norm()
            })
            .collect()
    }

    fn objective(&self, x: &DVector<f64>) -> f64 {
        x.iter().zip(&self.weights).map(|(xi, wi)| wi * xi.abs()).sum()
    }

    /// Candidate supports for polishing: the entries of `z` above round-off,
    /// and if that is more than the row count, the largest `m` entries.
    /// Unweighted coordinates are always included.
    fn candidate_supports(&self, z: &DVector<f64>) -> Vec<Vec<usize>> {
        let m = self.a.nrows();
        let zmax = z.amax();
        let free = |i: usize| self.weights[i] == 0.0;
        let above: Vec<usize> = (0..z.len())
            .filter(|&i| free(i) || z[i].abs() > 1e-9 * zmax)
            .collect();
        if above.is_empty() {
            return Vec::new();
        }
        if above.len() <= m {
            return vec![above];
        }
        let mut support: Vec<usize> = (0..z.len()).filter(|&i| free(i)).collect();
        if support.len() >= m {
            return Vec::new();
        }
        let mut rest: Vec<usize> = (0..z.len()).filter(|&i| !free(i) && z[i] != 0.0).collect();
        rest.sort_by(|&i, &j| z[j].abs().total_cmp(&z[i].abs()).then(i.cmp(&j)));
        support.extend(rest.into_iter().take(m - support.len()));
        support.sort_unstable();
        vec![support]
    }

    /// Exact solve of `A_S x_S = b` on `support`. Only meaningful when every
    /// radius is zero.
    fn polish(&self, support: &[usize], feas_tol: f64) -> Option<(DVector<f64>, DVector<f64>)> {
        let rhs = DVector::from_iterator(
            support.len(),
            support.iter().map(|&i| self.a.column(i).dot(&self.b)),
        );
        let xs = least_squares_on_support(&self.a, support, &rhs)?;
        let mut x = DVector::zeros(self.a.ncols());
        for (k, &i) in support.iter().enumerate() {
            x[i] = xs[k];
        }
        let ax = &self.a * &x;
        (self.block_residuals(&ax).iter().all(|&r| r <= feas_tol)).then_some((x, ax))
    }

    /// Dual certificate for a point `x` with `Ax = b`: the multiplier `l` is
    /// rescaled and corrected to satisfy `A_iᵀy = w_i sign(x_i)` on the
    /// support and `A_iᵀy = 0` on unweighted coordinates. If the result is
    /// dual feasible elsewhere, `bᵀy` equals the objective of `x` and `x` is
    /// optimal.
    fn support_certificate(&self, x: &DVector<f64>, l: &DVector<f64>) -> Option<f64> {
        let eq: Vec<usize> = (0..x.len())
            .filter(|&i| x[i] != 0.0 || self.weights[i] == 0.0)
            .collect();
        if eq.is_empty() || eq.len() > self.a.nrows() {
            return None;
        }
        let ae = self.a.select_columns(&eq);
        let c = DVector::from_iterator(eq.len(), eq.iter().map(|&i| self.weights[i] * x[i].signum()));
        let g = ae.tr_mul(l);
        let gg = g.norm_squared();
        let alpha = if gg > 0.0 { g.dot(&c) / gg } else { 0.0 };
        let y0 = l * alpha;
        let chol = Cholesky::new(ae.tr_mul(&ae))?;
        let y = &y0 + &ae * chol.solve(&(c - ae.tr_mul(&y0)));
        let aty = self.a.tr_mul(&y);
        let wmax = self.weights.iter().fold(0.0f64, |a, w| a.max(*w));
        let dual_ok = (0..x.len()).all(|i| aty[i].abs() <= self.weights[i] + GAP_TOL * wmax);
        dual_ok.then(|| y.dot(&self.b))
    }

    /// Weak-duality lower bound on the optimal objective from the ADMM
    /// multiplier of the `Ax = v` split, rescaled to be dual feasible.
    /// `None` when some weight is zero (the rescaling cannot enforce
    /// `(Aᵀν)_i = 0`).
    fn dual_lower_bound(&self, l: &DVector<f64>) -> Option<f64> {
        if self.weights.contains(&0.0) {
            return None;
        }
        let g = self.a.tr_mul(l);
        let scale = g
            .iter()
            .zip(&self.weights)
            .fold(0.0, |acc: f64, (gi, wi)| acc.max(gi.abs() / wi));
        if !(scale > 0.0) {
            return None;
        }
        let value = |sign: f64| -> f64 {
            self.blocks
                .iter()
                .zip(&self.radii)
                .map(|(blk, radius)| {
                    let nu = l.rows(blk.rows.start, blk.rows.len()) * (sign / scale);
                    nu.dot(&self.b.rows(blk.rows.start, blk.rows.len())) - radius * nu.norm()
                })
                .sum()
        };
        Some(value(1.0).max(value(-1.0)))
    }
}

/// General form: `min Σ w_i |x_i|` subject to one ℓ2 ball per row block.
///
/// `weights = None` means unit weights. Zero weights leave a coordinate
/// unpenalized. Blocks must tile the rows `0..m` in order.
pub fn weighted_constrained_l1_solve(
    a: &LinearOperatorMatrix,
    b: &[f64],
    blocks: &[BallBlock],
    weights: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<SolverOutput> {
    opts.validate()?;
    let (m, d) = (a.nrows(), a.ncols());
    if b.len() != m {
        return Err(Error::dim("constrained l1 data", m, b.len()));
    }
    let mut next = 0;
    for blk in blocks {
        if blk.rows.start != next || blk.rows.end <= blk.rows.start {
            return Err(Error::param("constraint blocks must tile the rows in order"));
        }
        if !(blk.radius >= 0.0) {
            return Err(Error::param(format!("ball radius must be >= 0, got {}", blk.radius)));
        }
        next = blk.rows.end;
    }
    if next != m {
        return Err(Error::param("constraint blocks must cover every row"));
    }
    let weights = match weights {
        Some(w) if w.len() != d => return Err(Error::dim("l1 weights", d, w.len())),
        Some(w) if w.iter().any(|x| !(*x >= 0.0)) => {
            return Err(Error::param("l1 weights must be nonnegative"))
        }
        Some(w) => w.to_vec(),
        None => vec![1.0; d],
    };

    let b_vec = DVector::from_column_slice(b);
    let raw_residuals = |ax: &DVector<f64>| -> Vec<f64> {
        blocks
            .iter()
            .map(|blk| {
                (ax.rows(blk.rows.start, blk.rows.len()) - b_vec.rows(blk.rows.start, blk.rows.len()))
                    .norm()
            })
            .collect()
    };

    // Zero is feasible: nothing beats a zero objective.
    let zero_res = raw_residuals(&DVector::zeros(m));
    if zero_res.iter().zip(blocks).all(|(r, blk)| *r <= blk.radius) {
        return Ok(SolverOutput {
            x: vec![0.0; d],
            diagnostics: SolverDiagnostics {
                converged: true,
                constraint_residuals: zero_res,
                rho: opts.rho0,
                ..Default::default()
            },
        });
    }

    let all_exact = blocks.iter().all(|blk| blk.radius == 0.0);
    let budget = match opts.lp_fallback_after {
        Some(k) if all_exact => k.min(opts.max_iterations),
        _ => opts.max_iterations,
    };
    match run_admm(a, &b_vec, blocks, weights.clone(), opts, budget) {
        Err(Error::Solver { .. }) if all_exact && opts.lp_fallback_after.is_some() => {
            let sol = weighted_basis_pursuit(a.matrix(), &b_vec, &weights, opts.max_iterations)?;
            let ax = a.matrix() * &sol.x;
            let diagnostics = SolverDiagnostics {
                iterations: budget + sol.iterations,
                converged: true,
                objective: sol.x.iter().zip(&weights).map(|(x, w)| w * x.abs()).sum(),
                constraint_residuals: raw_residuals(&ax),
                rho: opts.rho0,
                ..Default::default()
            };
            Ok(SolverOutput {
                x: sol.x.as_slice().to_vec(),
                diagnostics,
            })
        }
        other => other,
    }
}

/// The ADMM iteration proper, for at most `max_iterations` steps.
fn run_admm(
    a: &LinearOperatorMatrix,
    b_vec: &DVector<f64>,
    blocks: &[BallBlock],
    weights: Vec<f64>,
    opts: &SolverOptions,
    max_iterations: usize,
) -> Result<SolverOutput> {
    let (m, d) = (a.nrows(), a.ncols());
    let sigma = a.gram_max_eigenvalue(opts.power_iterations, opts.power_tol).sqrt();
    if sigma == 0.0 {
        return Err(Error::Solver {
            reason: "constraints infeasible: sensing matrix is zero and data lies outside the balls"
                .into(),
            diagnostics: Box::default(),
            best_iterate: vec![0.0; d],
        });
    }
    let a_s = a.matrix() / sigma;
    let solver = if m <= d {
        let aat = &a_s * a_s.transpose();
        let k = &aat + DMatrix::identity(m, m);
        let chol = Cholesky::new(k).expect("I + AAᵀ is positive definite");
        XSolver::Woodbury { aat, chol }
    } else {
        let k = a_s.tr_mul(&a_s) + DMatrix::identity(d, d);
        let chol = Cholesky::new(k).expect("I + AᵀA is positive definite");
        XSolver::Direct { chol }
    };
    let p = Scaled {
        b: b_vec / sigma,
        a: a_s,
        blocks,
        radii: blocks.iter().map(|blk| blk.radius / sigma).collect(),
        weights,
        solver,
    };
    let all_exact = blocks.iter().all(|blk| blk.radius == 0.0);
    let strict = all_exact && opts.lp_fallback_after.is_some();
    let feas_tol = 1e-10 * p.b.norm().max(1.0);
    let n_all = ((d + m) as f64).sqrt();
    let block_tols: Vec<f64> = blocks
        .iter()
        .map(|blk| {
            let b_k = p.b.rows(blk.rows.start, blk.rows.len());
            (blk.rows.len() as f64).sqrt() * opts.tol_abs + opts.tol_rel * b_k.norm()
        })
        .collect();

    let mut rho = opts.rho0;
    let mut z = DVector::zeros(d);
    let mut v = DVector::zeros(m);
    p.project(&mut v);
    let mut u = DVector::zeros(d);
    let mut l = DVector::zeros(m);
    let mut diag = SolverDiagnostics::default();

    let finish = |x: DVector<f64>, ax: &DVector<f64>, mut diag: SolverDiagnostics| {
        diag.objective = p.objective(&x);
        diag.constraint_residuals = p.block_residuals(ax).iter().map(|r| r * sigma).collect();
        SolverOutput {
            x: x.as_slice().to_vec(),
            diagnostics: diag,
        }
    };

    for iter in 1..=max_iterations {
        let (x, ax) = p.x_update(&(&z - &u), &(&v - &l));
        let xh = &x * RELAXATION + &z * (1.0 - RELAXATION);
        let axh = &ax * RELAXATION + &v * (1.0 - RELAXATION);

        let z_old = z.clone();
        let v_old = v.clone();
        z = &xh + &u;
        for (zi, wi) in z.iter_mut().zip(&p.weights) {
            *zi = shrink(*zi, wi / rho);
        }
        v = &axh + &l;
        p.project(&mut v);
        u += &xh - &z;
        l += &axh - &v;

        let r_pri = ((&x - &z).norm_squared() + (&ax - &v).norm_squared()).sqrt();
        let r_dual = rho * ((&z - &z_old).norm_squared() + (&v - &v_old).norm_squared()).sqrt();
        let eps_pri = n_all * opts.tol_abs
            + opts.tol_rel
                * (x.norm_squared() + ax.norm_squared())
                    .sqrt()
                    .max((z.norm_squared() + v.norm_squared()).sqrt());
        let eps_dual = n_all * opts.tol_abs
            + opts.tol_rel * rho * (u.norm_squared() + l.norm_squared()).sqrt();

        diag.iterations = iter;
        diag.primal_residual = r_pri;
        diag.dual_residual = r_dual;
        diag.rho = rho;

        let converged = r_pri <= eps_pri && r_dual <= eps_dual;
        if opts.polish && all_exact && (converged || iter % POLISH_EVERY == 0) {
            let lower = p.dual_lower_bound(&l);
            for support in p.candidate_supports(&z) {
                let Some((xp, axp)) = p.polish(&support, feas_tol) else {
                    continue;
                };
                let obj = p.objective(&xp);
                let slack = if converged { 1e-6 } else { 1e-9 };
                let gap_ok = |lb: f64| obj - lb <= GAP_TOL * obj.max(1.0);
                let certified = lower.is_some_and(gap_ok) || p.support_certificate(&xp, &l).is_some_and(gap_ok);
                if certified || (!strict && obj <= p.objective(&z) * (1.0 + slack) + 1e-14) {
                    diag.converged = true;
                    diag.polished = true;
                    return Ok(finish(xp, &axp, diag));
                }
            }
        }
        if converged && strict {
            // Hand over to the exact LP solve rather than return a point
            // that is only optimal to the ADMM tolerance.
            let az = &p.a * &z;
            let out = finish(z, &az, diag);
            return Err(Error::Solver {
                reason: "ADMM converged without an optimality certificate".into(),
                diagnostics: Box::new(out.diagnostics),
                best_iterate: out.x,
            });
        }
        if converged {
            // The returned point is z, so insist that z itself is feasible.
            let az = &p.a * &z;
            let feasible = p
                .block_residuals(&az)
                .iter()
                .zip(&p.radii)
                .zip(&block_tols)
                .all(|((r, radius), tol)| *r <= radius + tol);
            if feasible {
                diag.converged = true;
                return Ok(finish(z, &az, diag));
            }
        }

        if iter % BALANCE_EVERY == 0 {
            if r_pri > BALANCE_RATIO * r_dual {
                rho *= 2.0;
                u /= 2.0;
                l /= 2.0;
            } else if r_dual > BALANCE_RATIO * r_pri {
                rho /= 2.0;
                u *= 2.0;
                l *= 2.0;
            }
        }
    }

    let az = &p.a * &z;
    let out = finish(z, &az, diag);
    Err(Error::Solver {
        reason: format!(
            "ADMM stopped after {} iterations (primal residual {:e}, dual residual {:e}); \
             a persistent primal residual suggests infeasible constraints",
            max_iterations, out.diagnostics.primal_residual, out.diagnostics.dual_residual
        ),
        diagnostics: Box::new(out.diagnostics),
        best_iterate: out.x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn random_matrix(m: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(m, d, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn recovers_one_sparse_exactly() {
        let a = random_matrix(6, 15, 1);
        let mut x0 = DVector::zeros(15);
        x0[7] = 0.8;
        let y = &a * &x0;
        let q = LinearOperatorMatrix::new(a).unwrap();
        let out = constrained_l1_solve(&q, y.as_slice(), 0.0, &SolverOptions::default()).unwrap();
        for (xi, ti) in out.x.iter().zip(x0.iter()) {
            assert!((xi - ti).abs() < 1e-8, "{xi} vs {ti}");
        }
    }

    #[test]
    fn large_radius_gives_zero() {
        let a = random_matrix(4, 8, 2);
        let y = vec![0.3, -0.2, 0.1, 0.5];
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let q = LinearOperatorMatrix::new(a).unwrap();
        let out = constrained_l1_solve(&q, &y, norm, &SolverOptions::default()).unwrap();
        assert!(out.x.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn objective_monotone_in_radius() {
        let a = random_matrix(10, 20, 3);
        let y: Vec<f64> = (0..10).map(|i| (i as f64 * 0.7).sin()).collect();
        let q = LinearOperatorMatrix::new(a).unwrap();
        let opts = SolverOptions::default();
        let mut last = f64::INFINITY;
        for eps in [0.0, 0.1, 0.3, 0.6, 1.0] {
            let out = constrained_l1_solve(&q, &y, eps, &opts).unwrap();
            let obj: f64 = out.x.iter().map(|v| v.abs()).sum();
            assert!(obj <= last + 1e-6, "objective rose at eps = {eps}");
            let tol = 10.0 * (1e-8 * 10f64.sqrt() + 1e-6 * norm(&y));
            assert!(out.diagnostics.constraint_residuals[0] <= eps + tol);
            last = obj;
        }
    }

    #[test]
    fn overdetermined_system_uses_direct_factorization() {
        let a = random_matrix(12, 4, 4);
        let x0 = DVector::from_column_slice(&[0.0, 1.5, 0.0, -0.5]);
        let y = &a * &x0;
        let q = LinearOperatorMatrix::new(a).unwrap();
        let out = constrained_l1_solve(&q, y.as_slice(), 0.0, &SolverOptions::default()).unwrap();
        for (xi, ti) in out.x.iter().zip(x0.iter()) {
            assert!((xi - ti).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_weight_coordinates_are_free() {
        // min |x1| s.t. x0 + x1 = 2, x0 unpenalized: x = (2, 0).
        let q = LinearOperatorMatrix::new(DMatrix::from_row_slice(1, 2, &[1.0, 1.0])).unwrap();
        let blocks = [BallBlock { rows: 0..1, radius: 0.0 }];
        let out = weighted_constrained_l1_solve(
            &q,
            &[2.0],
            &blocks,
            Some(&[0.0, 1.0]),
            &SolverOptions::default(),
        )
        .unwrap();
        assert!((out.x[0] - 2.0).abs() < 1e-8 && out.x[1].abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_blocks() {
        let q = LinearOperatorMatrix::new(DMatrix::identity(2, 2)).unwrap();
        let blocks = [BallBlock { rows: 0..1, radius: 0.0 }];
        assert!(weighted_constrained_l1_solve(&q, &[1.0, 1.0], &blocks, None, &SolverOptions::default()).is_err());
    }
}
