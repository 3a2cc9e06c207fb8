//! `min ½‖Qw − y‖₂² + λ‖w‖₁` by monotone FISTA.

use nalgebra::DVector;

use super::{
    least_squares_on_support, shrink, LinearOperatorMatrix, SolverDiagnostics, SolverOptions,
    SolverOutput,
};
use crate::error::{Error, Result};

const CHECK_EVERY: usize = 10;

struct Problem<'a> {
    q: &'a LinearOperatorMatrix,
    y: DVector<f64>,
    lambda: f64,
}

impl Problem<'_> {
    fn objective(&self, w: &DVector<f64>, qw: &DVector<f64>) -> f64 {
        0.5 * (qw - &self.y).norm_squared() + self.lambda * w.lp_norm(1)
    }

    /// Largest violation of the subgradient optimality conditions.
    fn kkt_violation(&self, w: &DVector<f64>, qw: &DVector<f64>) -> f64 {
        let grad = self.q.apply_t(&(qw - &self.y));
        w.iter()
            .zip(grad.iter())
            .map(|(&wi, &gi)| {
                if wi != 0.0 {
                    (gi + self.lambda * wi.signum()).abs()
                } else {
                    (gi.abs() - self.lambda).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }

    /// Solves the optimality equations exactly on the support of `w`,
    /// assuming the signs stay fixed.
    fn polish(&self, w: &DVector<f64>, tol: f64) -> Option<(DVector<f64>, DVector<f64>, f64)> {
        let support: Vec<usize> = (0..w.len()).filter(|&i| w[i] != 0.0).collect();
        if support.len() > self.q.nrows() {
            return None;
        }
        let mut cand = DVector::zeros(w.len());
        if !support.is_empty() {
            let qty = self.q.apply_t(&self.y);
            let rhs = DVector::from_iterator(
                support.len(),
                support.iter().map(|&i| qty[i] - self.lambda * w[i].signum()),
            );
            let ws = least_squares_on_support(self.q.matrix(), &support, &rhs)?;
            for (k, &i) in support.iter().enumerate() {
                if ws[k] * w[i].signum() <= 0.0 && self.lambda > 0.0 {
                    return None;
                }
                cand[i] = ws[k];
            }
        }
        let qc = self.q.apply(&cand);
        let kkt = self.kkt_violation(&cand, &qc);
        (kkt <= tol).then_some((cand, qc, kkt))
    }
}

/// Solves the LASSO with accelerated proximal gradient steps.
///
/// Small `λ` is reached by continuation: a geometric sequence of larger
/// regularizations is solved loosely first, each warm-starting the next.
/// Non-convergence returns [`Error::Solver`] carrying the best iterate.
pub fn lasso_solve(
    q: &LinearOperatorMatrix,
    y: &[f64],
    lambda: f64,
    opts: &SolverOptions,
) -> Result<SolverOutput> {
    opts.validate()?;
    if y.len() != q.nrows() {
        return Err(Error::dim("lasso data", q.nrows(), y.len()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::param(format!("lambda must be nonnegative, got {lambda}")));
    }
    let y = DVector::from_column_slice(y);
    let d = q.ncols();
    let qty_inf = q.apply_t(&y).amax();
    // A tolerance far above λ would accept any near-interpolating point.
    let tol = opts.tol_abs.max((opts.tol_rel * qty_inf).min(1e-2 * lambda));

    let lipschitz = match opts.step_size {
        Some(step) => 1.0 / step,
        None => q.gram_max_eigenvalue(opts.power_iterations, opts.power_tol),
    };
    let mut state = State {
        x: DVector::zeros(d),
        qx: DVector::zeros(q.nrows()),
        lipschitz,
        iterations: 0,
    };
    let target = Problem { q, y: y.clone(), lambda };
    let finish = |w: DVector<f64>, qw: &DVector<f64>, mut diag: SolverDiagnostics| {
        diag.objective = target.objective(&w, qw);
        diag.kkt_violation = target.kkt_violation(&w, qw);
        diag.constraint_residuals = vec![(qw - &target.y).norm()];
        SolverOutput {
            x: w.as_slice().to_vec(),
            diagnostics: diag,
        }
    };
    let mut diag = SolverDiagnostics {
        lipschitz,
        ..Default::default()
    };
    if lipschitz == 0.0 || target.kkt_violation(&state.x, &state.qx) <= tol {
        diag.converged = true;
        return Ok(finish(state.x, &state.qx, diag));
    }

    let mut stage_lambda = qty_inf * CONTINUATION_FACTOR;
    while stage_lambda > lambda {
        let stage = Problem { q, y: y.clone(), lambda: stage_lambda };
        let stage_tol = tol.max(0.1 * stage_lambda);
        stage.run(&mut state, stage_tol, opts.max_iterations, opts.polish);
        stage_lambda *= CONTINUATION_FACTOR;
    }
    let polished = target.run(&mut state, tol, opts.max_iterations, opts.polish);
    diag.iterations = state.iterations;
    diag.lipschitz = state.lipschitz;
    match polished {
        Some(polished) => {
            diag.converged = true;
            diag.polished = polished;
            Ok(finish(state.x, &state.qx, diag))
        }
        None => {
            let out = finish(state.x, &state.qx, diag);
            Err(Error::Solver {
                reason: format!(
                    "LASSO KKT violation {:e} above tolerance {tol:e} after {} iterations",
                    out.diagnostics.kkt_violation, out.diagnostics.iterations
                ),
                diagnostics: Box::new(out.diagnostics),
                best_iterate: out.x,
            })
        }
    }
}

const CONTINUATION_FACTOR: f64 = 0.1;

struct State {
    x: DVector<f64>,
    qx: DVector<f64>,
    lipschitz: f64,
    iterations: usize,
}

impl Problem<'_> {
    /// Monotone FISTA from `state.x` until the KKT violation drops below
    /// `tol`, the total iteration count reaches `budget`, or polishing
    /// succeeds. Returns `Some(polished)` on convergence.
    fn run(&self, state: &mut State, tol: f64, budget: usize, polish: bool) -> Option<bool> {
        let d = state.x.len();
        let lambda = self.lambda;
        if self.kkt_violation(&state.x, &state.qx) <= tol {
            return Some(false);
        }
        let mut x = state.x.clone();
        let mut qx = state.qx.clone();
        let mut fx = self.objective(&x, &qx);
        let mut x_prev = x.clone();
        let mut qx_prev = qx.clone();
        let mut yk = x.clone();
        let mut qyk = qx.clone();
        let mut t = 1.0_f64;
        let mut lipschitz = state.lipschitz;
        let mut result = None;

        while state.iterations < budget {
            state.iterations += 1;
            let resid_y = &qyk - &self.y;
            let grad = self.q.apply_t(&resid_y);
            let fy = 0.5 * resid_y.norm_squared();
            // Backtracking only upward from the power-iteration estimate.
            let (z, qz) = loop {
                let z = DVector::from_iterator(
                    d,
                    yk.iter()
                        .zip(grad.iter())
                        .map(|(&yi, &gi)| shrink(yi - gi / lipschitz, lambda / lipschitz)),
                );
                let qz = self.q.apply(&z);
                let step = &z - &yk;
                let model = fy + grad.dot(&step) + 0.5 * lipschitz * step.norm_squared();
                let fz = 0.5 * (&qz - &self.y).norm_squared();
                if fz <= model * (1.0 + 1e-12) + 1e-300 {
                    break (z, qz);
                }
                lipschitz *= 2.0;
            };
            let fz = self.objective(&z, &qz);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            x_prev.copy_from(&x);
            qx_prev.copy_from(&qx);
            if fz <= fx {
                x = z.clone();
                qx = qz.clone();
                fx = fz;
                let beta_z = t / t_next;
                let beta_x = (t - 1.0) / t_next;
                yk = &x + (&z - &x) * beta_z + (&x - &x_prev) * beta_x;
                qyk = &qx + (&qz - &qx) * beta_z + (&qx - &qx_prev) * beta_x;
                t = t_next;
            } else {
                // Monotone restart: objective would increase, keep x and drop momentum.
                yk.copy_from(&x);
                qyk.copy_from(&qx);
                t = 1.0;
            }

            if state.iterations.is_multiple_of(CHECK_EVERY) {
                if self.kkt_violation(&x, &qx) <= tol {
                    result = Some(false);
                    break;
                }
                if polish {
                    if let Some((w, qw, _)) = self.polish(&x, tol) {
                        if self.objective(&w, &qw) <= fx + tol {
                            x = w;
                            qx = qw;
                            result = Some(true);
                            break;
                        }
                    }
                }
            }
        }
        if result.is_none() && self.kkt_violation(&x, &qx) <= tol {
            result = Some(false);
        }
        state.x = x;
        state.qx = qx;
        state.lipschitz = lipschitz;
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_data_gives_zero() {
        let q = LinearOperatorMatrix::new(DMatrix::identity(3, 3)).unwrap();
        let out = lasso_solve(&q, &[0.0; 3], 0.5, &SolverOptions::default()).unwrap();
        assert_eq!(out.x, vec![0.0; 3]);
    }

    #[test]
    fn scalar_closed_form() {
        let q = LinearOperatorMatrix::new(DMatrix::from_element(1, 1, 1.0)).unwrap();
        let out = lasso_solve(&q, &[3.0], 1.0, &SolverOptions::default()).unwrap();
        assert!((out.x[0] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn unregularized_square_system() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let a = DMatrix::from_fn(5, 5, |i, j| {
            rng.random_range(-0.5..0.5) + if i == j { 2.0 } else { 0.0 }
        });
        let x0 = DVector::from_fn(5, |i, _| i as f64 - 2.0);
        let y = &a * &x0;
        let q = LinearOperatorMatrix::new(a).unwrap();
        let out = lasso_solve(&q, y.as_slice(), 0.0, &SolverOptions::default()).unwrap();
        for (xi, ti) in out.x.iter().zip(x0.iter()) {
            assert!((xi - ti).abs() < 1e-8, "{xi} vs {ti}");
        }
    }

    #[test]
    fn kkt_holds_on_random_instance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let a = DMatrix::from_fn(20, 40, |_, _| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let q = LinearOperatorMatrix::new(a).unwrap();
        let out = lasso_solve(&q, &y, 0.3, &SolverOptions::default()).unwrap();
        let tol = 1e-6 * q.apply_t(&DVector::from_column_slice(&y)).amax();
        assert!(out.diagnostics.kkt_violation <= tol.max(1e-8));
    }

    #[test]
    fn deterministic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let a = DMatrix::from_fn(10, 15, |_, _| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let q = LinearOperatorMatrix::new(a).unwrap();
        let opts = SolverOptions::default();
        let a1 = lasso_solve(&q, &y, 0.1, &opts).unwrap();
        let a2 = lasso_solve(&q, &y, 0.1, &opts).unwrap();
        assert_eq!(a1.x, a2.x);
    }
}
