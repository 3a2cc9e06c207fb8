//! Estimators for the correlation matrix: the naive pair-by-pair method and
//! the compressed-sensing reconstructions, plus the rules that set their
//! noise parameters.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise_model::{pair_index, uvec, uvec_inverse, uvec_len, NoiseModel};
use crate::optim::{
    constrained_l1_solve, lasso_solve, psd_project, sym_eigen, weighted_constrained_l1_solve,
    BallBlock, LinearOperatorMatrix, SolverDiagnostics, SolverOptions,
};
use crate::sensing::{complex_probe_row, Probe, SensingEnsemble};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryMode {
    Naive,
    Sequential,
    Simultaneous,
    Lasso,
}

impl std::str::FromStr for RecoveryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Self::Naive),
            "sequential" => Ok(Self::Sequential),
            "simultaneous" => Ok(Self::Simultaneous),
            "lasso" => Ok(Self::Lasso),
            other => Err(Error::param(format!("unknown recovery mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    pub n: usize,
    /// Estimate `W`, dense row-major.
    pub matrix: Vec<f64>,
    pub mode: RecoveryMode,
    /// `‖Φ(W) − h‖₂`, and for the simultaneous program also `‖diag W − g‖₂`.
    pub residuals: Vec<f64>,
    /// Radius each residual was allowed (empty for naive and LASSO).
    pub radii: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub feasible: bool,
    pub psd_projected: bool,
    /// Off-diagonal ℓ1 norm `‖uvec W‖₁` before any projection.
    pub objective: f64,
}

impl RecoveryResult {
    fn from_matrix(w: &DMatrix<f64>, mode: RecoveryMode) -> Self {
        let n = w.nrows();
        let matrix = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|ij| w[ij]).collect();
        Self {
            n,
            matrix,
            mode,
            residuals: Vec::new(),
            radii: Vec::new(),
            iterations: 0,
            converged: true,
            feasible: true,
            psd_projected: false,
            objective: uvec(w).iter().map(|x| x.abs()).sum(),
        }
    }

    pub fn w(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.matrix)
    }

    fn set_matrix(&mut self, w: &DMatrix<f64>) {
        let n = self.n;
        for i in 0..n {
            for j in 0..n {
                self.matrix[i * n + j] = w[(i, j)];
            }
        }
    }

    fn absorb(&mut self, diag: &SolverDiagnostics) {
        self.iterations = diag.iterations;
        self.converged = diag.converged;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryOptions {
    pub solver: SolverOptions,
    /// Project the estimate onto the PSD cone after solving.
    pub psd_project: bool,
    pub tol_psd: f64,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            psd_project: false,
            tol_psd: crate::noise_model::DEFAULT_TOL_PSD,
        }
    }
}

/// Unknown constants in the λ rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LambdaConstants {
    pub c_prime: f64,
    pub c0: f64,
}

impl Default for LambdaConstants {
    fn default() -> Self {
        Self { c_prime: 1.0, c0: 1.0 }
    }
}

/// Relative accuracies of the two measurement stages and the parameters
/// derived from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseBudget {
    pub delta1: f64,
    pub delta2: f64,
    pub tau: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub lambda: f64,
}

impl NoiseBudget {
    pub fn derive(
        g: &[f64],
        h: &[f64],
        delta1: f64,
        delta2: f64,
        tau: f64,
        constants: LambdaConstants,
    ) -> Result<Self> {
        let (eps1, eps2) = set_epsilons(g, h, delta1, delta2, tau)?;
        let lambda = set_lambda(g, h, delta1, delta2, constants)?;
        Ok(Self {
            delta1,
            delta2,
            tau,
            eps1,
            eps2,
            lambda,
        })
    }

    /// Radius of the sequential program, `ε2 + ε1 √(mn)`.
    pub fn sequential_radius(&self, m: usize, n: usize) -> f64 {
        sequential_radius(self.eps1, self.eps2, m, n)
    }
}

pub fn sequential_radius(eps1: f64, eps2: f64, m: usize, n: usize) -> f64 {
    eps2 + eps1 * ((m * n) as f64).sqrt()
}

fn l2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn linf(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// `εk = τδk ‖·‖₂ / (1 − τδk)` for `g` and `h`.
pub fn set_epsilons(g: &[f64], h: &[f64], delta1: f64, delta2: f64, tau: f64) -> Result<(f64, f64)> {
    if !(tau > 0.0) {
        return Err(Error::param(format!("tau must be positive, got {tau}")));
    }
    let one = |delta: f64, v: &[f64], name: &str| -> Result<f64> {
        if !(delta >= 0.0) {
            return Err(Error::param(format!("{name} must be >= 0, got {delta}")));
        }
        let td = tau * delta;
        if td >= 0.25 {
            return Err(Error::param(format!("need tau*{name} < 1/4, got {td}")));
        }
        Ok(td * l2(v) / (1.0 - td))
    };
    Ok((one(delta1, g, "delta1")?, one(delta2, h, "delta2")?))
}

/// LASSO regularization from the sub-Gaussian noise model; `n = g.len()`,
/// `m = h.len()`.
pub fn set_lambda(g: &[f64], h: &[f64], delta1: f64, delta2: f64, c: LambdaConstants) -> Result<f64> {
    let (n, m) = (g.len() as f64, h.len() as f64);
    if g.is_empty() || h.is_empty() {
        return Err(Error::param("set_lambda needs nonempty g and h"));
    }
    if !(delta1 >= 0.0 && delta2 >= 0.0) {
        return Err(Error::param("deltas must be nonnegative"));
    }
    if !(c.c_prime > 0.0 && c.c0 > 0.0) {
        return Err(Error::param("lambda constants must be positive"));
    }
    let e1pp = 2.0 * (n.ln() / c.c0).sqrt() * delta1;
    let e2pp = 2.0 * (m.ln() / c.c0).sqrt() * delta2;
    if e1pp >= 0.5 || e2pp >= 0.5 {
        return Err(Error::param(format!(
            "deltas too large for the lambda rule: eps''1 = {e1pp}, eps''2 = {e2pp} (need < 1/2)"
        )));
    }
    let e1ppp = delta1 / (1.0 - e1pp) * linf(g);
    let e2ppp = delta2 / (1.0 - e2pp) * linf(h);
    Ok((e1ppp * 4.0 * (m * n).sqrt() + e2ppp)
        * 4.0
        * m.sqrt()
        * (1.0 + std::f64::consts::SQRT_2)
        * (n.ln() / c.c_prime).sqrt())
}

/// Probes of the naive method: `e_j` for each qubit, then `e_j + e_k` for
/// each pair in [`pair_index`] order.
pub fn naive_probes(n: usize) -> (Vec<Probe>, Vec<Probe>) {
    let singles = (0..n).map(|j| Probe::single_qubit(n, j)).collect();
    let mut pairs = Vec::with_capacity(uvec_len(n));
    for j in 0..n {
        for k in (j + 1)..n {
            pairs.push(Probe::pair(n, j, k));
        }
    }
    (singles, pairs)
}

/// Direct estimates from single-qubit rates `Γ_j` and pair rates `Γ_jk`
/// (pair order as in [`naive_probes`]).
///
/// Returns `g` with `g_j = Γ_j/2` and the off-diagonal estimate
/// `h_jk = Γ_jk/4 − g_j/2 − g_k/2`.
pub fn naive_reconstruct(single_gammas: &[f64], pair_gammas: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = single_gammas.len();
    if n == 0 {
        return Err(Error::param("need at least one single-qubit record"));
    }
    if pair_gammas.len() != uvec_len(n) {
        return Err(Error::dim("naive pair records", uvec_len(n), pair_gammas.len()));
    }
    let g: Vec<f64> = single_gammas.iter().map(|x| x / 2.0).collect();
    let mut off = DMatrix::zeros(n, n);
    for j in 0..n {
        for k in (j + 1)..n {
            let h = 0.25 * pair_gammas[pair_index(n, j, k)] - 0.5 * g[j] - 0.5 * g[k];
            off[(j, k)] = h;
            off[(k, j)] = h;
        }
    }
    Ok((g, off))
}

/// Naive estimate packaged like the compressed-sensing results.
pub fn naive_result(g: &[f64], off: &DMatrix<f64>, opts: &RecoveryOptions) -> Result<RecoveryResult> {
    let mut w = off.clone();
    for (i, gi) in g.iter().enumerate() {
        w[(i, i)] = *gi;
    }
    let mut res = RecoveryResult::from_matrix(&w, RecoveryMode::Naive);
    finish(&mut res, &w, opts)?;
    Ok(res)
}

fn check_inputs(g: &[f64], h: &[f64], ens: &SensingEnsemble) -> Result<()> {
    ens.validate()?;
    if g.len() != ens.n {
        return Err(Error::dim("recovery g", ens.n, g.len()));
    }
    if h.len() != ens.m {
        return Err(Error::dim("recovery h", ens.m, h.len()));
    }
    if g.iter().chain(h).any(|x| !x.is_finite()) {
        return Err(Error::param("recovery inputs must be finite"));
    }
    Ok(())
}

/// `h′ = h − Φ(diag g)`.
pub fn shifted_data(g: &[f64], h: &[f64], ens: &SensingEnsemble) -> Vec<f64> {
    let dg = ens.diag_matrix() * DVector::from_column_slice(g);
    h.iter().zip(dg.iter()).map(|(a, b)| a - b).collect()
}

fn assemble(g: &[f64], off: &[f64]) -> Result<DMatrix<f64>> {
    let mut w = uvec_inverse(g.len(), off)?;
    for (i, gi) in g.iter().enumerate() {
        w[(i, i)] = *gi;
    }
    Ok(w)
}

fn feasibility_slack(opts: &SolverOptions, rows: usize, data_norm: f64) -> f64 {
    10.0 * (opts.tol_abs * (rows as f64).sqrt() + opts.tol_rel * data_norm)
}

fn finish(res: &mut RecoveryResult, w: &DMatrix<f64>, opts: &RecoveryOptions) -> Result<()> {
    if opts.psd_project {
        let p = psd_project(w)?;
        let min_eig = sym_eigen(&p)?.values.last().copied().unwrap_or(0.0);
        if min_eig < -opts.tol_psd {
            return Err(Error::param(format!("PSD projection left eigenvalue {min_eig}")));
        }
        res.set_matrix(&p);
        res.psd_projected = true;
    }
    Ok(())
}

/// Diagonal pinned to `g`, off-diagonal part by
/// `min ‖uvec W‖₁ s.t. ‖Q uvec W − h′‖₂ ≤ ε2 + ε1√(mn)`.
pub fn cs_sequential(
    g: &[f64],
    h: &[f64],
    ens: &SensingEnsemble,
    eps1: f64,
    eps2: f64,
    opts: &RecoveryOptions,
) -> Result<RecoveryResult> {
    check_inputs(g, h, ens)?;
    if !(eps1 >= 0.0 && eps2 >= 0.0) {
        return Err(Error::param("eps1 and eps2 must be nonnegative"));
    }
    let q = ens.offdiag_matrix()?;
    let hp = shifted_data(g, h, ens);
    let radius = sequential_radius(eps1, eps2, ens.m, ens.n);
    let out = constrained_l1_solve(&q, &hp, radius, &opts.solver)?;
    let w = assemble(g, &out.x)?;
    let resid = residual(&q, &out.x, &hp);
    let mut res = RecoveryResult::from_matrix(&w, RecoveryMode::Sequential);
    res.absorb(&out.diagnostics);
    res.feasible = resid <= radius + feasibility_slack(&opts.solver, ens.m, l2(&hp));
    res.residuals = vec![resid];
    res.radii = vec![radius];
    finish(&mut res, &w, opts)?;
    Ok(res)
}

fn residual(q: &LinearOperatorMatrix, x: &[f64], y: &[f64]) -> f64 {
    let r = q.apply(&DVector::from_column_slice(x));
    r.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Diagonal and off-diagonal parts solved together:
/// `min ‖uvec W‖₁ s.t. ‖diag W − g‖₂ ≤ ε1, ‖Φ(W) − h‖₂ ≤ ε2`.
pub fn cs_simultaneous(
    g: &[f64],
    h: &[f64],
    ens: &SensingEnsemble,
    eps1: f64,
    eps2: f64,
    opts: &RecoveryOptions,
) -> Result<RecoveryResult> {
    check_inputs(g, h, ens)?;
    if !(eps1 >= 0.0 && eps2 >= 0.0) {
        return Err(Error::param("eps1 and eps2 must be nonnegative"));
    }
    let (n, m) = (ens.n, ens.m);
    let d = uvec_len(n);
    let q = ens.offdiag_matrix()?;
    let dm = ens.diag_matrix();
    // Unknowns (diag W, uvec W); rows [I 0] then [D Q].
    let mut a = DMatrix::zeros(n + m, n + d);
    for i in 0..n {
        a[(i, i)] = 1.0;
    }
    a.view_mut((n, 0), (m, n)).copy_from(&dm);
    a.view_mut((n, n), (m, d)).copy_from(q.matrix());
    let a = LinearOperatorMatrix::new(a)?;
    let b: Vec<f64> = g.iter().chain(h).copied().collect();
    let blocks = [
        BallBlock { rows: 0..n, radius: eps1 },
        BallBlock {
            rows: n..n + m,
            radius: eps2,
        },
    ];
    let weights: Vec<f64> = (0..n + d).map(|i| if i < n { 0.0 } else { 1.0 }).collect();
    let out = weighted_constrained_l1_solve(&a, &b, &blocks, Some(&weights), &opts.solver)?;
    let w = assemble(&out.x[..n], &out.x[n..])?;
    let r_diag = l2(&out.x[..n].iter().zip(g).map(|(x, y)| x - y).collect::<Vec<_>>());
    let phi = ens.apply_to_matrix(&w)?;
    let r_h = l2(&phi.iter().zip(h).map(|(x, y)| x - y).collect::<Vec<_>>());
    let mut res = RecoveryResult::from_matrix(&w, RecoveryMode::Simultaneous);
    res.absorb(&out.diagnostics);
    res.feasible = r_diag <= eps1 + feasibility_slack(&opts.solver, n, l2(g))
        && r_h <= eps2 + feasibility_slack(&opts.solver, m, l2(h));
    res.residuals = vec![r_h, r_diag];
    res.radii = vec![eps2, eps1];
    finish(&mut res, &w, opts)?;
    Ok(res)
}

/// Diagonal pinned to `g`, off-diagonal part by
/// `min ½‖Q uvec W − h′‖₂² + λ‖uvec W‖₁`.
pub fn cs_lasso(
    g: &[f64],
    h: &[f64],
    ens: &SensingEnsemble,
    lambda: f64,
    opts: &RecoveryOptions,
) -> Result<RecoveryResult> {
    check_inputs(g, h, ens)?;
    let q = ens.offdiag_matrix()?;
    let hp = shifted_data(g, h, ens);
    let out = lasso_solve(&q, &hp, lambda, &opts.solver)?;
    let w = assemble(g, &out.x)?;
    let mut res = RecoveryResult::from_matrix(&w, RecoveryMode::Lasso);
    res.absorb(&out.diagnostics);
    res.residuals = vec![residual(&q, &out.x, &hp)];
    finish(&mut res, &w, opts)?;
    Ok(res)
}

/// Parameters for [`reconstruct`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Program {
    Sequential { eps1: f64, eps2: f64 },
    Simultaneous { eps1: f64, eps2: f64 },
    Lasso { lambda: f64 },
}

/// Dispatches to the compressed-sensing programs.
pub fn reconstruct(
    g: &[f64],
    h: &[f64],
    ens: &SensingEnsemble,
    program: Program,
    opts: &RecoveryOptions,
) -> Result<RecoveryResult> {
    match program {
        Program::Sequential { eps1, eps2 } => cs_sequential(g, h, ens, eps1, eps2, opts),
        Program::Simultaneous { eps1, eps2 } => cs_simultaneous(g, h, ens, eps1, eps2, opts),
        Program::Lasso { lambda } => cs_lasso(g, h, ens, lambda, opts),
    }
}

/// Recovers the skew-symmetric `T` and symmetric `R` from phase rates
/// `Ω_ab`, by `min ‖x‖₁ s.t. ‖Ax − Ω‖₂ ≤ eps` over `x = (uvec T, −2 uvec R)`.
pub fn recover_complex(
    omegas: &[f64],
    probes: &[Probe],
    eps: f64,
    opts: &SolverOptions,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let Some(first) = probes.first() else {
        return Err(Error::param("need at least one probe"));
    };
    if omegas.len() != probes.len() {
        return Err(Error::dim("phase measurements", probes.len(), omegas.len()));
    }
    let n = first.n();
    if n < 2 {
        return Err(Error::param("need n >= 2"));
    }
    let rows = probes
        .iter()
        .map(|p| {
            if p.n() != n {
                return Err(Error::dim("complex probe", n, p.n()));
            }
            complex_probe_row(&p.alpha(), &p.beta())
        })
        .collect::<Result<Vec<_>>>()?;
    let a = LinearOperatorMatrix::from_rows(&rows)?;
    let out = constrained_l1_solve(&a, omegas, eps, opts)?;
    let d = uvec_len(n);
    let mut t = DMatrix::zeros(n, n);
    let mut r = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let k = pair_index(n, i, j);
            t[(i, j)] = out.x[k];
            t[(j, i)] = -out.x[k];
            r[(i, j)] = -0.5 * out.x[d + k];
            r[(j, i)] = -0.5 * out.x[d + k];
        }
    }
    Ok((t, r))
}

/// Summary statistics of a correlation matrix used by the error bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelStats {
    pub n: usize,
    pub diag_l2: f64,
    pub diag_inf: f64,
    pub offdiag_fro: f64,
    /// Entrywise ℓ1 norm of the full matrix.
    pub l1: f64,
    /// ℓ1 distance of `uvec C′` from its best `s`-term approximation.
    pub eta_s: f64,
}

impl ModelStats {
    pub fn of(model: &NoiseModel, s: usize) -> Self {
        let v = model.v();
        let diag: Vec<f64> = v.diagonal().iter().copied().collect();
        let u = uvec(v);
        Self {
            n: model.n(),
            diag_l2: l2(&diag),
            diag_inf: linf(&diag),
            offdiag_fro: std::f64::consts::SQRT_2 * l2(&u),
            l1: v.iter().map(|x| x.abs()).sum(),
            eta_s: eta_s(&u, s),
        }
    }
}

/// `‖x − x_s‖₁` for the best `s`-term approximation `x_s`.
pub fn eta_s(x: &[f64], s: usize) -> f64 {
    let mut mags: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    mags.iter().skip(s).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Naive,
    Rip,
    Ripless,
}

/// Multiplicative constants of the error bounds (left symbolic by the
/// theory, so they default to 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundConstants {
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for BoundConstants {
    fn default() -> Self {
        Self { c: 1.0, c1: 1.0, c2: 1.0 }
    }
}

/// Predicted Frobenius error of the off-diagonal estimate.
///
/// Only meaningful up to the constants; used to annotate reports.
pub fn theoretical_bounds(
    stats: &ModelStats,
    delta1: f64,
    delta2: f64,
    s: usize,
    kind: BoundKind,
    k: BoundConstants,
) -> f64 {
    let n = stats.n as f64;
    let s_f = s as f64;
    let noise_rip = n.sqrt() * delta1 * stats.diag_l2
        + delta2 * (n.sqrt() * stats.diag_l2 + (2.0 * s_f).sqrt() * stats.offdiag_fro);
    match kind {
        BoundKind::Naive => k.c * (n.sqrt() * (delta1 + delta2) * stats.diag_l2 + delta2 * stats.offdiag_fro),
        BoundKind::Rip => {
            let defect = if s > 0 { stats.eta_s / s_f.sqrt() } else { stats.eta_s };
            k.c1 * defect + k.c2 * noise_rip
        }
        BoundKind::Ripless => {
            let ln = n.ln().max(0.0);
            let defect = if s > 0 { stats.eta_s / s_f.sqrt() } else { stats.eta_s };
            let noise = s_f
                * ln.powf(2.5)
                * (delta1 * stats.diag_inf * (s_f * n * ln).sqrt()
                    + delta2 * n.sqrt() * stats.diag_l2
                    + delta2 * (2.0 * s_f).sqrt() * stats.offdiag_fro);
            k.c * (defect + noise)
        }
    }
}

/// Closed-form bound on `E‖Ĉ′ − C′‖²_F` for the naive estimator.
pub fn naive_expected_sq_error_bound(stats: &ModelStats, delta1: f64, delta2: f64) -> f64 {
    let n = stats.n as f64;
    3.0 * (n - 1.0) * (delta1 + delta2).powi(2) * stats.diag_l2.powi(2)
        + 6.0 * delta2.powi(2) * stats.offdiag_fro.powi(2)
}

/// Closed-form bound on `E‖g − diag C‖²₂` for the naive estimator.
pub fn naive_expected_sq_diag_bound(stats: &ModelStats, delta1: f64) -> f64 {
    2.0 * delta1.powi(2) * stats.diag_l2.powi(2)
}
