//! Random GHZ probes, the sensing operator they realize, and simulated
//! measurement campaigns.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise_model::{pair_index, quadratic_form, signs, uvec_len, NoiseModel};
use crate::optim::LinearOperatorMatrix;
use crate::rng::{self, domain};
use crate::spectroscopy::{
    self, choose_time_simulated, estimate_with_retry, walk_trials, ChooserConstants, ShotRecord,
    WALK_MU,
};

/// One measurement setting: the coherence between basis states `|a⟩` and `|b⟩`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ProbeBits", into = "ProbeBits")]
pub struct Probe {
    a: Vec<u8>,
    b: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
struct ProbeBits {
    a: String,
    b: String,
}

fn parse_bits(s: &str) -> Result<Vec<u8>> {
    s.chars()
        .map(|c| match c {
            '0' => Ok(0),
            '1' => Ok(1),
            other => Err(Error::param(format!("bitstring contains '{other}'"))),
        })
        .collect()
}

fn bits_to_string(bits: &[u8]) -> String {
    bits.iter().map(|&b| if b == 0 { '0' } else { '1' }).collect()
}

impl TryFrom<ProbeBits> for Probe {
    type Error = Error;

    fn try_from(p: ProbeBits) -> Result<Self> {
        Probe::new(parse_bits(&p.a)?, parse_bits(&p.b)?)
    }
}

impl From<Probe> for ProbeBits {
    fn from(p: Probe) -> Self {
        ProbeBits {
            a: bits_to_string(&p.a),
            b: bits_to_string(&p.b),
        }
    }
}

impl Probe {
    pub fn new(a: Vec<u8>, b: Vec<u8>) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::dim("probe bit-vectors", a.len(), b.len()));
        }
        if a.is_empty() {
            return Err(Error::param("probe needs at least one qubit"));
        }
        if a.iter().chain(&b).any(|&x| x > 1) {
            return Err(Error::param("probe entries must be bits"));
        }
        if a == b {
            return Err(Error::param("probe needs a != b"));
        }
        Ok(Self { a, b })
    }

    /// `a = 0`, `b = e_j`: measures `Γ = 2 c_jj`.
    pub fn single_qubit(n: usize, j: usize) -> Self {
        let mut b = vec![0; n];
        b[j] = 1;
        Self { a: vec![0; n], b }
    }

    /// `a = 0`, `b = e_j + e_k`: measures `Γ = 2(c_jj + 2c_jk + c_kk)`.
    pub fn pair(n: usize, j: usize, k: usize) -> Self {
        let mut b = vec![0; n];
        b[j] = 1;
        b[k] = 1;
        Self { a: vec![0; n], b }
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn a(&self) -> &[u8] {
        &self.a
    }

    pub fn b(&self) -> &[u8] {
        &self.b
    }

    /// `r = b − a`.
    pub fn r(&self) -> Vec<i8> {
        self.a.iter().zip(&self.b).map(|(&a, &b)| b as i8 - a as i8).collect()
    }

    pub fn alpha(&self) -> Vec<i8> {
        signs(&self.a)
    }

    pub fn beta(&self) -> Vec<i8> {
        signs(&self.b)
    }
}

/// Uniform probe over `{0,1}ⁿ × {0,1}ⁿ`, redrawn while `a = b`.
pub fn draw_probe<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Probe> {
    if n == 0 {
        return Err(Error::param("n must be positive"));
    }
    loop {
        let a: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        let b: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        if a != b {
            return Ok(Probe { a, b });
        }
    }
}

/// `m` random probes; probe `j` comes from its own stream so any prefix of a
/// larger ensemble with the same seed is the smaller ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingEnsemble {
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub probes: Vec<Probe>,
}

impl SensingEnsemble {
    pub fn generate(n: usize, m: usize, seed: u64) -> Result<Self> {
        let probes = (0..m)
            .map(|j| draw_probe(n, &mut rng::stream(seed, &[domain::ENSEMBLE, j as u64])))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { n, m, seed, probes })
    }

    pub fn from_probes(n: usize, seed: u64, probes: Vec<Probe>) -> Result<Self> {
        if let Some(p) = probes.iter().find(|p| p.n() != n) {
            return Err(Error::dim("ensemble probe", n, p.n()));
        }
        Ok(Self {
            n,
            m: probes.len(),
            seed,
            probes,
        })
    }

    /// Checks the stored `m` and probe widths after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.probes.len() != self.m {
            return Err(Error::dim("ensemble probe count", self.m, self.probes.len()));
        }
        if let Some(p) = self.probes.iter().find(|p| p.n() != self.n) {
            return Err(Error::dim("ensemble probe", self.n, p.n()));
        }
        Ok(())
    }

    /// First `m` probes.
    pub fn truncated(&self, m: usize) -> Self {
        Self {
            n: self.n,
            m: m.min(self.m),
            seed: self.seed,
            probes: self.probes[..m.min(self.m)].to_vec(),
        }
    }

    /// `Q` with `Φ(C) = Q · uvec(C) + D · diag(C)`; row `j` is `4 uvec(r rᵀ)`.
    pub fn offdiag_matrix(&self) -> Result<LinearOperatorMatrix> {
        let d = uvec_len(self.n);
        if d == 0 {
            return Err(Error::param("need n >= 2 for off-diagonal unknowns"));
        }
        let mut q = DMatrix::zeros(self.m, d);
        for (row, probe) in self.probes.iter().enumerate() {
            let r = probe.r();
            let nz: Vec<usize> = (0..self.n).filter(|&i| r[i] != 0).collect();
            for (x, &i) in nz.iter().enumerate() {
                for &j in &nz[x + 1..] {
                    q[(row, pair_index(self.n, i, j))] = 4.0 * f64::from(r[i] * r[j]);
                }
            }
        }
        LinearOperatorMatrix::new(q)
    }

    /// `D` with entries `2 r_i²`, the diagonal part of `Φ`.
    pub fn diag_matrix(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.m, self.n);
        for (row, probe) in self.probes.iter().enumerate() {
            for (i, ri) in probe.r().into_iter().enumerate() {
                d[(row, i)] = 2.0 * f64::from(ri * ri);
            }
        }
        d
    }

    /// `Φ(M)_j = 2 r_jᵀ M r_j` for an arbitrary square matrix.
    pub fn apply_to_matrix(&self, m: &DMatrix<f64>) -> Result<Vec<f64>> {
        if m.nrows() != self.n || m.ncols() != self.n {
            return Err(Error::dim("sensing operator input", self.n, m.nrows()));
        }
        Ok(self
            .probes
            .iter()
            .map(|p| {
                let r = p.r();
                2.0 * quadratic_form(m, &r, &r)
            })
            .collect())
    }
}

/// `Φ(C)` for the real part of the model.
pub fn apply_sensing(model: &NoiseModel, ensemble: &SensingEnsemble) -> Result<Vec<f64>> {
    ensemble.apply_to_matrix(model.v())
}

/// How the evolution time of each shot-mode estimate is picked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeSelection {
    /// `t = 1/Γ` using the true rate.
    Oracle,
    /// Random-walk search started from `tau0`.
    Adaptive {
        tau0: f64,
        h: f64,
        /// Extra steps; defaults to `h/μ`.
        #[serde(default)]
        eta: Option<f64>,
        /// Target accuracy of the averaged walk position.
        #[serde(default = "default_walk_delta")]
        delta: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default)]
        constants: ChooserConstants,
    },
}

fn default_walk_delta() -> f64 {
    0.25
}

fn default_epsilon() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NoiseSpec {
    Exact,
    /// Independent `N(0, σ²)` added to each entry of `h`; `g` exact.
    Gaussian { sigma: f64 },
    /// Every rate estimated from simulated shots, with trial counts chosen
    /// so that each estimate has relative accuracy `δ` with failure
    /// probability `epsilon`.
    Shot {
        delta1: f64,
        delta2: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default = "default_time")]
        time: TimeSelection,
    },
}

fn default_time() -> TimeSelection {
    TimeSelection::Oracle
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseSpec::Exact => Ok(()),
            NoiseSpec::Gaussian { sigma } if *sigma >= 0.0 => Ok(()),
            NoiseSpec::Gaussian { sigma } => Err(Error::param(format!("sigma must be >= 0, got {sigma}"))),
            NoiseSpec::Shot { delta1, delta2, epsilon, .. } => {
                spectroscopy::trials_for(*delta1, *epsilon)?;
                spectroscopy::trials_for(*delta2, *epsilon)?;
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    pub n: usize,
    pub m: usize,
    /// Estimates of `diag(C)`.
    pub g: Vec<f64>,
    /// Estimates of `Φ(C)`.
    pub h: Vec<f64>,
    pub noise: NoiseSpec,
    pub seed: u64,
    /// Shot provenance in shot mode: ids `0..n` are the single-qubit probes
    /// behind `g`, ids `n..n+m` the ensemble probes behind `h`.
    #[serde(default)]
    pub shots: Vec<ShotRecord>,
}

impl Campaign {
    pub fn validate(&self) -> Result<()> {
        if self.g.len() != self.n {
            return Err(Error::dim("campaign g", self.n, self.g.len()));
        }
        if self.h.len() != self.m {
            return Err(Error::dim("campaign h", self.m, self.h.len()));
        }
        if self.g.iter().chain(&self.h).any(|x| !x.is_finite()) {
            return Err(Error::param("campaign has non-finite entries"));
        }
        Ok(())
    }
}

/// Estimates the decay rate of each probe from simulated shots.
///
/// `id_offset` numbers the probes in the returned shot records and keys
/// their random streams.
pub fn estimate_rates(
    model: &NoiseModel,
    probes: &[Probe],
    delta: f64,
    epsilon: f64,
    time: &TimeSelection,
    seed: u64,
    id_offset: usize,
) -> Result<(Vec<f64>, Vec<ShotRecord>)> {
    let n_trials = spectroscopy::trials_for(delta, epsilon)?;
    let results: Vec<Result<(f64, ShotRecord)>> = probes
        .par_iter()
        .enumerate()
        .map(|(j, probe)| {
            let id = id_offset + j;
            let stream_seed = rng::derive_seed(seed, &[domain::SHOTS, id as u64]);
            let mut stream = rng::stream(stream_seed, &[]);
            let (gamma, omega) = model.rates_for_bits(probe.a(), probe.b())?;
            if gamma == 0.0 && omega == 0.0 {
                // Nothing decays: every shot is "+" whatever t is.
                let rec = ShotRecord {
                    probe_id: id,
                    t: 1.0,
                    n_plus: n_trials,
                    n_minus: 0,
                    seed: stream_seed,
                };
                return Ok((0.0, rec));
            }
            let t = match time {
                TimeSelection::Oracle => 1.0 / gamma,
                TimeSelection::Adaptive {
                    tau0,
                    h,
                    eta,
                    delta,
                    epsilon,
                    constants,
                } => {
                    let walk_n = walk_trials(*delta, *epsilon, *constants)?;
                    let eta = eta.unwrap_or(h / WALK_MU);
                    choose_time_simulated(gamma, omega, *tau0, *h, eta, walk_n, &mut stream)?.t_hat
                }
            };
            let (est, counts) = estimate_with_retry(gamma, omega, t, n_trials, id, &mut stream)
                .map_err(|e| match e {
                    Error::Estimation { reason, .. } => Error::Estimation {
                        probe: Some(id),
                        reason,
                    },
                    other => other,
                })?;
            let rec = ShotRecord {
                probe_id: id,
                t: counts.t,
                n_plus: counts.n_plus,
                n_minus: counts.n_minus,
                seed: stream_seed,
            };
            Ok((est.gamma_hat, rec))
        })
        .collect();
    let mut rates = Vec::with_capacity(probes.len());
    let mut records = Vec::with_capacity(probes.len());
    for r in results {
        let (rate, rec) = r?;
        rates.push(rate);
        records.push(rec);
    }
    Ok((rates, records))
}

/// Runs the measurement protocol on a simulated register.
pub fn simulate_campaign(
    model: &NoiseModel,
    ensemble: &SensingEnsemble,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<Campaign> {
    noise.validate()?;
    ensemble.validate()?;
    if ensemble.n != model.n() {
        return Err(Error::dim("campaign ensemble", model.n(), ensemble.n));
    }
    let n = model.n();
    let exact_g: Vec<f64> = model.v().diagonal().iter().copied().collect();
    let exact_h = apply_sensing(model, ensemble)?;
    let (g, h, shots) = match noise {
        NoiseSpec::Exact => (exact_g, exact_h, Vec::new()),
        NoiseSpec::Gaussian { sigma } => {
            let normal = Normal::new(0.0, *sigma).map_err(|e| Error::param(e.to_string()))?;
            let h = exact_h
                .iter()
                .enumerate()
                .map(|(j, hj)| {
                    let mut s = rng::stream(seed, &[domain::GAUSSIAN, j as u64]);
                    hj + normal.sample(&mut s)
                })
                .collect();
            (exact_g, h, Vec::new())
        }
        NoiseSpec::Shot {
            delta1,
            delta2,
            epsilon,
            time,
        } => {
            let singles: Vec<Probe> = (0..n).map(|j| Probe::single_qubit(n, j)).collect();
            let (gammas, mut shots) = estimate_rates(model, &singles, *delta1, *epsilon, time, seed, 0)?;
            let (h, more) = estimate_rates(model, &ensemble.probes, *delta2, *epsilon, time, seed, n)?;
            shots.extend(more);
            (gammas.iter().map(|x| x / 2.0).collect(), h, shots)
        }
    };
    Ok(Campaign {
        n,
        m: ensemble.m,
        g,
        h,
        noise: noise.clone(),
        seed,
        shots,
    })
}

/// `q = 4 uvec(r rᵀ)` for one probe.
pub fn isotropy_row(probe: &Probe) -> Vec<f64> {
    let n = probe.n();
    let r = probe.r();
    let mut q = vec![0.0; uvec_len(n)];
    for i in 0..n {
        for j in (i + 1)..n {
            q[pair_index(n, i, j)] = 4.0 * f64::from(r[i] * r[j]);
        }
    }
    q
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IsotropyReport {
    pub samples: usize,
    pub mean: Vec<f64>,
    /// Standard error of each mean coordinate.
    pub mean_se: Vec<f64>,
    /// Empirical second-moment matrix `E[q qᵀ]`, row-major `d × d`.
    pub covariance: Vec<f64>,
    /// Standard error of each covariance entry, row-major.
    pub covariance_se: Vec<f64>,
    pub max_inf_norm_sq: f64,
}

impl IsotropyReport {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Empirical moments of the sensing rows over random probes.
///
/// Entries of `q` lie in `{−4, 0, 4}`, so all moments are accumulated as
/// exact integer counts.
pub fn isotropy_moments(n: usize, samples: usize, seed: u64) -> Result<IsotropyReport> {
    if samples < 1000 {
        return Err(Error::param("isotropy check needs at least 1000 samples"));
    }
    if n < 2 {
        return Err(Error::param("isotropy check needs n >= 2"));
    }
    let d = uvec_len(n);
    let mut first = vec![0i64; d];
    let mut second = vec![0i64; d * d];
    let mut nonzero = vec![0i64; d * d];
    let mut max_inf = 0.0f64;
    let mut stream = rng::stream(seed, &[domain::ENSEMBLE]);
    let mut entries: Vec<(usize, i64)> = Vec::with_capacity(d);
    for _ in 0..samples {
        let probe = draw_probe(n, &mut stream)?;
        let r = probe.r();
        entries.clear();
        for i in 0..n {
            if r[i] == 0 {
                continue;
            }
            for j in (i + 1)..n {
                if r[j] != 0 {
                    entries.push((pair_index(n, i, j), i64::from(r[i] * r[j])));
                }
            }
        }
        // Every nonzero entry is ±4.
        if !entries.is_empty() {
            max_inf = max_inf.max(16.0);
        }
        for &(a, sa) in &entries {
            first[a] += sa;
            let row = a * d;
            for &(b, sb) in &entries {
                second[row + b] += sa * sb;
                nonzero[row + b] += 1;
            }
        }
    }
    let ns = samples as f64;
    let mean: Vec<f64> = first.iter().map(|&c| 4.0 * c as f64 / ns).collect();
    let mean_se = (0..d)
        .map(|a| {
            let m2 = 16.0 * nonzero[a * d + a] as f64 / ns;
            ((m2 - mean[a] * mean[a]).max(0.0) / ns).sqrt()
        })
        .collect();
    let covariance: Vec<f64> = second.iter().map(|&c| 16.0 * c as f64 / ns).collect();
    let covariance_se = covariance
        .iter()
        .zip(&nonzero)
        .map(|(&c, &nz)| {
            let m2 = 256.0 * nz as f64 / ns;
            ((m2 - c * c).max(0.0) / ns).sqrt()
        })
        .collect();
    Ok(IsotropyReport {
        samples,
        mean,
        mean_se,
        covariance,
        covariance_se,
        max_inf_norm_sq: max_inf,
    })
}

/// Exact moments `(E q, E q qᵀ, max ‖q‖∞²)` under the uniform distribution
/// on all `4ⁿ` pairs `(a, b)`.
pub fn exhaustive_isotropy_moments(n: usize) -> Result<(Vec<f64>, DMatrix<f64>, f64)> {
    if !(2..=8).contains(&n) {
        return Err(Error::Capacity(format!("exhaustive enumeration supports 2 <= n <= 8, got {n}")));
    }
    let d = uvec_len(n);
    let mut mean = vec![0.0; d];
    let mut second = DMatrix::zeros(d, d);
    let mut max_inf = 0.0f64;
    let total = 1usize << (2 * n);
    for code in 0..total {
        let a: Vec<u8> = (0..n).map(|i| ((code >> i) & 1) as u8).collect();
        let b: Vec<u8> = (0..n).map(|i| ((code >> (n + i)) & 1) as u8).collect();
        let r: Vec<i8> = a.iter().zip(&b).map(|(&x, &y)| y as i8 - x as i8).collect();
        let mut q = vec![0.0; d];
        for i in 0..n {
            for j in (i + 1)..n {
                q[pair_index(n, i, j)] = 4.0 * f64::from(r[i] * r[j]);
            }
        }
        for x in 0..d {
            mean[x] += q[x];
            max_inf = max_inf.max(q[x] * q[x]);
            for y in 0..d {
                second[(x, y)] += q[x] * q[y];
            }
        }
    }
    let w = total as f64;
    mean.iter_mut().for_each(|x| *x /= w);
    second /= w;
    Ok((mean, second, max_inf))
}

/// Row of the phase-measurement system for the coherence `(α, β)`:
/// `[uvec(αβᵀ − βαᵀ), uvec(ααᵀ − ββᵀ)]`, so that
/// `Ω = q · (uvec T, −2 uvec R)`.
pub fn complex_probe_row(alpha: &[i8], beta: &[i8]) -> Result<Vec<f64>> {
    let n = alpha.len();
    if beta.len() != n {
        return Err(Error::dim("complex probe row", n, beta.len()));
    }
    if alpha.iter().chain(beta).any(|x| x.abs() != 1) {
        return Err(Error::param("alpha and beta entries must be ±1"));
    }
    let d = uvec_len(n);
    let mut q = vec![0.0; 2 * d];
    for i in 0..n {
        for j in (i + 1)..n {
            let k = pair_index(n, i, j);
            q[k] = f64::from(alpha[i] * beta[j] - beta[i] * alpha[j]);
            q[d + k] = f64::from(alpha[i] * alpha[j] - beta[i] * beta[j]);
        }
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise_model::uvec;

    #[test]
    fn probe_marginals() {
        let mut s = rng::stream(1, &[]);
        let draws = 100_000;
        let mut zeros = 0;
        let mut plus = 0;
        for _ in 0..draws {
            let r = draw_probe(3, &mut s).unwrap().r();
            zeros += (r[0] == 0) as usize;
            plus += (r[0] == 1) as usize;
        }
        // Rejecting a = b shifts the marginals by O(2⁻ⁿ).
        let p0 = zeros as f64 / draws as f64;
        let p1 = plus as f64 / draws as f64;
        assert!((p0 - 3.0 / 7.0).abs() < 0.01, "{p0}");
        assert!((p1 - 2.0 / 7.0).abs() < 0.01, "{p1}");
    }

    #[test]
    fn single_qubit_probes_are_nonzero() {
        let mut s = rng::stream(2, &[]);
        for _ in 0..50 {
            let r = draw_probe(1, &mut s).unwrap().r();
            assert!(r[0] == 1 || r[0] == -1);
        }
    }

    #[test]
    fn ensemble_deterministic_and_prefix_stable() {
        let e1 = SensingEnsemble::generate(8, 20, 5).unwrap();
        let e2 = SensingEnsemble::generate(8, 20, 5).unwrap();
        let e3 = SensingEnsemble::generate(8, 10, 5).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(e1.truncated(10), e3);
    }

    #[test]
    fn sensing_examples() {
        let ens = SensingEnsemble::generate(4, 6, 0).unwrap();
        assert!(ens.apply_to_matrix(&DMatrix::zeros(4, 4)).unwrap().iter().all(|x| *x == 0.0));

        let model = NoiseModel::random_sparse(5, 3, 4).unwrap();
        let pair = SensingEnsemble::from_probes(5, 0, vec![Probe::pair(5, 1, 3)]).unwrap();
        let v = model.v();
        let expected = 2.0 * (v[(1, 1)] + 2.0 * v[(1, 3)] + v[(3, 3)]);
        assert!((apply_sensing(&model, &pair).unwrap()[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn sensing_matches_double_loop_and_matrix_form() {
        let mut s = rng::stream(3, &[]);
        let b = DMatrix::from_fn(6, 6, |_, _| s.random_range(-1.0..1.0));
        let c = &b * b.transpose();
        let ens = SensingEnsemble::generate(6, 20, 8).unwrap();
        let phi = ens.apply_to_matrix(&c).unwrap();
        let q = ens.offdiag_matrix().unwrap();
        let via_q = q.apply(&nalgebra::DVector::from_vec(uvec(&c)))
            + ens.diag_matrix() * c.diagonal();
        for (j, probe) in ens.probes.iter().enumerate() {
            let r = probe.r();
            let mut direct = 0.0;
            for i in 0..6 {
                for k in 0..6 {
                    direct += c[(i, k)] * f64::from(r[i]) * f64::from(r[k]);
                }
            }
            assert!((phi[j] - 2.0 * direct).abs() < 1e-12);
            assert!((via_q[j] - phi[j]).abs() < 1e-12);
            assert!(phi[j] >= -1e-12);
        }
    }

    #[test]
    fn exact_campaign() {
        let model = NoiseModel::random_sparse(6, 2, 1).unwrap();
        let ens = SensingEnsemble::generate(6, 10, 2).unwrap();
        let a = simulate_campaign(&model, &ens, &NoiseSpec::Exact, 1).unwrap();
        let b = simulate_campaign(&model, &ens, &NoiseSpec::Exact, 99).unwrap();
        assert_eq!(a.g, vec![2.0; 6]);
        assert_eq!(a.h, apply_sensing(&model, &ens).unwrap());
        assert_eq!((a.g, a.h), (b.g, b.h));
    }

    #[test]
    fn gaussian_campaign_noise_norm() {
        let model = NoiseModel::random_sparse(8, 3, 1).unwrap();
        let ens = SensingEnsemble::generate(8, 100, 2).unwrap();
        let exact = apply_sensing(&model, &ens).unwrap();
        let sigma = 0.1;
        let mut ok = 0;
        for seed in 0..100 {
            let c = simulate_campaign(&model, &ens, &NoiseSpec::Gaussian { sigma }, seed).unwrap();
            let norm: f64 = c.h.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            ok += (norm <= 10.0 * sigma * 1.3) as usize;
        }
        assert!(ok >= 95, "{ok}");
    }

    #[test]
    fn shot_campaign_is_schedule_independent() {
        let model = NoiseModel::random_sparse(5, 2, 1).unwrap();
        let ens = SensingEnsemble::generate(5, 12, 2).unwrap();
        let noise = NoiseSpec::Shot {
            delta1: 0.1,
            delta2: 0.1,
            epsilon: 0.05,
            time: TimeSelection::Oracle,
        };
        let a = simulate_campaign(&model, &ens, &noise, 7).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| simulate_campaign(&model, &ens, &noise, 7).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.shots.len(), 5 + 12);
        for (gj, cj) in a.g.iter().zip(model.v().diagonal().iter()) {
            assert!((gj - cj).abs() < 0.5 * cj);
        }
    }

    #[test]
    fn exhaustive_moments_are_isotropic() {
        let (mean, second, max_inf) = exhaustive_isotropy_moments(4).unwrap();
        assert!(mean.iter().all(|x| *x == 0.0));
        assert_eq!(second, DMatrix::identity(6, 6) * 4.0);
        assert_eq!(max_inf, 16.0);
    }

    #[test]
    fn sampled_moments_small() {
        // n = 8 keeps the O(2⁻ⁿ) bias from rejecting a = b well below the
        // sampling error.
        let rep = isotropy_moments(8, 20_000, 3).unwrap();
        let d = rep.dim();
        for a in 0..d {
            assert!(rep.mean[a].abs() <= 5.0 * rep.mean_se[a]);
            for b in 0..d {
                let target = if a == b { 4.0 } else { 0.0 };
                let k = a * d + b;
                assert!((rep.covariance[k] - target).abs() <= 5.0 * rep.covariance_se[k] + 1e-12);
            }
        }
        assert!(rep.max_inf_norm_sq <= 16.0);
    }

    #[test]
    fn complex_row_matches_phase_formula() {
        let mut s = rng::stream(4, &[]);
        let n = 5;
        let t_up: Vec<f64> = (0..uvec_len(n)).map(|_| s.random_range(-1.0..1.0)).collect();
        let r_up: Vec<f64> = (0..uvec_len(n)).map(|_| s.random_range(-1.0..1.0)).collect();
        let mut t = crate::noise_model::uvec_inverse(n, &t_up).unwrap();
        for i in 0..n {
            for j in 0..i {
                t[(i, j)] = -t[(i, j)];
            }
        }
        let r = crate::noise_model::uvec_inverse(n, &r_up).unwrap();
        let model = NoiseModel::new(DMatrix::identity(n, n), t, r).unwrap();
        for _ in 0..20 {
            let p = draw_probe(n, &mut s).unwrap();
            let (alpha, beta) = (p.alpha(), p.beta());
            let q = complex_probe_row(&alpha, &beta).unwrap();
            assert!(q.iter().all(|x| [-2.0, 0.0, 2.0].contains(x)));
            let d = uvec_len(n);
            let pred: f64 = (0..d).map(|k| q[k] * t_up[k] - 2.0 * q[d + k] * r_up[k]).sum();
            let (_, omega) = model.complex_rates(&alpha, &beta).unwrap();
            assert!((pred - omega).abs() < 1e-12);
        }
        let same = complex_probe_row(&[1, -1, 1], &[1, -1, 1]).unwrap();
        assert!(same.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn ensemble_json_roundtrip() {
        let ens = SensingEnsemble::generate(5, 3, 11).unwrap();
        let json = serde_json::to_string(&ens).unwrap();
        assert!(json.contains("\"a\":\""));
        let back: SensingEnsemble = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ens);
        let bad = r#"{"n":2,"m":1,"seed":0,"probes":[{"a":"01","b":"01"}]}"#;
        assert!(serde_json::from_str::<SensingEnsemble>(bad).is_err());
    }
}
