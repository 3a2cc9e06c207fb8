//! State-preparation and measurement errors on small registers, simulated
//! with exact density matrices.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::noise_model::NoiseModel;
use crate::optim::hermitian_eigenvalues;
use crate::rng::{self, domain};
use crate::stats::{linear_fit, mean};

pub type CMatrix = DMatrix<Complex64>;

/// Largest register for which channels are built (the dilation acts on
/// `2n` qubits).
pub const MAX_QUBITS: usize = 6;

const C0: Complex64 = Complex64::new(0.0, 0.0);
const C1: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    n: usize,
    rho: CMatrix,
}

impl DensityMatrix {
    pub fn new(n: usize, rho: CMatrix) -> Result<Self> {
        let dim = 1usize << n;
        if rho.nrows() != dim || rho.ncols() != dim {
            return Err(Error::dim("density matrix", dim, rho.nrows()));
        }
        Ok(Self { n, rho })
    }

    /// `(|a⟩ + |b⟩)(⟨a| + ⟨b|)/2`.
    pub fn ghz(a: &[u8], b: &[u8]) -> Result<Self> {
        let n = a.len();
        if b.len() != n {
            return Err(Error::dim("GHZ bit strings", n, b.len()));
        }
        if a == b {
            return Err(Error::param("GHZ state needs a != b"));
        }
        let (ia, ib) = (bits_to_index(a), bits_to_index(b));
        let mut rho = CMatrix::zeros(1 << n, 1 << n);
        for &x in &[ia, ib] {
            for &y in &[ia, ib] {
                rho[(x, y)] = Complex64::new(0.5, 0.0);
            }
        }
        Ok(Self { n, rho })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.rho
    }

    pub fn trace(&self) -> Complex64 {
        self.rho.trace()
    }

    /// Checks Hermiticity, unit trace and positivity within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let herm = (&self.rho - self.rho.adjoint()).max_abs();
        if herm > tol {
            return Err(Error::param(format!("density matrix not Hermitian ({herm:e})")));
        }
        if (self.trace() - C1).norm() > 1e-9 {
            return Err(Error::param(format!("density matrix trace {}", self.trace())));
        }
        let min = *hermitian_spectrum(&self.rho)?.last().unwrap_or(&0.0);
        if min < -tol {
            return Err(Error::param(format!("density matrix has eigenvalue {min}")));
        }
        Ok(())
    }
}

pub trait MaxAbs {
    /// Largest entry modulus.
    fn max_abs(&self) -> f64;
}

impl MaxAbs for CMatrix {
    fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |acc, z| acc.max(z.norm()))
    }
}

/// Qubit 0 is the most significant bit of the basis index.
pub fn bits_to_index(bits: &[u8]) -> usize {
    bits.iter().fold(0, |acc, &b| (acc << 1) | usize::from(b & 1))
}

pub fn index_to_bits(n: usize, x: usize) -> Vec<u8> {
    (0..n).map(|j| ((x >> (n - 1 - j)) & 1) as u8).collect()
}

fn hermitian_spectrum(m: &CMatrix) -> Result<Vec<f64>> {
    let h = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    hermitian_eigenvalues(&h.map(|z| z.re), &h.map(|z| z.im))
}

/// `Σ |λ_i|` of a Hermitian matrix.
pub fn trace_norm(m: &CMatrix) -> Result<f64> {
    Ok(hermitian_spectrum(m)?.iter().map(|l| l.abs()).sum())
}

/// `max |λ_i|` of a Hermitian matrix.
pub fn operator_norm(m: &CMatrix) -> Result<f64> {
    Ok(hermitian_spectrum(m)?.iter().fold(0.0, |acc, l| acc.max(l.abs())))
}

/// `exp(A)` by scaling and squaring with a Taylor series.
pub fn expm(a: &CMatrix) -> CMatrix {
    let dim = a.nrows();
    let norm1 = (0..dim)
        .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm1 > 0.5 { (norm1 / 0.5).log2().ceil() as u32 } else { 0 };
    let b = a * Complex64::new(0.5f64.powi(squarings as i32), 0.0);
    let mut sum = CMatrix::identity(dim, dim);
    let mut term = CMatrix::identity(dim, dim);
    for k in 1..=30 {
        term = &term * &b * Complex64::new(1.0 / k as f64, 0.0);
        sum += &term;
        if term.max_abs() <= 1e-17 * sum.max_abs() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Kraus operators of `ρ ↦ Tr_anc[U (ρ ⊗ |0⟩⟨0|) U†]`, where the system
/// index is the high half of the dilated index.
fn kraus_from_dilation(u: &CMatrix, dim: usize) -> Vec<CMatrix> {
    (0..dim)
        .map(|k| CMatrix::from_fn(dim, dim, |i, ip| u[(i * dim + k, ip * dim)]))
        .collect()
}

/// Random unitary `exp(iΔH)` with `H = (M + M†)/2` and `M` entries uniform
/// in `[0,1] + i[0,1]`.
fn random_dilation<R: Rng + ?Sized>(dim: usize, delta: f64, rng: &mut R) -> CMatrix {
    let m = CMatrix::from_fn(dim, dim, |_, _| Complex64::new(rng.random::<f64>(), rng.random::<f64>()));
    let h = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
    expm(&(h * Complex64::new(0.0, delta)))
}

#[derive(Debug, Clone)]
pub struct SpamChannelPair {
    pub n: usize,
    pub delta: f64,
    pub seed: u64,
    prep: Vec<CMatrix>,
    meas: Vec<CMatrix>,
}

pub fn random_spam_channels(n: usize, delta: f64, seed: u64) -> Result<SpamChannelPair> {
    if n == 0 {
        return Err(Error::param("n must be positive"));
    }
    if n > MAX_QUBITS {
        return Err(Error::Capacity(format!(
            "SPAM channels need 2n = {} qubits; limit is n <= {MAX_QUBITS}",
            2 * n
        )));
    }
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::param(format!("channel strength must be >= 0, got {delta}")));
    }
    let dim = 1usize << n;
    let big = dim * dim;
    let mut s_prep = rng::stream(seed, &[domain::CHANNEL, 0]);
    let mut s_meas = rng::stream(seed, &[domain::CHANNEL, 1]);
    let u_prep = random_dilation(big, delta, &mut s_prep);
    let u_meas = random_dilation(big, delta, &mut s_meas);
    Ok(SpamChannelPair {
        n,
        delta,
        seed,
        prep: kraus_from_dilation(&u_prep, dim),
        meas: kraus_from_dilation(&u_meas, dim),
    })
}

impl SpamChannelPair {
    fn check(&self, m: &CMatrix) -> Result<()> {
        let dim = 1usize << self.n;
        if m.nrows() != dim || m.ncols() != dim {
            return Err(Error::dim("SPAM channel input", dim, m.nrows()));
        }
        Ok(())
    }

    /// `ℰ_s(ρ) = Σ K ρ K†`.
    pub fn prepare(&self, rho: &CMatrix) -> Result<CMatrix> {
        self.check(rho)?;
        Ok(self.prep.iter().fold(CMatrix::zeros(rho.nrows(), rho.ncols()), |acc, k| {
            acc + k * rho * k.adjoint()
        }))
    }

    /// Effective observable `Σ K† E K` of a measurement of `E` after the
    /// error channel.
    pub fn measure(&self, e: &CMatrix) -> Result<CMatrix> {
        self.check(e)?;
        Ok(self.meas.iter().fold(CMatrix::zeros(e.nrows(), e.ncols()), |acc, k| {
            acc + k.adjoint() * e * k
        }))
    }
}

/// Per-element generator `−Γ_xy + iΩ_xy` of the dephasing dynamics.
#[derive(Debug, Clone)]
pub struct DephasingGenerator {
    n: usize,
    lambda: CMatrix,
}

impl DephasingGenerator {
    pub fn new(model: &NoiseModel) -> Result<Self> {
        let n = model.n();
        if n > MAX_QUBITS * 2 {
            return Err(Error::Capacity(format!("density matrix simulation limited to n <= {}", 2 * MAX_QUBITS)));
        }
        let dim = 1usize << n;
        let bits: Vec<Vec<u8>> = (0..dim).map(|x| index_to_bits(n, x)).collect();
        let mut lambda = CMatrix::zeros(dim, dim);
        for x in 0..dim {
            for y in (x + 1)..dim {
                let (g, o) = model.rates_for_bits(&bits[x], &bits[y])?;
                lambda[(x, y)] = Complex64::new(-g, o);
                lambda[(y, x)] = Complex64::new(-g, -o);
            }
        }
        Ok(Self { n, lambda })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn check(&self, m: &CMatrix) -> Result<()> {
        if m.nrows() != self.lambda.nrows() || m.ncols() != self.lambda.ncols() {
            return Err(Error::dim("dephasing input", self.lambda.nrows(), m.nrows()));
        }
        Ok(())
    }

    pub fn evolve(&self, m: &CMatrix, t: f64) -> Result<CMatrix> {
        self.check(m)?;
        if !(t >= 0.0) {
            return Err(Error::param(format!("evolution time must be >= 0, got {t}")));
        }
        Ok(m.zip_map(&self.lambda, |z, l| z * (l * t).exp()))
    }

    /// `Tr[E ℰ_t(ρ)]`.
    pub fn expectation(&self, e: &CMatrix, rho: &CMatrix, t: f64) -> Result<Complex64> {
        self.check(e)?;
        self.check(rho)?;
        let mut acc = C0;
        for x in 0..rho.nrows() {
            for y in 0..rho.ncols() {
                acc += e[(y, x)] * rho[(x, y)] * (self.lambda[(x, y)] * t).exp();
            }
        }
        Ok(acc)
    }

    /// `d/dt Tr[E ℰ_t(ρ)]`.
    pub fn expectation_rate(&self, e: &CMatrix, rho: &CMatrix, t: f64) -> Result<Complex64> {
        self.check(e)?;
        self.check(rho)?;
        let mut acc = C0;
        for x in 0..rho.nrows() {
            for y in 0..rho.ncols() {
                let l = self.lambda[(x, y)];
                acc += e[(y, x)] * rho[(x, y)] * l * (l * t).exp();
            }
        }
        Ok(acc)
    }
}

/// Multiplies `⟨x|ρ|y⟩` by `exp((−Γ_xy + iΩ_xy) t)`.
pub fn evolve_dephasing(rho: &DensityMatrix, model: &NoiseModel, t: f64) -> Result<DensityMatrix> {
    if rho.n != model.n() {
        return Err(Error::dim("dephasing model", rho.n, model.n()));
    }
    let gen = DephasingGenerator::new(model)?;
    DensityMatrix::new(rho.n, gen.evolve(&rho.rho, t)?)
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !(*t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::param("times must be nonnegative and ascending"));
    }
    Ok(())
}

/// The pieces of a SPAM-affected Ramsey experiment on the coherence `(a, b)`.
pub struct SpamSetup {
    pub gen: DephasingGenerator,
    pub rho0: CMatrix,
    pub e0: CMatrix,
    pub rho_tilde: CMatrix,
    pub e_tilde: CMatrix,
    pub gamma: f64,
    pub omega: f64,
}

impl SpamSetup {
    pub fn new(model: &NoiseModel, channels: &SpamChannelPair, a: &[u8], b: &[u8]) -> Result<Self> {
        if model.n() != channels.n {
            return Err(Error::dim("SPAM channels", model.n(), channels.n));
        }
        let rho0 = DensityMatrix::ghz(a, b)?;
        if rho0.n != model.n() {
            return Err(Error::dim("SPAM probe", model.n(), rho0.n));
        }
        let (gamma, omega) = model.rates_for_bits(a, b)?;
        let rho0 = rho0.rho;
        let e0 = rho0.clone();
        Ok(Self {
            gen: DephasingGenerator::new(model)?,
            rho_tilde: channels.prepare(&rho0)?,
            e_tilde: channels.measure(&e0)?,
            rho0,
            e0,
            gamma,
            omega,
        })
    }

    pub fn delta_rho(&self) -> CMatrix {
        &self.rho_tilde - &self.rho0
    }

    pub fn delta_e(&self) -> CMatrix {
        &self.e_tilde - &self.e0
    }

    /// `P̃(t) = Tr[Ẽ ℰ_t(ρ̃)]`.
    pub fn p_tilde(&self, t: f64) -> Result<f64> {
        Ok(self.gen.expectation(&self.e_tilde, &self.rho_tilde, t)?.re)
    }

    /// `½(1 + e^{−Γt} cos Ωt)`.
    pub fn p_noiseless(&self, t: f64) -> f64 {
        0.5 * (1.0 + (-self.gamma * t).exp() * (self.omega * t).cos())
    }

    /// `R(t) = Tr[δE ℰ_t(δρ)]`.
    pub fn residual(&self, t: f64) -> Result<f64> {
        Ok(self.gen.expectation(&self.delta_e(), &self.delta_rho(), t)?.re)
    }

    /// `Ṙ(t)`, exact.
    pub fn residual_rate(&self, t: f64) -> Result<f64> {
        Ok(self.gen.expectation_rate(&self.delta_e(), &self.delta_rho(), t)?.re)
    }
}

/// Open chain with `c_ii = γ0` and `c_{i,i±1} = γ0/4`.
pub fn nearest_neighbor_model(n: usize, gamma0: f64) -> Result<NoiseModel> {
    if n == 0 {
        return Err(Error::param("need n >= 1"));
    }
    let mut v = DMatrix::from_diagonal_element(n, n, gamma0);
    for i in 0..n - 1 {
        v[(i, i + 1)] = gamma0 / 4.0;
        v[(i + 1, i)] = gamma0 / 4.0;
    }
    NoiseModel::real(v)
}

/// `P̃(t)` at each time.
pub fn spam_decay_curve(
    model: &NoiseModel,
    channels: &SpamChannelPair,
    a: &[u8],
    b: &[u8],
    times: &[f64],
) -> Result<Vec<f64>> {
    check_times(times)?;
    let setup = SpamSetup::new(model, channels, a, b)?;
    times.iter().map(|&t| setup.p_tilde(t)).collect()
}

/// `(ε_s, ε_m) = (‖ℰ_s(ρ0) − ρ0‖_tr, ‖ℰ_m†(E0) − E0‖)`.
pub fn spam_perturbation_norms(channels: &SpamChannelPair, rho0: &CMatrix, e0: &CMatrix) -> Result<(f64, f64)> {
    let eps_s = trace_norm(&(channels.prepare(rho0)? - rho0))?;
    let eps_m = operator_norm(&(channels.measure(e0)? - e0))?;
    Ok((eps_s, eps_m))
}

/// Upper bound `2 ε_m ε_s (n + s)` on `|Ṙ(t)|` for models with entries of
/// magnitude at most 1.
pub fn residual_rate_bound(eps_s: f64, eps_m: f64, n: usize, s: usize) -> f64 {
    2.0 * eps_m * eps_s * (n + s) as f64
}

fn fit_failure(reason: impl Into<String>) -> Error {
    Error::Estimation {
        probe: None,
        reason: reason.into(),
    }
}

/// Mean of the last 10% of the samples (at least one).
pub fn tail_level(values: &[f64]) -> f64 {
    let k = (values.len() / 10).max(1);
    mean(&values[values.len() - k..])
}

/// Rate of `P(t) ≈ P∞ + A e^{−Γt}` by log-linear regression on `t ≤ t_max`,
/// with `P∞` the tail level of the whole series.
pub fn fit_decay_window(times: &[f64], values: &[f64], t_max: f64) -> Result<f64> {
    if times.len() != values.len() {
        return Err(Error::dim("decay fit", times.len(), values.len()));
    }
    if times.is_empty() {
        return Err(fit_failure("no samples"));
    }
    let p_inf = tail_level(values);
    let (x, y): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(values)
        .filter(|(t, v)| **t <= t_max && **v - p_inf > 0.0)
        .map(|(t, v)| (*t, (v - p_inf).ln()))
        .unzip();
    if x.len() < 4 {
        return Err(fit_failure(format!("only {} decaying points in the fit window", x.len())));
    }
    let fit = linear_fit(&x, &y)?;
    if !(fit.slope < 0.0) {
        return Err(fit_failure("signal is not decaying"));
    }
    Ok(-fit.slope)
}

/// [`fit_decay_window`] restricted to `t ≤ 2/Γ̂₀`, where `Γ̂₀` is a first fit
/// over every point well above the tail.
pub fn fit_decay(times: &[f64], values: &[f64]) -> Result<f64> {
    if times.len() != values.len() {
        return Err(Error::dim("decay fit", times.len(), values.len()));
    }
    if times.is_empty() {
        return Err(fit_failure("no samples"));
    }
    let p_inf = tail_level(values);
    let top = values.iter().map(|v| v - p_inf).fold(0.0, f64::max);
    let scale = values.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()));
    // Differences at round-off level are not a decay.
    if !(top > 1e-9 * scale) {
        return Err(fit_failure("signal is not decaying"));
    }
    let t_cut = times
        .iter()
        .zip(values)
        .filter(|(_, v)| **v - p_inf > 1e-3 * top)
        .map(|(t, _)| *t)
        .fold(f64::NEG_INFINITY, f64::max);
    let initial = fit_decay_window(times, values, t_cut)?;
    fit_decay_window(times, values, 2.0 / initial)
}
