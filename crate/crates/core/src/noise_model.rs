//! Correlated dephasing noise model and its exact coherence dynamics.
//!
//! Under the Lindbladian with dephasing operators `Z_j`, coefficient matrix
//! `C = V + iT` and Lamb-shift Hamiltonian `H_s = Σ r_lm Z_l Z_m`, every
//! computational-basis coherence `|a⟩⟨b|` is an eigen-operator:
//! `L(|a⟩⟨b|) = (−Γ_ab + iΩ_ab)|a⟩⟨b|`. This module computes `Γ_ab` and `Ω_ab`
//! directly from the matrices.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::eigen::sym_eigen;
use crate::rng;

/// Default tolerance for the positive-semidefiniteness check.
pub const DEFAULT_TOL_PSD: f64 = 1e-9;
/// Entries with magnitude at or below this are treated as structural zeros.
pub const DEFAULT_TOL_ZERO: f64 = 1e-12;
const TOL_SYMMETRY: f64 = 1e-12;

/// The full noise description of an `n`-qubit register.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    n: usize,
    /// Real part of `C` (symmetric).
    v: DMatrix<f64>,
    /// Imaginary part of `C` (skew-symmetric).
    t: DMatrix<f64>,
    /// Lamb-shift coefficients (symmetric).
    r: DMatrix<f64>,
}

/// Off-diagonal support of `C`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsityProfile {
    pub s: usize,
    pub support: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub min_eigenvalue: f64,
    pub violations: Vec<String>,
    pub sparsity: SparsityProfile,
}

impl NoiseModel {
    pub fn new(v: DMatrix<f64>, t: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let n = v.nrows();
        for (what, m) in [("V", &v), ("T", &t), ("R", &r)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::Dimension {
                    context: match what {
                        "V" => "noise model V",
                        "T" => "noise model T",
                        _ => "noise model R",
                    },
                    expected: n,
                    found: if m.nrows() != n { m.nrows() } else { m.ncols() },
                });
            }
        }
        if n == 0 {
            return Err(Error::param("noise model needs at least one qubit"));
        }
        Ok(Self { n, v, t, r })
    }

    /// A model with real `C = V` and no Lamb shift.
    pub fn real(v: DMatrix<f64>) -> Result<Self> {
        let n = v.nrows();
        Self::new(v, DMatrix::zeros(n, n), DMatrix::zeros(n, n))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn t(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn is_real(&self) -> bool {
        self.t.iter().all(|x| *x == 0.0) && self.r.iter().all(|x| *x == 0.0)
    }

    /// Smallest eigenvalue of the Hermitian matrix `C = V + iT`.
    ///
    /// Computed through the real symmetric embedding `[[V, −T], [T, V]]`,
    /// whose spectrum is that of `C` with every eigenvalue doubled.
    pub fn min_eigenvalue(&self) -> f64 {
        let n = self.n;
        let mut big = DMatrix::zeros(2 * n, 2 * n);
        big.view_mut((0, 0), (n, n)).copy_from(&self.v);
        big.view_mut((n, n), (n, n)).copy_from(&self.v);
        big.view_mut((0, n), (n, n)).copy_from(&(-&self.t));
        big.view_mut((n, 0), (n, n)).copy_from(&self.t);
        // Symmetrize to absorb round-off from file input.
        let sym = (&big + big.transpose()) * 0.5;
        let eig = sym_eigen(&sym).expect("symmetrized matrix is symmetric");
        eig.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sparsity(&self, tol_zero: f64) -> SparsityProfile {
        let mut support = Vec::new();
        for j in 0..self.n {
            for k in (j + 1)..self.n {
                let mag = self.v[(j, k)].hypot(self.t[(j, k)]);
                if mag > tol_zero {
                    support.push((j, k));
                }
            }
        }
        SparsityProfile {
            s: support.len(),
            support,
        }
    }

    pub fn validate(&self, tol_psd: f64) -> ValidationReport {
        let n = self.n;
        let mut violations = Vec::new();
        let scale = |m: &DMatrix<f64>| TOL_SYMMETRY * m.amax().max(1.0);
        for j in 0..n {
            for k in 0..n {
                if (self.v[(j, k)] - self.v[(k, j)]).abs() > scale(&self.v) {
                    violations.push(format!("V not symmetric at ({j}, {k})"));
                }
                if (self.t[(j, k)] + self.t[(k, j)]).abs() > scale(&self.t) {
                    violations.push(format!("T not skew-symmetric at ({j}, {k})"));
                }
                if (self.r[(j, k)] - self.r[(k, j)]).abs() > scale(&self.r) {
                    violations.push(format!("R not symmetric at ({j}, {k})"));
                }
            }
            if self.v[(j, j)] < 0.0 {
                violations.push(format!("negative single-qubit rate c_{j}{j}"));
            }
        }
        let min_eigenvalue = self.min_eigenvalue();
        if min_eigenvalue < -tol_psd {
            violations.push(format!(
                "C not positive semidefinite (min eigenvalue {min_eigenvalue:e})"
            ));
        }
        ValidationReport {
            valid: violations.is_empty(),
            min_eigenvalue,
            violations,
            sparsity: self.sparsity(DEFAULT_TOL_ZERO),
        }
    }

    fn check_len(&self, context: &'static str, len: usize) -> Result<()> {
        if len == self.n {
            Ok(())
        } else {
            Err(Error::dim(context, self.n, len))
        }
    }

    /// `Γ = 2 rᵀ V r` for a probe with `r = b − a`.
    pub fn decay_rate(&self, r: &[i8]) -> Result<f64> {
        self.check_len("decay rate probe", r.len())?;
        if r.iter().any(|x| x.abs() > 1) {
            return Err(Error::param("probe entries must lie in {-1, 0, 1}"));
        }
        Ok(2.0 * quadratic_form(&self.v, r, r))
    }

    /// `(Γ_ab, Ω_ab)` for sign vectors `α = (−1)^a`, `β = (−1)^b`.
    pub fn complex_rates(&self, alpha: &[i8], beta: &[i8]) -> Result<(f64, f64)> {
        self.check_len("complex rates alpha", alpha.len())?;
        self.check_len("complex rates beta", beta.len())?;
        if alpha.iter().chain(beta).any(|x| x.abs() != 1) {
            return Err(Error::param("alpha and beta entries must be ±1"));
        }
        let diff: Vec<i8> = alpha.iter().zip(beta).map(|(a, b)| a - b).collect();
        let gamma = 0.5 * quadratic_form(&self.v, &diff, &diff);
        let omega = -(quadratic_form(&self.r, alpha, alpha) - quadratic_form(&self.r, beta, beta))
            + 0.5 * (quadratic_form(&self.t, alpha, beta) - quadratic_form(&self.t, beta, alpha));
        Ok((gamma, omega))
    }

    /// Rates of the coherence `|a⟩⟨b|` for bit-vectors `a`, `b`.
    pub fn rates_for_bits(&self, a: &[u8], b: &[u8]) -> Result<(f64, f64)> {
        self.complex_rates(&signs(a), &signs(b))
    }

    /// `exp((−Γ_ab + iΩ_ab) t)`, the factor multiplying `⟨a|ρ|b⟩` after time `t`.
    pub fn coherence_factor(&self, a: &[u8], b: &[u8], t: f64) -> Result<Complex64> {
        if !(t >= 0.0) {
            return Err(Error::param(format!("evolution time must be >= 0, got {t}")));
        }
        let (gamma, omega) = self.rates_for_bits(a, b)?;
        Ok(Complex64::new(-gamma * t, omega * t).exp())
    }

    /// Random real model with the chain pattern `c_ii = 2`,
    /// `c_{i,i+1} = c_{i+1,i} = 1/2` for the first `s_pairs` links, followed
    /// by a uniformly random relabeling of the qubits.
    pub fn random_sparse(n: usize, s_pairs: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("n must be positive"));
        }
        if s_pairs > n - 1 {
            return Err(Error::param(format!(
                "chain pattern supports at most n-1 = {} correlated pairs, asked for {s_pairs}",
                n - 1
            )));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng::stream(seed, &[rng::domain::MODEL]));
        let mut v = DMatrix::zeros(n, n);
        for i in 0..n {
            v[(perm[i], perm[i])] = 2.0;
        }
        for i in 0..s_pairs {
            let (p, q) = (perm[i], perm[i + 1]);
            v[(p, q)] = 0.5;
            v[(q, p)] = 0.5;
        }
        Self::real(v)
    }

    /// Serializable sparse-triplet form.
    pub fn to_file(&self) -> ModelFile {
        let n = self.n;
        let collect = |m: &DMatrix<f64>, include_diag: bool| {
            let mut out = Vec::new();
            for i in 0..n {
                for j in i..n {
                    if (i != j || include_diag) && m[(i, j)] != 0.0 {
                        out.push((i, j, m[(i, j)]));
                    }
                }
            }
            out
        };
        ModelFile {
            n,
            real: collect(&self.v, true),
            imag: collect(&self.t, false),
            lamb: collect(&self.r, true),
        }
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        let n = file.n;
        if n == 0 {
            return Err(Error::param("model file has n = 0"));
        }
        let fill = |entries: &[(usize, usize, f64)], skew: bool| -> Result<DMatrix<f64>> {
            let mut m = DMatrix::zeros(n, n);
            for &(i, j, x) in entries {
                if i >= n || j >= n {
                    return Err(Error::param(format!("entry ({i}, {j}) out of range for n = {n}")));
                }
                if i > j {
                    return Err(Error::param(format!(
                        "entry ({i}, {j}) lies below the diagonal; list upper-triangular entries only"
                    )));
                }
                if skew && i == j && x != 0.0 {
                    return Err(Error::param("imaginary part must have zero diagonal"));
                }
                m[(i, j)] = x;
                m[(j, i)] = if skew { -x } else { x };
            }
            Ok(m)
        };
        Self::new(fill(&file.real, false)?, fill(&file.imag, true)?, fill(&file.lamb, false)?)
    }
}

/// On-disk matrix format: upper-triangular (and diagonal) triplets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub n: usize,
    pub real: Vec<(usize, usize, f64)>,
    #[serde(default)]
    pub imag: Vec<(usize, usize, f64)>,
    #[serde(default)]
    pub lamb: Vec<(usize, usize, f64)>,
}

/// `xᵀ M y` for small-integer vectors.
pub(crate) fn quadratic_form(m: &DMatrix<f64>, x: &[i8], y: &[i8]) -> f64 {
    let mut acc = 0.0;
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0 {
            continue;
        }
        let mut row = 0.0;
        for (j, &yj) in y.iter().enumerate() {
            if yj != 0 {
                row += m[(i, j)] * f64::from(yj);
            }
        }
        acc += f64::from(xi) * row;
    }
    acc
}

/// `(−1)^bit` entrywise.
pub fn signs(bits: &[u8]) -> Vec<i8> {
    bits.iter().map(|&b| if b == 0 { 1 } else { -1 }).collect()
}

/// Index of the pair `(i, j)`, `i < j`, in row-major upper-triangular order.
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

/// Inverse of [`pair_index`].
pub fn pair_of_index(n: usize, mut k: usize) -> (usize, usize) {
    for i in 0..n {
        let row = n - i - 1;
        if k < row {
            return (i, i + 1 + k);
        }
        k -= row;
    }
    panic!("pair index out of range");
}

pub fn uvec_len(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Strictly upper-triangular entries `(M_ij)_{i<j}` in row-major order.
pub fn uvec(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(uvec_len(n));
    for i in 0..n {
        for j in (i + 1)..n {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Symmetric zero-diagonal matrix with the given upper triangle.
pub fn uvec_inverse(n: usize, x: &[f64]) -> Result<DMatrix<f64>> {
    if x.len() != uvec_len(n) {
        return Err(Error::dim("uvec inverse", uvec_len(n), x.len()));
    }
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            m[(i, j)] = x[k];
            m[(j, i)] = x[k];
            k += 1;
        }
    }
    Ok(m)
}

pub fn diag_of(m: &DMatrix<f64>) -> Vec<f64> {
    m.diagonal().iter().copied().collect()
}

/// `M − diag(diag(M))`.
pub fn off_diag_of(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    out.fill_diagonal(0.0);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::assert_close;

    mod approx_eq {
        macro_rules! assert_close {
            ($a:expr, $b:expr, $tol:expr) => {{
                let (a, b): (f64, f64) = ($a, $b);
                assert!((a - b).abs() <= $tol, "{} vs {} (tol {})", a, b, $tol);
            }};
        }
        pub(crate) use assert_close;
    }

    fn m2(a: f64, b: f64, c: f64, d: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[a, b, c, d])
    }

    #[test]
    fn validate_diagonal_model() {
        let model = NoiseModel::real(DMatrix::identity(2, 2) * 2.0).unwrap();
        let report = model.validate(DEFAULT_TOL_PSD);
        assert!(report.valid);
        assert_close!(report.min_eigenvalue, 2.0, 1e-12);
        assert_eq!(report.sparsity.s, 0);
    }

    #[test]
    fn validate_base_pattern() {
        let model = NoiseModel::real(m2(2.0, 0.5, 0.5, 2.0)).unwrap();
        let report = model.validate(DEFAULT_TOL_PSD);
        assert!(report.valid);
        assert_eq!(report.sparsity.s, 1);
        assert_eq!(report.sparsity.support, vec![(0, 1)]);
    }

    #[test]
    fn validate_rejects_indefinite() {
        let model = NoiseModel::real(m2(0.0, 1.0, 1.0, 0.0)).unwrap();
        let report = model.validate(DEFAULT_TOL_PSD);
        assert!(!report.valid);
        assert_close!(report.min_eigenvalue, -1.0, 1e-12);
    }

    #[test]
    fn validate_flags_asymmetry() {
        let model = NoiseModel::real(m2(1.0, 0.2, 0.1, 1.0)).unwrap();
        let report = model.validate(DEFAULT_TOL_PSD);
        assert!(!report.valid);
        assert!(report.violations.iter().any(|v| v.contains("V not symmetric")));
    }

    #[test]
    fn dimension_mismatch_is_structural() {
        let err = NoiseModel::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(3, 3),
            DMatrix::zeros(2, 2),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn decay_rate_examples() {
        let model = NoiseModel::real(m2(2.0, 0.5, 0.5, 2.0)).unwrap();
        assert_close!(model.decay_rate(&[1, -1]).unwrap(), 6.0, 1e-12);
        assert_eq!(model.decay_rate(&[0, 0]).unwrap(), 0.0);
        assert_close!(model.decay_rate(&[0, 1]).unwrap(), 4.0, 1e-12);
        assert!(model.decay_rate(&[1]).is_err());
        assert!(model.decay_rate(&[2, 0]).is_err());
    }

    #[test]
    fn complex_rates_hand_example() {
        // T = [[0, t], [-t, 0]], alpha = (1, 1), beta = (1, -1).
        // αᵀTβ = α0 t β1 − α1 t β0 = −t − t = −2t, βᵀTα = β0 t α1 − β1 t α0 = 2t,
        // so Ω = ½(−2t − 2t) = −2t.
        let t = 0.3;
        let model = NoiseModel::new(
            m2(1.0, 0.0, 0.0, 1.0),
            m2(0.0, t, -t, 0.0),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        let (gamma, omega) = model.complex_rates(&[1, 1], &[1, -1]).unwrap();
        assert_close!(omega, -2.0 * t, 1e-15);
        // Γ = ½ (0, 2) V (0, 2)ᵀ = 2 v_11.
        assert_close!(gamma, 2.0, 1e-15);

        let factor = model.coherence_factor(&[0, 0], &[0, 1], 1.0).unwrap();
        let expected = Complex64::new((-gamma).exp() * omega.cos(), (-gamma).exp() * omega.sin());
        assert_close!((factor - expected).norm(), 0.0, 1e-15);
    }

    #[test]
    fn complex_rates_identical_states_do_not_decay() {
        let model = NoiseModel::random_sparse(5, 3, 1).unwrap();
        let (gamma, omega) = model.complex_rates(&[1, -1, 1, 1, -1], &[1, -1, 1, 1, -1]).unwrap();
        assert_eq!(gamma, 0.0);
        assert_eq!(omega, 0.0);
    }

    #[test]
    fn coherence_factor_examples() {
        let model = NoiseModel::real(DMatrix::identity(1, 1) * 0.5).unwrap();
        // Γ = 2 c_00 = 1 for the single-qubit probe.
        let at_zero = model.coherence_factor(&[0], &[1], 0.0).unwrap();
        assert_eq!(at_zero, Complex64::new(1.0, 0.0));
        let half = model.coherence_factor(&[0], &[1], std::f64::consts::LN_2).unwrap();
        assert_close!(half.re, 0.5, 1e-15);
        assert_close!(half.im, 0.0, 1e-15);
        assert!(model.coherence_factor(&[0], &[1], -1.0).is_err());
    }

    #[test]
    fn random_sparse_examples() {
        let zero = NoiseModel::random_sparse(4, 0, 3).unwrap();
        assert_eq!(zero.v(), &(DMatrix::identity(4, 4) * 2.0));

        let big = NoiseModel::random_sparse(64, 12, 11).unwrap();
        let report = big.validate(DEFAULT_TOL_PSD);
        assert!(report.valid);
        assert_eq!(report.sparsity.s, 12);
        let off_nonzeros = off_diag_of(big.v()).iter().filter(|x| **x != 0.0).count();
        assert_eq!(off_nonzeros, 24);

        assert_eq!(
            NoiseModel::random_sparse(10, 4, 99).unwrap(),
            NoiseModel::random_sparse(10, 4, 99).unwrap()
        );
        assert!(NoiseModel::random_sparse(4, 4, 0).is_err());
    }

    #[test]
    fn uvec_examples() {
        assert!(uvec(&DMatrix::identity(3, 3)).iter().all(|x| *x == 0.0));
        assert_eq!(uvec(&m2(0.0, 3.0, 3.0, 0.0)), vec![3.0]);
        assert!(uvec_inverse(3, &[1.0]).is_err());
    }

    #[test]
    fn pair_index_roundtrip() {
        let n = 7;
        let mut k = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                assert_eq!(pair_index(n, i, j), k);
                assert_eq!(pair_of_index(n, k), (i, j));
                k += 1;
            }
        }
    }

    #[test]
    fn model_file_roundtrip() {
        let t = 0.25;
        let model = NoiseModel::new(
            m2(2.0, 0.5, 0.5, 1.0),
            m2(0.0, t, -t, 0.0),
            m2(0.1, 0.2, 0.2, 0.0),
        )
        .unwrap();
        let json = serde_json::to_string(&model.to_file()).unwrap();
        let back: ModelFile = serde_json::from_str(&json).unwrap();
        assert_eq!(NoiseModel::from_file(&back).unwrap(), model);

        let bad = ModelFile {
            n: 2,
            real: vec![(1, 0, 1.0)],
            imag: vec![],
            lamb: vec![],
        };
        assert!(NoiseModel::from_file(&bad).is_err());
    }
}
