//! Cyclic Jacobi eigendecomposition and PSD projection.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors as columns, matching `values`.
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.values));
        &self.vectors * d * self.vectors.transpose()
    }
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::dim("symmetric matrix", m.nrows(), m.ncols()));
    }
    let tol = 1e-10 * m.amax().max(f64::MIN_POSITIVE);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > tol {
                return Err(Error::param(format!(
                    "matrix is not symmetric at ({i}, {j}): {} vs {}",
                    m[(i, j)],
                    m[(j, i)]
                )));
            }
        }
    }
    Ok(())
}

/// Eigendecomposition of a real symmetric matrix by cyclic Jacobi rotations.
pub fn sym_eigen(m: &DMatrix<f64>) -> Result<SymEigen> {
    check_symmetric(m)?;
    let n = m.nrows();
    let mut a = (m + m.transpose()) * 0.5;
    let mut v = DMatrix::<f64>::identity(n, n);
    let frob = a.norm();

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= 1e-15 * frob || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // A ← Jᵀ A J, touching rows/columns p and q only.
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymEigen { values, vectors })
}

/// Frobenius-nearest positive semidefinite matrix: negative eigenvalues are
/// truncated to zero.
pub fn psd_project(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = sym_eigen(m)?;
    // Round-off level negatives count as zero, which also makes the
    // projection exactly idempotent.
    let floor = -1e-12 * eig.values.iter().fold(0.0f64, |acc, l| acc.max(l.abs()));
    if eig.values.iter().all(|&l| l >= floor) {
        return Ok(m.clone());
    }
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for (k, &l) in eig.values.iter().enumerate() {
        if l > 0.0 {
            let u = eig.vectors.column(k);
            out += u * u.transpose() * l;
        }
    }
    // Exact symmetry, so that projecting again is a no-op.
    Ok((&out + out.transpose()) * 0.5)
}

/// Eigenvalues (descending) of the Hermitian matrix `re + i·im`.
///
/// Uses the real embedding `[[re, −im], [im, re]]`, whose spectrum repeats
/// each eigenvalue of the Hermitian matrix twice.
pub fn hermitian_eigenvalues(re: &DMatrix<f64>, im: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = re.nrows();
    if re.ncols() != n || im.nrows() != n || im.ncols() != n {
        return Err(Error::dim("hermitian matrix", n, im.nrows()));
    }
    let mut big = DMatrix::zeros(2 * n, 2 * n);
    big.view_mut((0, 0), (n, n)).copy_from(re);
    big.view_mut((n, n), (n, n)).copy_from(re);
    big.view_mut((0, n), (n, n)).copy_from(&(-im));
    big.view_mut((n, 0), (n, n)).copy_from(im);
    let eig = sym_eigen(&big)?;
    Ok(eig.values.iter().step_by(2).copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_symmetric(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        (&a + a.transpose()) * 0.5
    }

    #[test]
    fn diagonal_input() {
        let eig = sym_eigen(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0])).unwrap();
        assert_eq!(eig.values, vec![3.0, 1.0]);
        assert_eq!(eig.vectors.column(0).abs().as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn swap_matrix() {
        let eig = sym_eigen(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        assert!((eig.values[0] - 1.0).abs() < 1e-15);
        assert!((eig.values[1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn random_reconstruction() {
        for seed in 0..5 {
            let m = random_symmetric(8, seed);
            let eig = sym_eigen(&m).unwrap();
            assert!((eig.reconstruct() - &m).norm() <= 1e-10 * m.norm());
            let gram = eig.vectors.transpose() * &eig.vectors;
            assert!((gram - DMatrix::identity(8, 8)).amax() <= 1e-10);
            assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn rejects_non_symmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(sym_eigen(&m).is_err());
    }

    #[test]
    fn projection_truncates_negative_part() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let p = psd_project(&m).unwrap();
        assert_eq!(p, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));

        let psd = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 2.0]);
        assert_eq!(psd_project(&psd).unwrap(), psd);
    }

    #[test]
    fn projection_is_nearest_and_idempotent() {
        for seed in 10..15 {
            let m = random_symmetric(6, seed);
            let p = psd_project(&m).unwrap();
            assert_eq!(psd_project(&p).unwrap(), p);
            let neg: f64 = sym_eigen(&m)
                .unwrap()
                .values
                .iter()
                .filter(|l| **l < 0.0)
                .map(|l| l * l)
                .sum();
            assert!(((&m - &p).norm() - neg.sqrt()).abs() < 1e-10);
            // First-order optimality: the residual M − P is negative
            // semidefinite and orthogonal to P.
            let resid = &m - &p;
            assert!(sym_eigen(&resid).unwrap().values[0] <= 1e-10);
            assert!(resid.dot(&p).abs() <= 1e-10);
            // No random PSD perturbation of P is closer.
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..200 {
                let b = DMatrix::from_fn(6, 2, |_, _| rng.random_range(-0.3..0.3));
                let cand = &p + &b * b.transpose();
                assert!((&m - cand).norm() >= (&m - &p).norm() - 1e-12);
            }
        }
    }

    #[test]
    fn hermitian_embedding() {
        // [[1, -i], [i, 1]] has eigenvalues 2 and 0.
        let re = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let im = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let vals = hermitian_eigenvalues(&re, &im).unwrap();
        assert!((vals[0] - 2.0).abs() < 1e-12 && vals[1].abs() < 1e-12);
    }
}
