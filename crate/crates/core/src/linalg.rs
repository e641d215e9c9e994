//! Dense symmetric and positive-definite matrices.
//!
//! Every covariance in the crate is held either as a [`SymMatrix`] (symmetric,
//! any definiteness) or as an [`SpdMatrix`] (symmetric positive definite, with
//! its lower Cholesky factor cached). The Cholesky factor doubles as the
//! matrix square root: `Σ^{1/2}` always means `L` with `Σ = L Lᵀ`.
//!
//! Functions of symmetric matrices (exponential, fractional powers, clamping)
//! all go through one symmetric eigendecomposition, `Q f(Λ) Qᵀ`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for the symmetry check on construction.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Pivots at or below this value reject a Cholesky factorization.
pub const PIVOT_TOL: f64 = 1e-14;

/// A square symmetric matrix. Definiteness is not required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Checks squareness and symmetry, then stores `(m + mᵀ)/2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        let n = m.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (m[(i, j)], m[(j, i)]);
                let gap = (a - b).abs();
                if !(gap <= SYMMETRY_TOL * a.abs().max(b.abs()).max(1.0)) {
                    return Err(Error::NotSymmetric { i, j, gap });
                }
            }
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(SymMatrix(sym))
    }

    /// Builds from row-major nested vectors.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        for r in rows {
            if r.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: r.len(),
                });
            }
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    /// Scalar multiple of the identity.
    pub fn scaled_identity(n: usize, s: f64) -> Self {
        SymMatrix(DMatrix::identity(n, n) * s)
    }

    /// `Aᵀ A` for any (not necessarily square) `A`.
    pub fn gram(a: &DMatrix<f64>) -> Self {
        let g = a.transpose() * a;
        SymMatrix((&g + g.transpose()) * 0.5)
    }

    /// `A S Aᵀ` for symmetric `S`; symmetrized to absorb round-off.
    pub fn congruence(a: &DMatrix<f64>, s: &SymMatrix) -> Self {
        let g = a * &s.0 * a.transpose();
        SymMatrix((&g + g.transpose()) * 0.5)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn diagonal(&self) -> DVector<f64> {
        self.0.diagonal()
    }

    pub fn is_diagonal(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| i == j || self.0[(i, j)] == 0.0))
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    /// Largest absolute eigenvalue.
    pub fn spectral_norm(&self) -> f64 {
        if self.is_diagonal() {
            return self.0.diagonal().iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        }
        self.eigen()
            .values
            .iter()
            .fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    pub fn eigen(&self) -> SymEigen {
        SymEigen::new(self)
    }

    /// `e^{scale·m}`.
    pub fn exp(&self, scale: f64) -> SymMatrix {
        if self.is_diagonal() {
            return SymMatrix(DMatrix::from_diagonal(
                &self.0.diagonal().map(|v| (scale * v).exp()),
            ));
        }
        self.eigen().apply(|v| (scale * v).exp())
    }

    /// Applies `f` to every eigenvalue.
    pub fn map_eigenvalues(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        if self.is_diagonal() {
            return SymMatrix(DMatrix::from_diagonal(&self.0.diagonal().map(f)));
        }
        self.eigen().apply(f)
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix(&self.0 * s)
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &other.0)
    }

    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.0 * v
    }

    /// Returns rows as nested vectors.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..n)
            .map(|i| (0..n).map(|j| self.0[(i, j)]).collect())
            .collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        SymMatrix::from_rows(&rows)
    }
}

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(m: SymMatrix) -> Self {
        m.to_rows()
    }
}

/// Symmetric eigendecomposition `m = Q diag(values) Qᵀ`, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    pub fn new(m: &SymMatrix) -> Self {
        let n = m.dim();
        let eig = SymmetricEigen::new(m.0.clone());
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = DVector::from_fn(n, |i, _| eig.eigenvalues[order[i]]);
        let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
        SymEigen { values, vectors }
    }

    /// `Q f(Λ) Qᵀ`.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let d = self.values.map(f);
        let scaled = DMatrix::from_fn(self.vectors.nrows(), self.vectors.ncols(), |r, c| {
            self.vectors[(r, c)] * d[c]
        });
        let m = scaled * self.vectors.transpose();
        SymMatrix((&m + m.transpose()) * 0.5)
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// `Qᵀ S Q`: `s` expressed in this eigenbasis.
    pub fn rotate_in(&self, s: &SymMatrix) -> DMatrix<f64> {
        self.vectors.transpose() * s.as_matrix() * &self.vectors
    }

    /// `Q M Qᵀ`, symmetrized.
    pub fn rotate_out(&self, m: &DMatrix<f64>) -> SymMatrix {
        let r = &self.vectors * m * self.vectors.transpose();
        SymMatrix((&r + r.transpose()) * 0.5)
    }
}

/// Lower-triangular Cholesky factor with positive diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular(DMatrix<f64>);

impl LowerTriangular {
    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// `L v`.
    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        DVector::from_fn(n, |i, _| (0..=i).map(|k| self.0[(i, k)] * v[k]).sum())
    }

    /// Solves `L y = b` by forward substitution.
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut y = DVector::zeros(n);
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.0[(i, k)] * y[k];
            }
            y[i] = s / self.0[(i, i)];
        }
        y
    }

    /// Solves `Lᵀ x = y` by back substitution.
    pub fn solve_upper(&self, y: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut x = DVector::zeros(n);
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.0[(k, i)] * x[k];
            }
            x[i] = s / self.0[(i, i)];
        }
        x
    }

    /// `L Lᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.0 * self.0.transpose()
    }
}

/// Cholesky–Banachiewicz factorization `m = L Lᵀ`.
pub fn cholesky(m: &SymMatrix) -> Result<LowerTriangular> {
    let n = m.dim();
    let a = m.as_matrix();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if !(s > PIVOT_TOL) {
                    return Err(Error::NotPositiveDefinite { index: i, pivot: s });
                }
                l[(i, i)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Ok(LowerTriangular(l))
}

/// A symmetric positive-definite matrix with its Cholesky factor cached.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    m: SymMatrix,
    chol: LowerTriangular,
}

impl SpdMatrix {
    pub fn new(m: SymMatrix) -> Result<Self> {
        let chol = cholesky(&m)?;
        Ok(SpdMatrix { m, chol })
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        Self::new(SymMatrix::new(m)?)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(SymMatrix::from_rows(rows)?)
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(SymMatrix::from_diagonal(diag))
    }

    pub fn identity(n: usize) -> Self {
        Self::new(SymMatrix::identity(n)).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.m.dim()
    }

    pub fn as_sym(&self) -> &SymMatrix {
        &self.m
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        self.m.as_matrix()
    }

    pub fn cholesky(&self) -> &LowerTriangular {
        &self.chol
    }

    /// Solves `m x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve_upper(&self.chol.solve_lower(b))
    }

    /// `vᵀ m⁻¹ v = ‖L⁻¹ v‖²`.
    pub fn inv_quad_form(&self, v: &DVector<f64>) -> f64 {
        self.chol.solve_lower(v).norm_squared()
    }

    pub fn inverse(&self) -> SpdMatrix {
        let n = self.dim();
        let mut inv = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            inv.set_column(j, &self.solve(&e));
        }
        let sym = SymMatrix((&inv + inv.transpose()) * 0.5);
        SpdMatrix::new(sym).expect("inverse of an SPD matrix is SPD")
    }

    /// `2 Σ log L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim())
            .map(|i| self.chol.0[(i, i)].ln())
            .sum::<f64>()
    }
}

/// `e^{scale·m}` through the symmetric eigendecomposition.
pub fn sym_exp(m: &SymMatrix, scale: f64) -> SymMatrix {
    m.exp(scale)
}

pub fn inverse(m: &SpdMatrix) -> SpdMatrix {
    m.inverse()
}

pub fn log_det(m: &SpdMatrix) -> f64 {
    m.log_det()
}

pub fn trace(m: &SymMatrix) -> f64 {
    m.trace()
}

pub fn spectral_norm(m: &SymMatrix) -> f64 {
    m.spectral_norm()
}

/// Square root of a positive-semidefinite matrix: the Cholesky factor when
/// it exists, otherwise the symmetric root with negative eigenvalues clamped
/// to zero.
pub fn psd_sqrt(m: &SymMatrix) -> DMatrix<f64> {
    match cholesky(m) {
        Ok(l) => l.0,
        Err(_) => m.map_eigenvalues(|v| v.max(0.0).sqrt()).into_matrix(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn cholesky_identity_and_diagonal() {
        let l = cholesky(&SymMatrix::identity(3)).unwrap();
        assert_eq!(l.as_matrix(), &DMatrix::identity(3, 3));
        let l = cholesky(&SymMatrix::from_diagonal(&[4.0, 9.0])).unwrap();
        assert_eq!(l.as_matrix(), &DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0])));
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = SymMatrix::from_diagonal(&[1.0, -1.0]);
        assert!(matches!(
            cholesky(&m),
            Err(Error::NotPositiveDefinite { index: 1, .. })
        ));
        assert!(cholesky(&SymMatrix::zeros(2)).is_err());
    }

    #[test]
    fn cholesky_reconstructs_random_spd() {
        let a = DMatrix::from_fn(4, 4, |i, j| ((i * 7 + j * 3) as f64).sin());
        let m = SymMatrix::gram(&a).add(&SymMatrix::identity(4));
        let l = cholesky(&m).unwrap();
        assert!(rel_frob(&l.reconstruct(), m.as_matrix()) <= 1e-10);
        for i in 0..4 {
            assert!(l.as_matrix()[(i, i)] > 0.0);
            for j in (i + 1)..4 {
                assert_eq!(l.as_matrix()[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn symmetry_is_checked_then_enforced() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(SymMatrix::new(bad), Err(Error::NotSymmetric { .. })));
        let tiny = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5 + 1e-15, 1.0]);
        let s = SymMatrix::new(tiny).unwrap();
        assert_eq!(s.get(0, 1), s.get(1, 0));
    }

    #[test]
    fn sym_exp_trivial_cases() {
        assert_eq!(sym_exp(&SymMatrix::zeros(2), 1.0), SymMatrix::identity(2));
        let e = sym_exp(&SymMatrix::from_diagonal(&[1.0, 2.0]), 1.0);
        assert!((e.get(0, 0) - 1f64.exp()).abs() < 1e-15);
        assert!((e.get(1, 1) - 2f64.exp()).abs() < 1e-14);
        assert_eq!(e.get(0, 1), 0.0);
    }

    #[test]
    fn sym_exp_inverse_pair() {
        let m = SymMatrix::from_rows(&[
            vec![1.0, 0.4, -0.3],
            vec![0.4, -0.5, 0.2],
            vec![-0.3, 0.2, 0.7],
        ])
        .unwrap();
        let prod = sym_exp(&m, 2.5).as_matrix() * sym_exp(&m, -2.5).as_matrix();
        assert!((prod - DMatrix::<f64>::identity(3, 3)).norm() < 1e-9);
    }

    #[test]
    fn inverse_log_det_spectral_norm() {
        let m = SpdMatrix::from_diagonal(&[2.0, 4.0]).unwrap();
        let inv = inverse(&m);
        assert!((inv.as_matrix()[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((inv.as_matrix()[(1, 1)] - 0.25).abs() < 1e-15);
        assert_eq!(log_det(&SpdMatrix::identity(5)), 0.0);
        assert_eq!(spectral_norm(&SymMatrix::from_diagonal(&[1.0, -3.0, 2.0])), 3.0);
    }

    #[test]
    fn log_det_matches_eigen_product() {
        let a = DMatrix::from_fn(5, 5, |i, j| ((i + 2 * j) as f64 * 0.37).cos());
        let m = SpdMatrix::new(SymMatrix::gram(&a).add(&SymMatrix::scaled_identity(5, 0.5))).unwrap();
        let by_eig: f64 = m.as_sym().eigen().values.iter().map(|v| v.ln()).sum();
        assert!((m.log_det() - by_eig).abs() < 1e-9);
        let prod = m.inverse().as_matrix() * m.as_matrix();
        assert!((prod - DMatrix::<f64>::identity(5, 5)).norm() < 1e-9);
    }

    #[test]
    fn psd_sqrt_handles_singular() {
        let z = psd_sqrt(&SymMatrix::zeros(3));
        assert_eq!(z, DMatrix::zeros(3, 3));
        let r = psd_sqrt(&SymMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap());
        assert!((&r * r.transpose() - DMatrix::from_element(2, 2, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn serde_round_trip_rows() {
        let m = SymMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, "[[2.0,1.0],[1.0,3.0]]");
        let back: SymMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }
}
