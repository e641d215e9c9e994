//! Exact Gaussian laws for Langevin dynamics on a quadratic objective.
//!
//! For `f(x) = ‖Bx − b‖²` the dynamics are taken with drift `−Bᵀ(Bx − b)`,
//! i.e. an Ornstein–Uhlenbeck process
//!
//! ```text
//! dx_t = −(A x_t − Bᵀb) dt + Σ^{1/2} dW_t,      A = BᵀB.
//! ```
//!
//! Starting from `N(x0, V0)` the law at time `t` is Gaussian with
//!
//! ```text
//! m_t = m_∞ + e^{−At}(x0 − m_∞),                       m_∞ = A⁻¹Bᵀb
//! V_t = e^{−At} V0 e^{−At} + ∫₀ᵗ e^{−As} Σ e^{−As} ds.
//! ```
//!
//! The integral is evaluated exactly in the eigenbasis `A = QΛQᵀ`:
//! with `S = QᵀΣQ`, entry `(i, j)` of the rotated integral is
//! `S_ij (1 − e^{−(λ_i+λ_j)t}) / (λ_i + λ_j)`. When `A` and `Σ` commute
//! (detailed balance) this collapses to `½(I − e^{−2At})A⁻¹Σ`, which is what
//! the `*_closed_form` variants evaluate. Composite Simpson quadrature of the
//! same integrals is available in [`quadrature`] as an independent route.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::linalg::{SpdMatrix, SymEigen, SymMatrix};

/// Smallest admissible eigenvalue of `BᵀB`.
pub const MIN_CURVATURE: f64 = 1e-12;

/// Relative commutator tolerance for [`check_reversibility`].
pub const COMMUTE_TOL: f64 = 1e-10;

/// Quadratic objective `‖Bx − b‖²` driven by noise covariance `Σ` from a
/// Gaussian initial law `N(x0, V0)` (`V0 = 0` by default).
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    design: DMatrix<f64>,
    target: DVector<f64>,
    noise: SpdMatrix,
    x0: DVector<f64>,
    v0: SymMatrix,
    btb: SpdMatrix,
    eigen: SymEigen,
    optimum: DVector<f64>,
}

impl QuadraticProblem {
    pub fn new(
        design: DMatrix<f64>,
        target: DVector<f64>,
        noise: SpdMatrix,
        x0: DVector<f64>,
    ) -> Result<Self> {
        let d = design.ncols();
        if target.len() != design.nrows() {
            return Err(Error::DimensionMismatch {
                expected: design.nrows(),
                found: target.len(),
            });
        }
        for found in [noise.dim(), x0.len()] {
            if found != d {
                return Err(Error::DimensionMismatch { expected: d, found });
            }
        }
        let gram = SymMatrix::gram(&design);
        let eigen = gram.eigen();
        if !(eigen.min() > MIN_CURVATURE) {
            return Err(Error::SingularDrift {
                min_eigenvalue: eigen.min(),
            });
        }
        let btb = SpdMatrix::new(gram)?;
        let optimum = btb.solve(&(design.transpose() * &target));
        Ok(QuadraticProblem {
            design,
            target,
            noise,
            x0,
            v0: SymMatrix::zeros(d),
            btb,
            eigen,
            optimum,
        })
    }

    /// Sets a positive-semidefinite initial covariance.
    pub fn with_initial_cov(mut self, v0: SymMatrix) -> Result<Self> {
        if v0.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: v0.dim(),
            });
        }
        let floor = -1e-12 * v0.frobenius_norm().max(1.0);
        if !v0.is_diagonal() && v0.eigen().min() < floor
            || v0.is_diagonal() && v0.diagonal().iter().any(|&v| v < floor)
        {
            return Err(invalid("v0", "initial covariance must be positive semidefinite"));
        }
        self.v0 = v0;
        Ok(self)
    }

    /// Same problem with a different noise covariance.
    pub fn with_noise(&self, noise: SpdMatrix) -> Result<Self> {
        if noise.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: noise.dim(),
            });
        }
        let mut p = self.clone();
        p.noise = noise;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.design.ncols()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn target(&self) -> &DVector<f64> {
        &self.target
    }

    pub fn noise(&self) -> &SpdMatrix {
        &self.noise
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn v0(&self) -> &SymMatrix {
        &self.v0
    }

    /// `A = BᵀB`.
    pub fn btb(&self) -> &SpdMatrix {
        &self.btb
    }

    pub fn btb_eigen(&self) -> &SymEigen {
        &self.eigen
    }

    /// Minimizer `A⁻¹Bᵀb`.
    pub fn optimum(&self) -> &DVector<f64> {
        &self.optimum
    }

    /// Drift `−Bᵀ(Bx − b)`.
    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        -(self.design.transpose() * (&self.design * x - &self.target))
    }

    pub fn is_reversible(&self) -> bool {
        check_reversibility(self.btb.as_sym(), self.noise.as_sym())
    }

    fn propagator(&self, t: f64) -> SymMatrix {
        self.eigen.apply(|l| (-l * t).exp())
    }

    fn mean_at(&self, t: f64) -> DVector<f64> {
        &self.optimum + self.propagator(t).mul_vec(&(&self.x0 - &self.optimum))
    }

    fn initial_part(&self, t: f64) -> SymMatrix {
        SymMatrix::congruence(self.propagator(t).as_matrix(), &self.v0)
    }

    /// `∫₀ᵗ e^{−As} Σ e^{−As} ds` in the eigenbasis of `A`; `t = ∞` allowed.
    fn noise_part(&self, t: f64) -> SymMatrix {
        let s = self.eigen.rotate_in(self.noise.as_sym());
        let lam = &self.eigen.values;
        let n = self.dim();
        let rotated = DMatrix::from_fn(n, n, |i, j| {
            let rate = lam[i] + lam[j];
            let mass = if t.is_infinite() {
                1.0
            } else {
                -(-rate * t).exp_m1()
            };
            s[(i, j)] * mass / rate
        });
        self.eigen.rotate_out(&rotated)
    }

    /// `½(I − e^{−2At})A⁻¹Σ`, valid only when `A` and `Σ` commute.
    fn noise_part_commuting(&self, t: f64) -> SymMatrix {
        let weight = self.eigen.apply(|l| {
            let mass = if t.is_infinite() {
                1.0
            } else {
                -(-2.0 * l * t).exp_m1()
            };
            0.5 * mass / l
        });
        let prod = weight.as_matrix() * self.noise.as_matrix();
        SymMatrix::new((&prod + prod.transpose()) * 0.5).expect("symmetrized product")
    }
}

/// Mean, covariance and time of a Gaussian law. `time` may be `+∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub mean: DVector<f64>,
    pub cov: SymMatrix,
    pub time: f64,
}

impl GaussianState {
    pub fn new(mean: DVector<f64>, cov: SymMatrix, time: f64) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::DimensionMismatch {
                expected: cov.dim(),
                found: mean.len(),
            });
        }
        Ok(GaussianState { mean, cov, time })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Covariance as a strictly positive-definite matrix.
    pub fn spd_cov(&self) -> Result<SpdMatrix> {
        SpdMatrix::new(self.cov.clone())
    }

    /// `∇ log p(x) = −V⁻¹(x − m)`.
    pub fn score(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(-self.spd_cov()?.solve(&(x - &self.mean)))
    }
}

fn check_time(t: f64) -> Result<()> {
    if t.is_nan() || t < 0.0 {
        return Err(invalid("t", format!("time must be nonnegative, got {t}")));
    }
    Ok(())
}

/// True iff `‖AΣ − ΣA‖_F ≤ 1e−10 ‖A‖_F ‖Σ‖_F`.
pub fn check_reversibility(btb: &SymMatrix, sigma: &SymMatrix) -> bool {
    let (a, s) = (btb.as_matrix(), sigma.as_matrix());
    let comm = (a * s - s * a).norm();
    comm <= COMMUTE_TOL * a.norm() * s.norm()
}

/// Law of `x_t`; `t = +∞` gives the invariant law.
pub fn exact_state(p: &QuadraticProblem, t: f64) -> Result<GaussianState> {
    check_time(t)?;
    if t.is_infinite() {
        return invariant_state(p);
    }
    let noise = if p.is_reversible() {
        p.noise_part_commuting(t)
    } else {
        p.noise_part(t)
    };
    let cov = p.initial_part(t).add(&noise);
    GaussianState::new(p.mean_at(t), cov, t)
}

/// Law of `x_t` through `½(I − e^{−2At})A⁻¹Σ`; fails with
/// [`Error::NonCommuting`] unless `A` and `Σ` commute.
pub fn exact_state_closed_form(p: &QuadraticProblem, t: f64) -> Result<GaussianState> {
    check_time(t)?;
    if !p.is_reversible() {
        return Err(Error::NonCommuting);
    }
    let cov = if t.is_infinite() {
        p.noise_part_commuting(t)
    } else {
        p.initial_part(t).add(&p.noise_part_commuting(t))
    };
    let mean = if t.is_infinite() {
        p.optimum.clone()
    } else {
        p.mean_at(t)
    };
    GaussianState::new(mean, cov, t)
}

/// Invariant law `N(A⁻¹Bᵀb, V_∞)` where `A V_∞ + V_∞ A = Σ`.
pub fn invariant_state(p: &QuadraticProblem) -> Result<GaussianState> {
    let cov = if p.is_reversible() {
        p.noise_part_commuting(f64::INFINITY)
    } else {
        p.noise_part(f64::INFINITY)
    };
    GaussianState::new(p.optimum.clone(), cov, f64::INFINITY)
}

/// Invariant law through `½A⁻¹Σ`; fails unless `A` and `Σ` commute.
pub fn invariant_state_closed_form(p: &QuadraticProblem) -> Result<GaussianState> {
    exact_state_closed_form(p, f64::INFINITY)
}

/// Relative entropy `KL(p ‖ q)` between two Gaussians.
pub fn gaussian_kl(p: &GaussianState, q: &GaussianState) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            found: q.dim(),
        });
    }
    let sp = p.spd_cov()?;
    let sq = q.spd_cov()?;
    let d = p.dim();
    let lp = sp.cholesky().as_matrix();
    let lq = sq.cholesky();
    // Tr(Σq⁻¹ Σp) = ‖Lq⁻¹ Lp‖_F²
    let mut trace = 0.0;
    for j in 0..d {
        trace += lq.solve_lower(&lp.column(j).into_owned()).norm_squared();
    }
    let maha = sq.inv_quad_form(&(&q.mean - &p.mean));
    let kl = 0.5 * ((sq.log_det() - sp.log_det()) - d as f64 + trace + maha);
    Ok(kl.max(0.0))
}

/// `E‖x_t − x*‖²` contributed by the noise:
/// `∫₀ᵗ ‖e^{A(u−t)}Σ^{1/2}‖_F² du`, or `½Tr(A⁻¹Σ)` for `t = +∞`.
pub fn error_to_opt(p: &QuadraticProblem, t: f64) -> Result<f64> {
    check_time(t)?;
    let s = p.eigen.rotate_in(p.noise.as_sym());
    Ok(p
        .eigen
        .values
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let mass = if t.is_infinite() {
                1.0
            } else {
                -(-2.0 * l * t).exp_m1()
            };
            s[(i, i)] * mass / (2.0 * l)
        })
        .sum())
}

/// Composite Simpson quadrature of the time integrals above.
pub mod quadrature {
    use super::*;

    /// Default relative convergence target.
    pub const REL_TOL: f64 = 1e-8;

    const START_PANELS: usize = 16;
    const MAX_PANELS: usize = 1 << 22;

    /// Composite Simpson on `[0, t]` with the panel count doubled until two
    /// successive estimates differ by less than `rel_tol` (relative, in the
    /// Frobenius norm).
    pub fn simpson_matrix(
        f: impl Fn(f64) -> DMatrix<f64>,
        t: f64,
        rel_tol: f64,
    ) -> DMatrix<f64> {
        let rule = |n: usize| {
            let h = t / n as f64;
            let mut acc = f(0.0) + f(t);
            for k in 1..n {
                let w = if k % 2 == 1 { 4.0 } else { 2.0 };
                acc += f(k as f64 * h) * w;
            }
            acc * (h / 3.0)
        };
        let mut n = START_PANELS;
        let mut prev = rule(n);
        while n < MAX_PANELS {
            n *= 2;
            let next = rule(n);
            let diff = (&next - &prev).norm();
            if diff <= rel_tol * next.norm().max(f64::MIN_POSITIVE) {
                return next;
            }
            prev = next;
        }
        prev
    }

    /// `V_t` by quadrature of `e^{−A(t−u)} Σ e^{−A(t−u)}` over `u ∈ [0, t]`,
    /// plus the propagated initial covariance.
    pub fn covariance(p: &QuadraticProblem, t: f64, rel_tol: f64) -> Result<SymMatrix> {
        check_time(t)?;
        if t.is_infinite() {
            return Err(invalid("t", "quadrature needs a finite horizon"));
        }
        let a = p.btb().as_sym();
        let sigma = p.noise().as_matrix();
        let integral = simpson_matrix(
            |u| {
                let e = a.exp(-(t - u));
                e.as_matrix() * sigma * e.as_matrix()
            },
            t,
            rel_tol,
        );
        let noise = SymMatrix::new((&integral + integral.transpose()) * 0.5)?;
        Ok(p.initial_part(t).add(&noise))
    }

    /// `∫₀ᵗ ‖e^{A(u−t)}Σ^{1/2}‖_F² du` by quadrature.
    pub fn error_to_opt(p: &QuadraticProblem, t: f64, rel_tol: f64) -> Result<f64> {
        check_time(t)?;
        if t.is_infinite() {
            return Err(invalid("t", "quadrature needs a finite horizon"));
        }
        let a = p.btb().as_sym();
        let root = p.noise().cholesky().as_matrix().clone();
        let v = simpson_matrix(
            |u| {
                let m = a.exp(u - t).as_matrix() * &root;
                DMatrix::from_element(1, 1, m.norm_squared())
            },
            t,
            rel_tol,
        );
        Ok(v[(0, 0)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem_from_btb(
        btb: &[Vec<f64>],
        sigma: &[Vec<f64>],
        target_rhs: &[f64],
        x0: &[f64],
    ) -> QuadraticProblem {
        // B = Lᵀ gives BᵀB = L Lᵀ.
        let a = SpdMatrix::from_rows(btb).unwrap();
        let b_mat = a.cholesky().as_matrix().transpose();
        // choose b so that Bᵀb = target_rhs
        let l = a.cholesky();
        let b = l.solve_lower(&DVector::from_column_slice(target_rhs));
        QuadraticProblem::new(
            b_mat,
            b,
            SpdMatrix::from_rows(sigma).unwrap(),
            DVector::from_column_slice(x0),
        )
        .unwrap()
    }

    fn scalar(b: f64, target: f64, sigma: f64, x0: f64) -> QuadraticProblem {
        QuadraticProblem::new(
            DMatrix::from_element(1, 1, b),
            DVector::from_element(1, target),
            SpdMatrix::from_diagonal(&[sigma]).unwrap(),
            DVector::from_element(1, x0),
        )
        .unwrap()
    }

    #[test]
    fn scalar_exact_state() {
        let p = scalar(1.0, 0.0, 1.0, 1.0);
        let t = std::f64::consts::LN_2 / 2.0;
        let s = exact_state(&p, t).unwrap();
        assert!((s.mean[0] - (-t).exp()).abs() < 1e-15);
        assert!((s.cov.get(0, 0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn time_zero_is_initial_law() {
        let p = scalar(2.0, 1.0, 3.0, 0.7);
        let s = exact_state(&p, 0.0).unwrap();
        assert_eq!(s.mean[0], 0.7);
        assert_eq!(s.cov.get(0, 0), 0.0);
        let v0 = SymMatrix::from_diagonal(&[0.4]);
        let p = p.with_initial_cov(v0.clone()).unwrap();
        assert_eq!(exact_state(&p, 0.0).unwrap().cov, v0);
    }

    #[test]
    fn diagonal_two_dim_closed_form_matches_quadrature() {
        let p = problem_from_btb(
            &[vec![1.0, 0.0], vec![0.0, 4.0]],
            &[vec![2.0, 0.0], vec![0.0, 2.0]],
            &[0.0, 0.0],
            &[1.0, 1.0],
        );
        let s = exact_state(&p, 1.0).unwrap();
        let expect0 = (1.0 - (-2.0f64).exp()) * 2.0 / 2.0;
        let expect1 = (1.0 - (-8.0f64).exp()) * 2.0 / 8.0;
        assert!((s.cov.get(0, 0) - expect0).abs() < 1e-14);
        assert!((s.cov.get(1, 1) - expect1).abs() < 1e-14);
        let q = quadrature::covariance(&p, 1.0, 1e-12).unwrap();
        assert!((q.as_matrix() - s.cov.as_matrix()).norm() < 1e-8);
    }

    #[test]
    fn invariant_identity_design() {
        let p = QuadraticProblem::new(
            DMatrix::identity(3, 3),
            DVector::from_vec(vec![1.0, 2.0, 3.0]),
            SpdMatrix::identity(3),
            DVector::zeros(3),
        )
        .unwrap();
        let s = invariant_state(&p).unwrap();
        assert!((s.mean - DVector::from_vec(vec![1.0, 2.0, 3.0])).norm() < 1e-15);
        assert!((s.cov.as_matrix() - DMatrix::<f64>::identity(3, 3) * 0.5).norm() < 1e-15);
        assert!(s.time.is_infinite());
    }

    #[test]
    fn invariant_diagonal_substitution() {
        let p = problem_from_btb(
            &[vec![2.0, 0.0], vec![0.0, 8.0]],
            &[vec![4.0, 0.0], vec![0.0, 4.0]],
            &[0.0, 0.0],
            &[0.0, 0.0],
        );
        let s = invariant_state_closed_form(&p).unwrap();
        assert!((s.cov.get(0, 0) - 1.0).abs() < 1e-14);
        assert!((s.cov.get(1, 1) - 0.25).abs() < 1e-14);
    }

    #[test]
    fn non_commuting_invariant_solves_lyapunov() {
        let p = problem_from_btb(
            &[vec![2.0, 1.0], vec![1.0, 2.0]],
            &[vec![1.0, 0.0], vec![0.0, 3.0]],
            &[0.3, -0.2],
            &[0.0, 0.0],
        );
        assert!(!p.is_reversible());
        assert_eq!(invariant_state_closed_form(&p), Err(Error::NonCommuting));
        assert_eq!(exact_state_closed_form(&p, 1.0), Err(Error::NonCommuting));
        let s = invariant_state(&p).unwrap();
        let a = p.btb().as_matrix();
        let v = s.cov.as_matrix();
        let resid = a * v + v * a - p.noise().as_matrix();
        assert!(resid.norm() < 1e-8);
        assert!(s.spd_cov().is_ok());
    }

    #[test]
    fn non_commuting_transient_matches_quadrature() {
        let p = problem_from_btb(
            &[vec![2.0, 1.0], vec![1.0, 2.0]],
            &[vec![1.0, 0.0], vec![0.0, 3.0]],
            &[0.0, 0.0],
            &[1.0, -1.0],
        );
        for &t in &[0.1, 0.7, 3.0] {
            let s = exact_state(&p, t).unwrap();
            let q = quadrature::covariance(&p, t, 1e-12).unwrap();
            assert!((q.as_matrix() - s.cov.as_matrix()).norm() <= 1e-8 * s.cov.frobenius_norm());
        }
    }

    #[test]
    fn reversibility_examples() {
        let btb = SymMatrix::from_rows(&[vec![3.0, 1.0], vec![1.0, 5.0]]).unwrap();
        assert!(check_reversibility(&btb, &SymMatrix::scaled_identity(2, 0.3)));
        assert!(check_reversibility(
            &SymMatrix::from_diagonal(&[1.0, 2.0]),
            &SymMatrix::from_diagonal(&[3.0, 4.0])
        ));
        assert!(!check_reversibility(
            &SymMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap(),
            &SymMatrix::from_diagonal(&[1.0, 3.0])
        ));
    }

    #[test]
    fn kl_identity_and_scalar_shift() {
        let a = GaussianState::new(
            DVector::from_vec(vec![0.3, -1.0]),
            SymMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap(),
            1.0,
        )
        .unwrap();
        assert_eq!(gaussian_kl(&a, &a).unwrap(), 0.0);
        let p = GaussianState::new(DVector::from_element(1, 0.0), SymMatrix::identity(1), 0.0).unwrap();
        let q = GaussianState::new(DVector::from_element(1, 1.0), SymMatrix::identity(1), 0.0).unwrap();
        assert!((gaussian_kl(&p, &q).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_rejects_singular_covariance() {
        let p = GaussianState::new(DVector::zeros(2), SymMatrix::zeros(2), 0.0).unwrap();
        let q = GaussianState::new(DVector::zeros(2), SymMatrix::identity(2), 0.0).unwrap();
        assert!(matches!(gaussian_kl(&p, &q), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn error_to_opt_examples() {
        let p = QuadraticProblem::new(
            DMatrix::identity(4, 4),
            DVector::zeros(4),
            SpdMatrix::new(SymMatrix::scaled_identity(4, 0.09)).unwrap(),
            DVector::zeros(4),
        )
        .unwrap();
        assert!((error_to_opt(&p, f64::INFINITY).unwrap() - 4.0 * 0.09 / 2.0).abs() < 1e-15);
        let p = scalar(1.0, 0.0, 1.0, 0.0);
        let e = error_to_opt(&p, 1.0).unwrap();
        assert!((e - (1.0 - (-2.0f64).exp()) / 2.0).abs() < 1e-15);
        assert!((e - 0.43233).abs() < 1e-5);
    }

    #[test]
    fn error_to_opt_quadrature_route_agrees() {
        let p = problem_from_btb(
            &[vec![1.0, 0.0], vec![0.0, 3.0]],
            &[vec![0.5, 0.0], vec![0.0, 2.0]],
            &[0.0, 0.0],
            &[0.0, 0.0],
        );
        for &t in &[0.2, 1.0, 4.0] {
            let closed = error_to_opt(&p, t).unwrap();
            let quad = quadrature::error_to_opt(&p, t, 1e-12).unwrap();
            // ½Tr((I − e^{−2At})A⁻¹Σ)
            let manual = 0.5 * ((1.0 - (-2.0 * t).exp()) * 0.5 + (1.0 - (-6.0 * t).exp()) * 2.0 / 3.0);
            assert!((closed - manual).abs() < 1e-14);
            assert!((quad - closed).abs() <= 1e-8 * closed);
        }
    }

    #[test]
    fn mean_converges_to_optimum() {
        let p = problem_from_btb(
            &[vec![2.0, 1.0], vec![1.0, 2.0]],
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &[1.0, -2.0],
            &[5.0, 5.0],
        );
        let lam_min = p.btb_eigen().min();
        let s = exact_state(&p, 20.0 / lam_min).unwrap();
        assert!((s.mean - p.optimum()).norm() < 1e-6);
    }

    #[test]
    fn singular_design_rejected() {
        let r = QuadraticProblem::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::zeros(1),
            SpdMatrix::identity(2),
            DVector::zeros(2),
        );
        assert!(matches!(r, Err(Error::SingularDrift { .. })));
    }
}
