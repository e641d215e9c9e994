//! Relative-entropy bounds between two diffusions.
//!
//! For `dx = b dt + Σ^{1/2} dW` with law `p_t` and `dx' = b' dt + Σ'^{1/2} dW`
//! with law `p'_t`, both started from the same law,
//!
//! ```text
//! KL(p_t ‖ p'_t) ≤ ½ ∫₀ᵗ ∫ p_s ‖Σ^{−1/2} Φ(s, x)‖² dx ds,
//! Φ = (Σ' − Σ) ∇log p'_s − (h' − h),      h_i = b_i − Σ_j ∂_j Σ_ij.
//! ```
//!
//! [`mc_kl_bound`] estimates the right-hand side from a simulated ensemble.
//! The remaining functions evaluate closed-form bounds that hold under strong
//! convexity and smoothness of `f`, `f'` with isotropic noise `σ²I`, `σ'²I`.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::SpdMatrix;
use crate::ou::{exact_state, GaussianState, QuadraticProblem};
use crate::sde::{CovarianceSpec, DriftSpec, TrajectoryEnsemble};

/// Time-dependent score `∇log p'_t(x)`.
pub type ScoreField = dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync;

/// Source of `∇log p'_t` for the covariance-mismatch term of `Φ`.
#[derive(Clone)]
pub enum ScoreSpec {
    /// A fixed Gaussian law: `−V'⁻¹(x − m')` at every time.
    Gaussian(GaussianState),
    /// The exact time-`t` law of a quadratic problem.
    GaussianLaw(QuadraticProblem),
    Callable(Arc<ScoreField>),
    /// Only valid when the two covariances coincide.
    Absent,
}

impl std::fmt::Debug for ScoreSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScoreSpec::Gaussian(g) => f.debug_tuple("Gaussian").field(g).finish(),
            ScoreSpec::GaussianLaw(_) => f.write_str("GaussianLaw(..)"),
            ScoreSpec::Callable(_) => f.write_str("Callable(..)"),
            ScoreSpec::Absent => f.write_str("Absent"),
        }
    }
}

impl ScoreSpec {
    pub fn callable(
        score: impl Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        ScoreSpec::Callable(Arc::new(score))
    }

    pub fn eval(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            ScoreSpec::Gaussian(g) => g.score(x),
            ScoreSpec::GaussianLaw(p) => exact_state(p, t)?.score(x),
            ScoreSpec::Callable(f) => Ok(f(t, x)),
            ScoreSpec::Absent => Err(Error::ScoreRequired),
        }
    }
}

/// The two dynamics being compared and the score of the second law.
#[derive(Debug, Clone)]
pub struct PhiField {
    pub drift: DriftSpec,
    pub drift_prime: DriftSpec,
    pub cov: CovarianceSpec,
    pub cov_prime: CovarianceSpec,
    pub score: ScoreSpec,
}

impl PhiField {
    pub fn new(
        drift: DriftSpec,
        drift_prime: DriftSpec,
        cov: CovarianceSpec,
        cov_prime: CovarianceSpec,
        score: ScoreSpec,
    ) -> Result<Self> {
        let d = drift.dim();
        for found in [drift_prime.dim(), cov.dim(), cov_prime.dim()] {
            if found != d {
                return Err(Error::DimensionMismatch { expected: d, found });
            }
        }
        Ok(PhiField {
            drift,
            drift_prime,
            cov,
            cov_prime,
            score,
        })
    }

    /// Same covariance on both sides, no score needed.
    pub fn shared_covariance(drift: DriftSpec, drift_prime: DriftSpec, cov: CovarianceSpec) -> Result<Self> {
        Self::new(drift, drift_prime, cov.clone(), cov, ScoreSpec::Absent)
    }

    pub fn dim(&self) -> usize {
        self.drift.dim()
    }

    /// `Φ(t, x)`.
    pub fn eval(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        let s = self.cov.eval(x)?;
        let s_prime = self.cov_prime.eval(x)?;
        let delta = s_prime.sub(&s);
        let mismatch = if delta.as_matrix().iter().all(|&v| v == 0.0) {
            DVector::zeros(self.dim())
        } else {
            delta.mul_vec(&self.score.eval(t, x)?)
        };
        let h = self.drift.eval(x)? - self.cov.divergence(x)?;
        let h_prime = self.drift_prime.eval(x)? - self.cov_prime.divergence(x)?;
        Ok(mismatch - (h_prime - h))
    }
}

/// Running bound `½∫₀ᵗ E‖Σ^{−1/2}Φ‖² ds` on the recording grid.
#[derive(Debug, Clone, PartialEq)]
pub struct KlBoundCurve {
    pub times: Vec<f64>,
    pub bound: Vec<f64>,
    /// Monte-Carlo standard error of `bound`, accumulated without assuming
    /// independence across times (an upper bound on the true standard error).
    pub std_err: Vec<f64>,
    /// Ensemble mean of `‖Σ^{−1/2}Φ‖²` at each recorded time.
    pub integrand: Vec<f64>,
}

impl KlBoundCurve {
    /// CSV with header `time,bound`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "time,bound")?;
        for (t, b) in self.times.iter().zip(&self.bound) {
            writeln!(w, "{t:.16e},{b:.16e}")?;
        }
        Ok(())
    }
}

/// Monte-Carlo estimate of the time-integrated bound from an ensemble drawn
/// under the first dynamics. The inner integral is the ensemble mean at each
/// recorded time; the outer one is a left-endpoint Riemann sum.
pub fn mc_kl_bound(ensemble: &TrajectoryEnsemble, phi: &PhiField) -> Result<KlBoundCurve> {
    if ensemble.dim() != phi.dim() {
        return Err(Error::DimensionMismatch {
            expected: phi.dim(),
            found: ensemble.dim(),
        });
    }
    let constant = match &phi.cov {
        CovarianceSpec::Constant(c) => Some(SpdMatrix::new(c.cov().clone())?),
        _ => None,
    };
    let times = ensemble.times();
    let m = ensemble.num_paths();
    let mut integrand = Vec::with_capacity(times.len());
    let mut variance = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let values: Vec<f64> = (0..m)
            .into_par_iter()
            .map(|p| {
                let x = ensemble.state_vector(p, k);
                let f = phi.eval(t, &x)?;
                match &constant {
                    Some(s) => Ok(s.inv_quad_form(&f)),
                    None => Ok(SpdMatrix::new(phi.cov.eval(&x)?)?.inv_quad_form(&f)),
                }
            })
            .collect::<Result<_>>()?;
        let mean = values.iter().sum::<f64>() / m as f64;
        let var = if m > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m as f64 - 1.0)
        } else {
            0.0
        };
        integrand.push(mean);
        variance.push(var);
    }
    let mut bound = vec![0.0; times.len()];
    let mut std_err = vec![0.0; times.len()];
    for k in 1..times.len() {
        let dt = times[k] - times[k - 1];
        bound[k] = bound[k - 1] + 0.5 * dt * integrand[k - 1];
        std_err[k] = std_err[k - 1] + 0.5 * dt * (variance[k - 1] / m as f64).sqrt();
    }
    Ok(KlBoundCurve {
        times: times.to_vec(),
        bound,
        std_err,
        integrand,
    })
}

/// Smoothness and convexity constants of `f`, `f'`, isotropic noise scales,
/// the log-Sobolev constant of the initial law and the two minimizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularityParams {
    pub kappa: f64,
    pub kappa_prime: f64,
    #[serde(rename = "L")]
    pub lip: f64,
    #[serde(rename = "L_prime")]
    pub lip_prime: f64,
    pub sigma: f64,
    pub sigma_prime: f64,
    #[serde(rename = "C0")]
    pub c0: f64,
    pub xstar: Vec<f64>,
    pub xstar_prime: Vec<f64>,
}

impl RegularityParams {
    /// All scalar constants equal to one, `C₀ = 2`, minimizers at the origin.
    pub fn unit(dim: usize) -> Self {
        RegularityParams {
            kappa: 1.0,
            kappa_prime: 1.0,
            lip: 1.0,
            lip_prime: 1.0,
            sigma: 1.0,
            sigma_prime: 1.0,
            c0: 2.0,
            xstar: vec![0.0; dim],
            xstar_prime: vec![0.0; dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let scalars: [(&'static str, f64); 7] = [
            ("kappa", self.kappa),
            ("kappa_prime", self.kappa_prime),
            ("L", self.lip),
            ("L_prime", self.lip_prime),
            ("sigma", self.sigma),
            ("sigma_prime", self.sigma_prime),
            ("C0", self.c0),
        ];
        for (name, v) in scalars {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be positive and finite, got {v}")));
            }
        }
        if self.kappa > self.lip {
            return Err(invalid("kappa", "must not exceed L"));
        }
        if self.kappa_prime > self.lip_prime {
            return Err(invalid("kappa_prime", "must not exceed L_prime"));
        }
        if self.xstar.len() != self.xstar_prime.len() {
            return Err(Error::DimensionMismatch {
                expected: self.xstar.len(),
                found: self.xstar_prime.len(),
            });
        }
        Ok(())
    }

    /// `‖x* − x'*‖²`.
    pub fn minimizer_gap_sq(&self) -> f64 {
        self.xstar
            .iter()
            .zip(&self.xstar_prime)
            .map(|(a, b)| (a - b).powi(2))
            .sum()
    }
}

/// `C_t = (2/ρ)(1 − e^{−ρt}) + C₀ e^{−ρt}`.
pub fn lsi_constant(t: f64, rho: f64, c0: f64) -> f64 {
    let decay = (-rho * t).exp();
    2.0 / rho * -(-rho * t).exp_m1() + c0 * decay
}

/// `ρ = σ²κ/2`.
pub fn lsi_rate(sigma: f64, kappa: f64) -> f64 {
    sigma * sigma * kappa / 2.0
}

/// Which transient allowance the closed-form bound carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ClosedVariant {
    /// Uniform in time; the transient `e^{−2κt}` is bounded by 1.
    #[default]
    Uniform,
    /// Long-time limit, where the transient has vanished.
    LongTime,
}

/// Time-uniform bound
/// `(8L'²/σ²){2(L²/L'²+2)(σ²/(2κ)+c)+‖x*−x'*‖²}(4+C₀σ'²κ')/(σ²σ'²κ')`
/// with `c = 1` ([`ClosedVariant::Uniform`]) or `c = 0`
/// ([`ClosedVariant::LongTime`]).
pub fn klbound_closed(p: &RegularityParams, variant: ClosedVariant) -> f64 {
    let transient = match variant {
        ClosedVariant::Uniform => 1.0,
        ClosedVariant::LongTime => 0.0,
    };
    let (s2, sp2) = (p.sigma * p.sigma, p.sigma_prime * p.sigma_prime);
    let lp2 = p.lip_prime * p.lip_prime;
    let brace = 2.0 * (p.lip * p.lip / lp2 + 2.0) * (s2 / (2.0 * p.kappa) + transient)
        + p.minimizer_gap_sq();
    8.0 * lp2 / s2 * brace * (4.0 + p.c0 * sp2 * p.kappa_prime) / (s2 * sp2 * p.kappa_prime)
}

/// Bound between the two Gibbs laws
/// `(L'²/(2κ'σ'⁶)){2(σ'²L²/(σ²L'²)+2)σ²/(2κ)+‖x*−x'*‖²}`.
pub fn klbound_stationary(p: &RegularityParams) -> f64 {
    let (s2, sp2) = (p.sigma * p.sigma, p.sigma_prime * p.sigma_prime);
    let lp2 = p.lip_prime * p.lip_prime;
    let brace = 2.0 * (sp2 * p.lip * p.lip / (s2 * lp2) + 2.0) * s2 / (2.0 * p.kappa)
        + p.minimizer_gap_sq();
    lp2 / (2.0 * p.kappa_prime * sp2 * sp2 * sp2) * brace
}

/// `ξ_t = 2M²L'²{2(L²/(M²L'²)+2)(σ²/(2κ)+e^{−2κt})+‖x*−x'*‖²}`, a bound on
/// `E_{p_t}‖∇f − M∇f'‖²`. `t = +∞` is allowed.
pub fn xi_bound(t: f64, p: &RegularityParams, m: f64) -> f64 {
    let lp2 = p.lip_prime * p.lip_prime;
    let m2 = m * m;
    let transient = (-2.0 * p.kappa * t).exp();
    2.0 * m2
        * lp2
        * (2.0 * (p.lip * p.lip / (m2 * lp2) + 2.0) * (p.sigma * p.sigma / (2.0 * p.kappa) + transient)
            + p.minimizer_gap_sq())
}

/// `e^{−2κt}v0 + Tr(Σ)/(4κ)(1 − e^{−2κt})`, a bound on `½E‖x_t − x*‖²` given
/// `v0 = ½E‖x_0 − x*‖²`.
pub fn convergence_bound(t: f64, kappa: f64, trace_sigma: f64, v0: f64) -> f64 {
    let decay = (-2.0 * kappa * t).exp();
    decay * v0 + trace_sigma / (4.0 * kappa) * -(-2.0 * kappa * t).exp_m1()
}
