//! Choosing a diagonal noise covariance under a trace budget.
//!
//! With equal covariances the relative-entropy bound is driven by
//! `‖Σ^{−1/2}S‖² = Σ_i s_i²/v_i`, where `s = |∇f' − ∇f|` elementwise, while the
//! accuracy loss grows with `Tr(Σ) = Σ_i v_i`. Minimizing the first under
//! `Tr(Σ) = ζ` gives `v_i = ζ s_i / Σ_j s_j` (Lagrange stationarity), with
//! optimal value `(Σ_i s_i)²/ζ`.

use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::SpdMatrix;
use crate::ou::{error_to_opt, exact_state, gaussian_kl, QuadraticProblem};

/// Relative variance floor for coordinates with zero gradient gap.
pub const ZERO_GAP_FLOOR: f64 = 1e-8;

/// Elementwise gradient gap `s = |∇f' − ∇f|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct GradientGap(Vec<f64>);

impl GradientGap {
    pub fn new(s: Vec<f64>) -> Result<Self> {
        if s.is_empty() {
            return Err(invalid("s", "must be nonempty"));
        }
        if let Some(v) = s.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(invalid("s", format!("entries must be finite and nonnegative, got {v}")));
        }
        Ok(GradientGap(s))
    }

    pub fn from_gradients(g: &DVector<f64>, g_prime: &DVector<f64>) -> Result<Self> {
        if g.len() != g_prime.len() {
            return Err(Error::DimensionMismatch {
                expected: g.len(),
                found: g_prime.len(),
            });
        }
        Self::new((g_prime - g).abs().iter().copied().collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl TryFrom<Vec<f64>> for GradientGap {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        GradientGap::new(v)
    }
}

impl From<GradientGap> for Vec<f64> {
    fn from(g: GradientGap) -> Self {
        g.0
    }
}

/// A diagonal covariance with its KL term and accuracy loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub diag_sigma: Vec<f64>,
    pub kl_term: f64,
    pub accuracy_loss: f64,
}

impl TradeoffPoint {
    pub fn evaluate(s: &GradientGap, diag_sigma: Vec<f64>) -> Result<Self> {
        let kl = kl_term(s, &diag_sigma)?;
        let accuracy_loss = diag_sigma.iter().sum();
        Ok(TradeoffPoint {
            diag_sigma,
            kl_term: kl,
            accuracy_loss,
        })
    }
}

/// `Σ_i s_i²/v_i`.
pub fn kl_term(s: &GradientGap, diag_sigma: &[f64]) -> Result<f64> {
    if diag_sigma.len() != s.dim() {
        return Err(Error::DimensionMismatch {
            expected: s.dim(),
            found: diag_sigma.len(),
        });
    }
    if let Some((index, &value)) = diag_sigma.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NonPositiveVariance { index, value });
    }
    Ok(s.0.iter().zip(diag_sigma).map(|(si, vi)| si * si / vi).sum())
}

/// Minimizer of `Σ_i s_i²/v_i` subject to `Σ_i v_i = ζ`. Coordinates with
/// `s_i = 0` get variance `1e−8·ζ`; the rest share the remaining budget in
/// proportion to `s_i`.
pub fn optimal_diag_cov(s: &GradientGap, zeta: f64) -> Result<TradeoffPoint> {
    if !(zeta > 0.0 && zeta.is_finite()) {
        return Err(invalid("zeta", "must be positive and finite"));
    }
    let total: f64 = s.0.iter().sum();
    if total == 0.0 {
        return Err(Error::DegenerateGap);
    }
    let floor = ZERO_GAP_FLOOR * zeta;
    let zeros = s.0.iter().filter(|&&v| v == 0.0).count();
    let budget = zeta - floor * zeros as f64;
    let diag: Vec<f64> = s
        .0
        .iter()
        .map(|&si| if si == 0.0 { floor } else { budget * si / total })
        .collect();
    TradeoffPoint::evaluate(s, diag)
}

/// `v_i = ζ/d`.
pub fn isotropic_point(s: &GradientGap, zeta: f64) -> Result<TradeoffPoint> {
    if !(zeta > 0.0 && zeta.is_finite()) {
        return Err(invalid("zeta", "must be positive and finite"));
    }
    TradeoffPoint::evaluate(s, vec![zeta / s.dim() as f64; s.dim()])
}

/// Rectangular grid over the diagonal of `Σ^{1/2} = diag(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid2 {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub resolution: usize,
}

impl Grid2 {
    pub fn square(min: f64, max: f64, resolution: usize) -> Self {
        Grid2 {
            x_min: min,
            x_max: max,
            y_min: min,
            y_max: max,
            resolution,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, lo, hi) in [("x_min", self.x_min, self.x_max), ("y_min", self.y_min, self.y_max)] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(invalid(name, "ranges must be positive and ordered"));
            }
        }
        if self.resolution < 2 {
            return Err(invalid("resolution", "needs at least two points per axis"));
        }
        Ok(())
    }

    fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    }

    pub fn xs(&self) -> Vec<f64> {
        Self::axis(self.x_min, self.x_max, self.resolution)
    }

    pub fn ys(&self) -> Vec<f64> {
        Self::axis(self.y_min, self.y_max, self.resolution)
    }

    /// Grid points, row-major with `x` as the row index.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let ys = self.ys();
        self.xs()
            .into_iter()
            .flat_map(|x| ys.iter().map(move |&y| (x, y)))
            .collect()
    }
}

/// One cell of [`grid_surface`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurfacePoint {
    pub x: f64,
    pub y: f64,
    pub kl_term: f64,
    pub trace: f64,
}

/// `kl_term` and `Tr(Σ)` for `Σ = diag(x², y²)` over the grid.
pub fn grid_surface(s: &GradientGap, grid: &Grid2) -> Result<Vec<SurfacePoint>> {
    if s.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: s.dim(),
        });
    }
    grid.validate()?;
    grid.points()
        .into_par_iter()
        .map(|(x, y)| {
            let diag = [x * x, y * y];
            Ok(SurfacePoint {
                x,
                y,
                kl_term: kl_term(s, &diag)?,
                trace: diag[0] + diag[1],
            })
        })
        .collect()
}

/// CSV with header `x,y,kl_term,trace`.
pub fn write_surface_csv(points: &[SurfacePoint], mut w: impl Write) -> Result<()> {
    writeln!(w, "x,y,kl_term,trace")?;
    for p in points {
        writeln!(w, "{:.16e},{:.16e},{:.16e},{:.16e}", p.x, p.y, p.kl_term, p.trace)?;
    }
    Ok(())
}

/// One cell of [`quadratic_tradeoff`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadPoint {
    pub x: f64,
    pub y: f64,
    pub exact_kl: f64,
    pub error: f64,
}

fn with_diag_noise(p: &QuadraticProblem, x: f64, y: f64) -> Result<QuadraticProblem> {
    p.with_noise(SpdMatrix::from_diagonal(&[x * x, y * y])?)
}

/// `KL(p_t ‖ p'_t)` and the accuracy loss of `p` at time `t` (or `+∞`) when
/// both problems run with `Σ = diag(x², y²)`.
pub fn quadratic_point(p: &QuadraticProblem, p_prime: &QuadraticProblem, t: f64, x: f64, y: f64) -> Result<QuadPoint> {
    let a = with_diag_noise(p, x, y)?;
    let b = with_diag_noise(p_prime, x, y)?;
    Ok(QuadPoint {
        x,
        y,
        exact_kl: gaussian_kl(&exact_state(&a, t)?, &exact_state(&b, t)?)?,
        error: error_to_opt(&a, t)?,
    })
}

/// [`quadratic_point`] over the grid, row-major.
pub fn quadratic_tradeoff(
    p: &QuadraticProblem,
    p_prime: &QuadraticProblem,
    t: f64,
    grid: &Grid2,
) -> Result<Vec<QuadPoint>> {
    for q in [p, p_prime] {
        if q.dim() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                found: q.dim(),
            });
        }
    }
    grid.validate()?;
    grid.points()
        .into_par_iter()
        .map(|(x, y)| quadratic_point(p, p_prime, t, x, y))
        .collect()
}

/// CSV with header `x,y,exact_kl,error`.
pub fn write_tradeoff_csv(points: &[QuadPoint], mut w: impl Write) -> Result<()> {
    writeln!(w, "x,y,exact_kl,error")?;
    for p in points {
        writeln!(w, "{:.16e},{:.16e},{:.16e},{:.16e}", p.x, p.y, p.exact_kl, p.error)?;
    }
    Ok(())
}

/// Sensitivity of the exact KL to noise along each axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxisSweep {
    /// Index of the axis with the larger curvature.
    pub stiff_axis: usize,
    /// KL along the sweep of the stiff-axis noise level, other axis at `base`.
    pub stiff_sweep: Vec<f64>,
    /// KL along the sweep of the soft-axis noise level, other axis at `base`.
    pub soft_sweep: Vec<f64>,
    /// KL range of the stiff sweep divided by that of the soft sweep.
    pub ratio: f64,
}

/// Sweeps the noise scale of one axis through `levels` while the other axis
/// stays at `base`, for both axes. Mirrored points of the two sweeps have
/// equal trace. Requires a diagonal `BᵀB`.
pub fn axis_sweep(
    p: &QuadraticProblem,
    p_prime: &QuadraticProblem,
    t: f64,
    levels: &[f64],
    base: f64,
) -> Result<AxisSweep> {
    let a = p.btb().as_sym();
    if p.dim() != 2 || !a.is_diagonal() {
        return Err(invalid("p", "axis sweeps need a diagonal two-dimensional BᵀB"));
    }
    if levels.len() < 2 {
        return Err(invalid("levels", "need at least two sweep levels"));
    }
    let stiff_axis = if a.get(0, 0) >= a.get(1, 1) { 0 } else { 1 };
    let sweep = |axis: usize| -> Result<Vec<f64>> {
        levels
            .iter()
            .map(|&l| {
                let (x, y) = if axis == 0 { (l, base) } else { (base, l) };
                Ok(quadratic_point(p, p_prime, t, x, y)?.exact_kl)
            })
            .collect()
    };
    let stiff_sweep = sweep(stiff_axis)?;
    let soft_sweep = sweep(1 - stiff_axis)?;
    let range = |v: &[f64]| {
        let max = v.iter().cloned().fold(f64::MIN, f64::max);
        let min = v.iter().cloned().fold(f64::MAX, f64::min);
        max - min
    };
    let ratio = range(&stiff_sweep) / range(&soft_sweep);
    Ok(AxisSweep {
        stiff_axis,
        stiff_sweep,
        soft_sweep,
        ratio,
    })
}
