//! Euler–Maruyama ensembles for `dx = b(x) dt + Σ^{1/2}(x) dW`.
//!
//! Every path `p` draws its Gaussian increments from the counter-based stream
//! `(seed, p)`, with step `k` occupying block `k` of that stream. Paths run in
//! parallel and are assembled in index order, so the result is independent of
//! the worker count. Two ensembles built from the same seed share their
//! increments path by path, which is what [`paired_simulate`] relies on.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{psd_sqrt, SpdMatrix, SymMatrix};
use crate::ou::QuadraticProblem;
use crate::rng::NoiseStream;

/// Default eigenvalue floor applied to the minibatch covariance.
pub const DEFAULT_PSD_FLOOR: f64 = 1e-10;

/// A map `ℝ^d → ℝ^d`.
pub type VectorField = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;

/// A sum-structured loss `f(x) = Σ_l f_l(x)` that exposes per-example
/// gradients.
pub trait GradientModel: Send + Sync {
    /// Parameter dimension.
    fn dim(&self) -> usize;

    /// Number of summands `N`.
    fn num_examples(&self) -> usize;

    /// `N × d` matrix whose row `l` is `∇f_l(x)`.
    fn per_example_gradients(&self, x: &DVector<f64>) -> DMatrix<f64>;

    /// `∇f(x) = Σ_l ∇f_l(x)`.
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.per_example_gradients(x).row_sum().transpose()
    }
}

/// `f(x) = ½‖Bx − b‖² = Σ_l ½(B_l x − b_l)²`, one summand per row of `B`.
///
/// The drift `−∇f` coincides with that of [`QuadraticProblem`].
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub design: DMatrix<f64>,
    pub target: DVector<f64>,
}

impl LeastSquares {
    pub fn new(design: DMatrix<f64>, target: DVector<f64>) -> Result<Self> {
        if design.nrows() != target.len() {
            return Err(Error::DimensionMismatch {
                expected: design.nrows(),
                found: target.len(),
            });
        }
        Ok(LeastSquares { design, target })
    }
}

impl GradientModel for LeastSquares {
    fn dim(&self) -> usize {
        self.design.ncols()
    }

    fn num_examples(&self) -> usize {
        self.design.nrows()
    }

    fn per_example_gradients(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let resid = &self.design * x - &self.target;
        let mut g = self.design.clone();
        for (l, r) in resid.iter().enumerate() {
            g.row_mut(l).scale_mut(*r);
        }
        g
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.design.transpose() * (&self.design * x - &self.target)
    }
}

/// Drift `b(x)`.
#[derive(Clone)]
pub enum DriftSpec {
    /// `−Bᵀ(Bx − b)`.
    Quadratic {
        design: DMatrix<f64>,
        target: DVector<f64>,
    },
    Callable {
        dim: usize,
        field: Arc<VectorField>,
    },
    /// `−∇f(x, D)`.
    DatasetGradient(Arc<dyn GradientModel>),
}

impl fmt::Debug for DriftSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DriftSpec::Quadratic { design, target } => f
                .debug_struct("Quadratic")
                .field("design", design)
                .field("target", target)
                .finish(),
            DriftSpec::Callable { dim, .. } => {
                f.debug_struct("Callable").field("dim", dim).finish_non_exhaustive()
            }
            DriftSpec::DatasetGradient(m) => f
                .debug_struct("DatasetGradient")
                .field("dim", &m.dim())
                .field("examples", &m.num_examples())
                .finish(),
        }
    }
}

impl DriftSpec {
    pub fn quadratic(problem: &QuadraticProblem) -> Self {
        DriftSpec::Quadratic {
            design: problem.design().clone(),
            target: problem.target().clone(),
        }
    }

    pub fn callable(
        dim: usize,
        field: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        DriftSpec::Callable {
            dim,
            field: Arc::new(field),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DriftSpec::Quadratic { design, .. } => design.ncols(),
            DriftSpec::Callable { dim, .. } => *dim,
            DriftSpec::DatasetGradient(m) => m.dim(),
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let out = match self {
            DriftSpec::Quadratic { design, target } => -(design.transpose() * (design * x - target)),
            DriftSpec::Callable { field, .. } => field(x),
            DriftSpec::DatasetGradient(m) => -m.gradient(x),
        };
        if out.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: out.len(),
            });
        }
        Ok(out)
    }
}

/// A square root of a covariance, stored in the cheapest applicable form.
#[derive(Debug, Clone, PartialEq)]
pub enum CovRoot {
    Full(DMatrix<f64>),
    Diagonal(DVector<f64>),
}

impl CovRoot {
    pub fn apply(&self, xi: &DVector<f64>) -> DVector<f64> {
        match self {
            CovRoot::Full(r) => r * xi,
            CovRoot::Diagonal(s) => s.component_mul(xi),
        }
    }
}

/// Constant covariance with a precomputed root. Positive semidefinite
/// (including zero) matrices are accepted.
#[derive(Debug, Clone)]
pub struct ConstantCovariance {
    cov: SymMatrix,
    root: CovRoot,
}

impl ConstantCovariance {
    pub fn new(cov: SymMatrix) -> Result<Self> {
        if cov.as_matrix().iter().any(|v| !v.is_finite()) {
            return Err(Error::CovarianceEvaluationFailed(
                "non-finite constant covariance".into(),
            ));
        }
        let root = if cov.is_diagonal() {
            let diag = cov.diagonal();
            if let Some((i, &v)) = diag.iter().enumerate().find(|(_, &v)| v < 0.0) {
                return Err(Error::NonPositiveVariance { index: i, value: v });
            }
            CovRoot::Diagonal(diag.map(f64::sqrt))
        } else {
            let eig = cov.eigen();
            let floor = -1e-12 * cov.frobenius_norm();
            if eig.min() < floor {
                return Err(Error::NotPositiveDefinite {
                    index: 0,
                    pivot: eig.min(),
                });
            }
            CovRoot::Full(psd_sqrt(&cov))
        };
        Ok(ConstantCovariance { cov, root })
    }

    pub fn cov(&self) -> &SymMatrix {
        &self.cov
    }

    pub fn root(&self) -> &CovRoot {
        &self.root
    }
}

/// Diffusion covariance `Σ(x)`.
#[derive(Clone)]
pub enum CovarianceSpec {
    Constant(ConstantCovariance),
    /// `Σ(x) = diag(v(x))` with `v(x) ≥ 0`.
    DiagonalOfState {
        dim: usize,
        field: Arc<VectorField>,
    },
    /// `α_{n,N}(Σ_l ∇f_l∇f_lᵀ − ∇f∇fᵀ)`, projected onto the PSD cone with
    /// eigenvalue floor `psd_floor`.
    MinibatchSgd {
        model: Arc<dyn GradientModel>,
        batch: usize,
        replacement: bool,
        psd_floor: f64,
    },
}

impl fmt::Debug for CovarianceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovarianceSpec::Constant(c) => f.debug_tuple("Constant").field(c.cov()).finish(),
            CovarianceSpec::DiagonalOfState { dim, .. } => f
                .debug_struct("DiagonalOfState")
                .field("dim", dim)
                .finish_non_exhaustive(),
            CovarianceSpec::MinibatchSgd {
                model,
                batch,
                replacement,
                psd_floor,
            } => f
                .debug_struct("MinibatchSgd")
                .field("dim", &model.dim())
                .field("examples", &model.num_examples())
                .field("batch", batch)
                .field("replacement", replacement)
                .field("psd_floor", psd_floor)
                .finish(),
        }
    }
}

impl CovarianceSpec {
    pub fn constant(cov: SymMatrix) -> Result<Self> {
        Ok(CovarianceSpec::Constant(ConstantCovariance::new(cov)?))
    }

    pub fn spd(cov: &SpdMatrix) -> Self {
        CovarianceSpec::Constant(ConstantCovariance {
            cov: cov.as_sym().clone(),
            root: CovRoot::Full(cov.cholesky().as_matrix().clone()),
        })
    }

    pub fn isotropic(dim: usize, variance: f64) -> Result<Self> {
        Self::constant(SymMatrix::scaled_identity(dim, variance))
    }

    pub fn diagonal_of_state(
        dim: usize,
        field: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        CovarianceSpec::DiagonalOfState {
            dim,
            field: Arc::new(field),
        }
    }

    pub fn minibatch(
        model: Arc<dyn GradientModel>,
        batch: usize,
        replacement: bool,
        psd_floor: f64,
    ) -> Result<Self> {
        let n = model.num_examples();
        if batch == 0 {
            return Err(invalid("batch", "must be positive"));
        }
        if batch > n {
            return Err(Error::BatchLargerThanDataset { batch, dataset: n });
        }
        if !(psd_floor >= 0.0) {
            return Err(invalid("psd_floor", "must be nonnegative"));
        }
        Ok(CovarianceSpec::MinibatchSgd {
            model,
            batch,
            replacement,
            psd_floor,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            CovarianceSpec::Constant(c) => c.cov.dim(),
            CovarianceSpec::DiagonalOfState { dim, .. } => *dim,
            CovarianceSpec::MinibatchSgd { model, .. } => model.dim(),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, CovarianceSpec::Constant(_))
    }

    fn diagonal_at(&self, field: &VectorField, x: &DVector<f64>) -> Result<DVector<f64>> {
        let v = field(x);
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: v.len(),
            });
        }
        if let Some((i, &bad)) = v.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::CovarianceEvaluationFailed(format!(
                "diagonal entry {i} evaluated to {bad}"
            )));
        }
        Ok(v)
    }

    fn minibatch_at(&self, x: &DVector<f64>) -> Result<SymMatrix> {
        let CovarianceSpec::MinibatchSgd {
            model,
            batch,
            replacement,
            psd_floor,
        } = self
        else {
            unreachable!()
        };
        let grads = model.per_example_gradients(x);
        let full = grads.row_sum().transpose();
        let raw = minibatch_covariance(&grads, &full, *batch, model.num_examples(), *replacement)?;
        if raw.as_matrix().iter().any(|v| !v.is_finite()) {
            return Err(Error::CovarianceEvaluationFailed(
                "minibatch covariance is not finite".into(),
            ));
        }
        Ok(psd_project(&raw, *psd_floor))
    }

    /// `Σ(x)`.
    pub fn eval(&self, x: &DVector<f64>) -> Result<SymMatrix> {
        match self {
            CovarianceSpec::Constant(c) => Ok(c.cov.clone()),
            CovarianceSpec::DiagonalOfState { field, .. } => {
                Ok(SymMatrix::from_diagonal(self.diagonal_at(field.as_ref(), x)?.as_slice()))
            }
            CovarianceSpec::MinibatchSgd { .. } => self.minibatch_at(x),
        }
    }

    /// `Σ^{1/2}(x)`: elementwise for diagonal covariances, otherwise the
    /// Cholesky factor (eigen-clamped root when singular).
    pub fn root(&self, x: &DVector<f64>) -> Result<CovRoot> {
        match self {
            CovarianceSpec::Constant(c) => Ok(c.root.clone()),
            CovarianceSpec::DiagonalOfState { field, .. } => {
                Ok(CovRoot::Diagonal(self.diagonal_at(field.as_ref(), x)?.map(f64::sqrt)))
            }
            CovarianceSpec::MinibatchSgd { .. } => Ok(CovRoot::Full(psd_sqrt(&self.minibatch_at(x)?))),
        }
    }

    /// `(Σ_j ∂_j Σ_ij(x))_i`, zero for constant covariances and a forward
    /// difference with step `1e−6·max(1, |x_j|)` otherwise.
    pub fn divergence(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let d = self.dim();
        match self {
            CovarianceSpec::Constant(_) => Ok(DVector::zeros(d)),
            CovarianceSpec::DiagonalOfState { field, .. } => {
                let base = self.diagonal_at(field.as_ref(), x)?;
                let mut out = DVector::zeros(d);
                for i in 0..d {
                    let h = fd_step(x[i]);
                    let mut xp = x.clone();
                    xp[i] += h;
                    out[i] = (self.diagonal_at(field.as_ref(), &xp)?[i] - base[i]) / h;
                }
                Ok(out)
            }
            CovarianceSpec::MinibatchSgd { .. } => {
                let base = self.eval(x)?;
                let mut out = DVector::zeros(d);
                for j in 0..d {
                    let h = fd_step(x[j]);
                    let mut xp = x.clone();
                    xp[j] += h;
                    let shifted = self.eval(&xp)?;
                    for i in 0..d {
                        out[i] += (shifted.get(i, j) - base.get(i, j)) / h;
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Forward-difference step for coordinate value `v`.
pub fn fd_step(v: f64) -> f64 {
    1e-6 * v.abs().max(1.0)
}

/// Scaling `α_{n,N}` of the minibatch covariance.
pub fn minibatch_alpha(batch: usize, dataset: usize, replacement: bool) -> f64 {
    let (n, big_n) = (batch as f64, dataset as f64);
    let finite = if replacement { 1.0 / big_n } else { n / big_n };
    big_n * big_n / n * (1.0 - finite)
}

/// `α_{n,N}(Σ_l g_l g_lᵀ − g gᵀ)` where row `l` of `per_example` is `g_l` and
/// `full_grad = g = Σ_l g_l`. Not necessarily PSD; see [`psd_project`].
pub fn minibatch_covariance(
    per_example: &DMatrix<f64>,
    full_grad: &DVector<f64>,
    batch: usize,
    dataset: usize,
    replacement: bool,
) -> Result<SymMatrix> {
    if batch == 0 {
        return Err(invalid("batch", "must be positive"));
    }
    if batch > dataset {
        return Err(Error::BatchLargerThanDataset { batch, dataset });
    }
    if per_example.nrows() != dataset {
        return Err(Error::DimensionMismatch {
            expected: dataset,
            found: per_example.nrows(),
        });
    }
    if per_example.ncols() != full_grad.len() {
        return Err(Error::DimensionMismatch {
            expected: per_example.ncols(),
            found: full_grad.len(),
        });
    }
    let sum = per_example.row_sum().transpose();
    let gap = (&sum - full_grad).amax();
    if gap > 1e-9 * sum.amax().max(1.0) {
        return Err(Error::GradientMismatch { gap });
    }
    let alpha = minibatch_alpha(batch, dataset, replacement);
    let second = per_example.transpose() * per_example;
    let m = (second - full_grad * full_grad.transpose()) * alpha;
    SymMatrix::new((&m + m.transpose()) * 0.5)
}

/// Nearest (Frobenius) symmetric matrix with all eigenvalues `≥ floor`.
pub fn psd_project(m: &SymMatrix, floor: f64) -> SymMatrix {
    let floor = floor.max(0.0);
    if m.is_diagonal() {
        let d: Vec<f64> = m.diagonal().iter().map(|v| v.max(floor)).collect();
        return SymMatrix::from_diagonal(&d);
    }
    m.map_eigenvalues(|v| v.max(floor))
}

/// Step size, horizon, ensemble size and recording schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub step: f64,
    pub horizon: f64,
    pub paths: usize,
    pub seed: u64,
    #[serde(default = "one")]
    pub record_stride: usize,
}

fn one() -> usize {
    1
}

impl SimConfig {
    /// Number of Euler steps `T/h`, after validating the configuration.
    pub fn num_steps(&self) -> Result<usize> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(invalid("step", "must be positive and finite"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid("horizon", "must be positive and finite"));
        }
        if self.step > self.horizon {
            return Err(invalid("step", "must not exceed the horizon"));
        }
        if self.paths == 0 {
            return Err(invalid("paths", "must be positive"));
        }
        if self.record_stride == 0 {
            return Err(invalid("record_stride", "must be positive"));
        }
        let ratio = self.horizon / self.step;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
            return Err(invalid(
                "step",
                format!("horizon/step = {ratio} is not an integer"),
            ));
        }
        Ok(steps as usize)
    }

    /// Step indices at which states are recorded.
    pub fn recorded_steps(&self) -> Result<Vec<usize>> {
        let n = self.num_steps()?;
        Ok((0..=n).step_by(self.record_stride).collect())
    }
}

/// Recorded states of `M` paths, stored path-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEnsemble {
    times: Vec<f64>,
    dim: usize,
    paths: usize,
    states: Vec<f64>,
    seed: u64,
}

impl TrajectoryEnsemble {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_paths(&self) -> usize {
        self.paths
    }

    pub fn num_records(&self) -> usize {
        self.times.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// State of `path` at record `k`.
    pub fn state(&self, path: usize, k: usize) -> &[f64] {
        let start = (path * self.times.len() + k) * self.dim;
        &self.states[start..start + self.dim]
    }

    pub fn state_vector(&self, path: usize, k: usize) -> DVector<f64> {
        DVector::from_column_slice(self.state(path, k))
    }

    /// All path states at record `k`.
    pub fn snapshot(&self, k: usize) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.paths).map(move |p| self.state(p, k))
    }

    /// Ensemble mean at record `k`.
    pub fn mean_at(&self, k: usize) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim);
        for s in self.snapshot(k) {
            m += DVector::from_column_slice(s);
        }
        m / self.paths as f64
    }

    /// Unbiased ensemble covariance at record `k`.
    pub fn covariance_at(&self, k: usize) -> DMatrix<f64> {
        let m = self.mean_at(k);
        let mut c = DMatrix::zeros(self.dim, self.dim);
        for s in self.snapshot(k) {
            let v = DVector::from_column_slice(s) - &m;
            c += &v * v.transpose();
        }
        c / (self.paths as f64 - 1.0).max(1.0)
    }

    /// CSV with header `path,time,x0,…` and one row per recorded state.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        write!(w, "path,time")?;
        for i in 0..self.dim {
            write!(w, ",x{i}")?;
        }
        writeln!(w)?;
        for p in 0..self.paths {
            for (k, t) in self.times.iter().enumerate() {
                write!(w, "{p},{t:.16e}")?;
                for v in self.state(p, k) {
                    write!(w, ",{v:.16e}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

fn check_dims(drift: &DriftSpec, cov: &CovarianceSpec, x0: &DVector<f64>) -> Result<()> {
    for found in [cov.dim(), x0.len()] {
        if found != drift.dim() {
            return Err(Error::DimensionMismatch {
                expected: drift.dim(),
                found,
            });
        }
    }
    Ok(())
}

/// Runs one path per drift with shared increments, returning the recorded
/// states of each arm concatenated.
fn run_path(
    drifts: &[&DriftSpec],
    cov: &CovarianceSpec,
    x0: &DVector<f64>,
    cfg: &SimConfig,
    steps: usize,
    path: usize,
) -> Result<Vec<Vec<f64>>> {
    let d = x0.len();
    let mut stream = NoiseStream::new(cfg.seed, path as u64);
    stream.seek(0, d);
    let sqrt_h = cfg.step.sqrt();
    let mut xs: Vec<DVector<f64>> = vec![x0.clone(); drifts.len()];
    let n_rec = steps / cfg.record_stride + 1;
    let mut out: Vec<Vec<f64>> = (0..drifts.len())
        .map(|_| {
            let mut v = Vec::with_capacity(n_rec * d);
            v.extend_from_slice(x0.as_slice());
            v
        })
        .collect();
    let mut xi = DVector::zeros(d);
    for k in 1..=steps {
        stream.fill_normals(xi.as_mut_slice());
        for (a, drift) in drifts.iter().enumerate() {
            let x = &xs[a];
            let b = drift.eval(x)?;
            let noise = cov.root(x)?.apply(&xi);
            let next = x + b * cfg.step + noise * sqrt_h;
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::CovarianceEvaluationFailed(format!(
                    "state became non-finite at step {k} of path {path}"
                )));
            }
            xs[a] = next;
            if k % cfg.record_stride == 0 {
                out[a].extend_from_slice(xs[a].as_slice());
            }
        }
    }
    Ok(out)
}

fn simulate_arms(
    drifts: &[&DriftSpec],
    cov: &CovarianceSpec,
    x0: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<Vec<TrajectoryEnsemble>> {
    let steps = cfg.num_steps()?;
    for drift in drifts {
        check_dims(drift, cov, x0)?;
    }
    let per_path: Vec<Vec<Vec<f64>>> = (0..cfg.paths)
        .into_par_iter()
        .map(|p| run_path(drifts, cov, x0, cfg, steps, p))
        .collect::<Result<_>>()?;
    let times: Vec<f64> = cfg
        .recorded_steps()?
        .into_iter()
        .map(|k| k as f64 * cfg.step)
        .collect();
    Ok((0..drifts.len())
        .map(|a| TrajectoryEnsemble {
            times: times.clone(),
            dim: x0.len(),
            paths: cfg.paths,
            states: per_path.iter().flat_map(|arms| arms[a].iter().copied()).collect(),
            seed: cfg.seed,
        })
        .collect())
}

/// Euler–Maruyama ensemble
/// `x_{k+1} = x_k + h b(x_k) + √h Σ^{1/2}(x_k) ξ_k`.
pub fn simulate(
    drift: &DriftSpec,
    cov: &CovarianceSpec,
    x0: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<TrajectoryEnsemble> {
    Ok(simulate_arms(&[drift], cov, x0, cfg)?.remove(0))
}

/// Two ensembles driven by identical increments `ξ_k` per path and step.
pub fn paired_simulate(
    drift_a: &DriftSpec,
    drift_b: &DriftSpec,
    cov: &CovarianceSpec,
    x0: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<(TrajectoryEnsemble, TrajectoryEnsemble)> {
    let mut arms = simulate_arms(&[drift_a, drift_b], cov, x0, cfg)?;
    let b = arms.pop().expect("two arms");
    let a = arms.pop().expect("two arms");
    Ok((a, b))
}
