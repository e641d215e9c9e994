//! Independent reference computations shared by the integration tests.

#![allow(dead_code)]

use aniso_privacy::nn::{Dataset, MlpModel};
use aniso_privacy::ou::GaussianState;
use aniso_privacy::rng::NoiseStream;
use nalgebra::{DMatrix, DVector};

/// `Σ_{k<terms} (s m)^k / k!`.
pub fn taylor_exp(m: &DMatrix<f64>, scale: f64, terms: usize) -> DMatrix<f64> {
    let n = m.nrows();
    let a = m * scale;
    let mut term = DMatrix::identity(n, n);
    let mut sum = term.clone();
    for k in 1..terms {
        term = &term * &a / k as f64;
        sum += &term;
    }
    sum
}

/// Minimizes `Σ s_i²/v_i` over `{v ≥ floor, Σv = ζ}` by projected gradient
/// descent with Euclidean projection onto the shifted simplex.
pub fn projected_gradient_cov(s: &[f64], zeta: f64, floor: f64) -> Vec<f64> {
    let d = s.len();
    let mut v = vec![zeta / d as f64; d];
    let mut step = 0.05 * zeta;
    let mut prev = objective(s, &v);
    for _ in 0..2_000_000 {
        let cand: Vec<f64> = v
            .iter()
            .zip(s)
            .map(|(vi, si)| vi + step * si * si / (vi * vi))
            .collect();
        let cand = project_simplex(&cand, zeta, floor);
        let f = objective(s, &cand);
        if f > prev {
            step *= 0.5;
            continue;
        }
        let moved = cand.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = cand;
        prev = f;
        if moved < 1e-13 * zeta {
            break;
        }
    }
    v
}

fn objective(s: &[f64], v: &[f64]) -> f64 {
    s.iter().zip(v).map(|(si, vi)| si * si / vi).sum()
}

/// Projection onto `{v ≥ floor, Σv = total}`.
fn project_simplex(y: &[f64], total: f64, floor: f64) -> Vec<f64> {
    let d = y.len();
    let shifted: Vec<f64> = y.iter().map(|v| v - floor).collect();
    let budget = total - floor * d as f64;
    let mut sorted = shifted.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, u) in sorted.iter().enumerate() {
        cum += u;
        let t = (cum - budget) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    shifted.iter().map(|u| (u - theta).max(0.0) + floor).collect()
}

/// Monte Carlo estimate of `KL(p‖q)` with its standard error, sampling from `p`.
pub fn mc_gaussian_kl(p: &GaussianState, q: &GaussianState, samples: usize, seed: u64) -> (f64, f64) {
    let lp = p.spd_cov().unwrap();
    let lq = q.spd_cov().unwrap();
    let root = lp.cholesky().as_matrix().clone();
    let d = p.dim();
    let log_norm = |spd: &aniso_privacy::SpdMatrix, m: &DVector<f64>, x: &DVector<f64>| {
        -0.5 * spd.inv_quad_form(&(x - m)) - 0.5 * spd.log_det()
    };
    let mut stream = NoiseStream::new(seed, 0);
    let mut z = DVector::zeros(d);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        stream.fill_normals(z.as_mut_slice());
        let x = &p.mean + &root * &z;
        let r = log_norm(&lp, &p.mean, &x) - log_norm(&lq, &q.mean, &x);
        sum += r;
        sum_sq += r * r;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Central-difference gradient of the mean training loss.
pub fn fd_gradient(model: &MlpModel, data: &Dataset, step: f64) -> DVector<f64> {
    let mut probe = model.clone();
    let d = model.params.len();
    DVector::from_fn(d, |i, _| {
        let x = model.params[i];
        let h = step * x.abs().max(1.0);
        probe.params[i] = x + h;
        let up = probe.loss_and_grad(data).0;
        probe.params[i] = x - h;
        let down = probe.loss_and_grad(data).0;
        probe.params[i] = x;
        (up - down) / (2.0 * h)
    })
}

/// `|a − b| / max(|a|, |b|, 1)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Sample mean and standard error.
pub fn mean_se(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut s, mut s2) = (0.0, 0.0, 0.0);
    for x in xs {
        n += 1.0;
        s += x;
        s2 += x * x;
    }
    let mean = s / n;
    let var = (s2 / n - mean * mean).max(0.0) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}
