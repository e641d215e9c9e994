//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use aniso_privacy::audit::{estimate_delta, AuditConfig};
use aniso_privacy::bounds::{
    convergence_bound, klbound_closed, klbound_stationary, lsi_constant, mc_kl_bound, ClosedVariant, PhiField,
    RegularityParams,
};
use aniso_privacy::covopt::{axis_sweep, kl_term, optimal_diag_cov, GradientGap, ZERO_GAP_FLOOR};
use aniso_privacy::linalg::sym_exp;
use aniso_privacy::nn::{
    synth_blobs, Activation, Adjacency, Dataset, MlpArch, MlpModel, NoiseBasis, NoiseScheme, TrainSettings,
};
use aniso_privacy::ou::{exact_state, gaussian_kl, GaussianState, QuadraticProblem};
use aniso_privacy::privacy::{delta_from_eps, eps_from_delta, membership_advantage, ConcentrationParams};
use aniso_privacy::rng::NoiseStream;
use aniso_privacy::sde::{simulate, CovarianceSpec, DriftSpec, SimConfig};
use aniso_privacy::{SpdMatrix, SymMatrix};
use nalgebra::{DMatrix, DVector};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, start: Instant) -> std::result::Result<f64, String> {
    let secs = start.elapsed().as_secs_f64();
    if start.elapsed() > limit {
        Err(format!("took {secs:.1}s, limit {}s", limit.as_secs()))
    } else {
        Ok(secs)
    }
}

fn ou_1d(target: f64, x0: f64) -> QuadraticProblem {
    QuadraticProblem::new(
        DMatrix::from_element(1, 1, 1.0),
        DVector::from_element(1, target),
        SpdMatrix::identity(1),
        DVector::from_element(1, x0),
    )
    .unwrap()
}

fn ou_exactness() -> Outcome {
    let start = Instant::now();
    let p = ou_1d(0.0, 1.0);
    let cfg = SimConfig {
        step: 1e-3,
        horizon: 1.0,
        paths: 20_000,
        seed: 11,
        record_stride: 100,
    };
    let ens = simulate(&DriftSpec::quadratic(&p), &CovarianceSpec::isotropic(1, 1.0).unwrap(), p.x0(), &cfg).unwrap();
    let k = ens.num_records() - 1;
    let exact = exact_state(&p, ens.times()[k]).unwrap();
    let (m, v) = (exact.mean[0], exact.cov.get(0, 0));
    let (mean, se) = common::mean_se(ens.snapshot(k).map(|x| x[0]));
    let var = ens.covariance_at(k)[(0, 0)];
    let secs = within(Duration::from_secs(10), start)?;
    let mean_ok = (mean - m).abs() <= 3.0 * se;
    let var_ok = ((var - v) / v).abs() <= 0.02;
    check(
        mean_ok && var_ok,
        format!(
            "mean {mean:.5} vs {m:.5} (3 SE = {:.5}), variance {var:.5} vs {v:.5} ({:.2}%), {secs:.1}s",
            3.0 * se,
            100.0 * ((var - v) / v).abs()
        ),
    )
}

fn bound_domination() -> Outcome {
    let start = Instant::now();
    let (p, q) = (ou_1d(0.0, 0.0), ou_1d(0.1, 0.0));
    let cfg = SimConfig {
        step: 1e-3,
        horizon: 2.0,
        paths: 10_000,
        seed: 12,
        record_stride: 20,
    };
    let cov = CovarianceSpec::isotropic(1, 1.0).unwrap();
    let (drift, drift_prime) = (DriftSpec::quadratic(&p), DriftSpec::quadratic(&q));
    let ens = simulate(&drift, &cov, p.x0(), &cfg).unwrap();
    let phi = PhiField::shared_covariance(drift, drift_prime, cov).unwrap();
    let curve = mc_kl_bound(&ens, &phi).unwrap();
    let mut worst = f64::INFINITY;
    for (k, &t) in curve.times.iter().enumerate() {
        // Both laws start from the same point mass.
        let kl = if t == 0.0 {
            0.0
        } else {
            gaussian_kl(&exact_state(&p, t).unwrap(), &exact_state(&q, t).unwrap()).unwrap()
        };
        worst = worst.min(curve.bound[k] + 3.0 * curve.std_err[k] - kl);
    }
    let secs = within(Duration::from_secs(30), start)?;
    check(
        worst >= 0.0,
        format!(
            "{} times, smallest margin {worst:.3e}, bound(2) = {:.5}, {secs:.1}s",
            curve.times.len(),
            curve.bound.last().unwrap()
        ),
    )
}

fn closed_forms() -> Outcome {
    let unit = RegularityParams::unit(1);
    let closed = klbound_closed(&unit, ClosedVariant::Uniform);
    let long = klbound_closed(&unit, ClosedVariant::LongTime);
    let stat = klbound_stationary(&unit);
    let (rho, c0) = (0.7, 3.0);
    let start_err = (lsi_constant(0.0, rho, c0) - c0).abs();
    let end_err = (lsi_constant(f64::INFINITY, rho, c0) - 2.0 / rho).abs();
    check(
        closed == 432.0 && long == 144.0 && stat == 1.5 && start_err <= 1e-12 && end_err <= 1e-12,
        format!("closed {closed}, long-time {long}, stationary {stat}, LSI endpoint errors {start_err:.1e}/{end_err:.1e}"),
    )
}

fn optimizer() -> Outcome {
    let s = GradientGap::new(vec![10.0, 1.0]).unwrap();
    let opt = optimal_diag_cov(&s, 11.0).unwrap();
    let oracle = common::projected_gradient_cov(&[10.0, 1.0], 11.0, ZERO_GAP_FLOOR * 11.0);
    let dev = opt
        .diag_sigma
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let target_dev = (opt.diag_sigma[0] - 10.0).abs().max((opt.diag_sigma[1] - 1.0).abs());
    let kl_err = (kl_term(&s, &opt.diag_sigma).unwrap() - 121.0 / 11.0).abs();
    let eq = optimal_diag_cov(&GradientGap::new(vec![10.0, 10.0]).unwrap(), 11.0).unwrap();
    let equal = eq.diag_sigma[0] == eq.diag_sigma[1];
    let iso = kl_term(&s, &[5.5, 5.5]).unwrap();
    check(
        dev <= 1e-6 && target_dev <= 1e-6 && kl_err <= 1e-10 && equal && opt.kl_term < iso,
        format!(
            "optimum {:?}, oracle {:?}, KL {:.10} vs isotropic {iso:.4}, equal-gap variances {:?}",
            opt.diag_sigma, oracle, opt.kl_term, eq.diag_sigma
        ),
    )
}

/// `B = diag(√κ, 1)` with optimum `(1, 1)` against a uniformly stiffer copy.
fn scaled_pair(kappa: f64) -> (QuadraticProblem, QuadraticProblem) {
    let design = DMatrix::from_diagonal(&DVector::from_vec(vec![kappa.sqrt(), 1.0]));
    let target = &design * DVector::from_element(2, 1.0);
    let make = |b: DMatrix<f64>| {
        QuadraticProblem::new(b, target.clone(), SpdMatrix::identity(2), DVector::zeros(2)).unwrap()
    };
    (make(design.clone()), make(design * 1.1))
}

fn quadratic_tradeoff() -> Outcome {
    let levels = [0.25, 0.5, 1.0, 2.0, 4.0];
    let ratio = |kappa: f64| {
        let (p, q) = scaled_pair(kappa);
        axis_sweep(&p, &q, 100.0, &levels, 1.0).unwrap().ratio
    };
    let (r10, r100) = (ratio(10.0), ratio(100.0));
    let again = ratio(100.0);
    check(
        r100 > r10 && again == r100,
        format!("anisotropy ratio {r10:.4} at condition 10, {r100:.4} at condition 100"),
    )
}

fn random_state(stream: &mut NoiseStream) -> GaussianState {
    let mean = DVector::from_vec(stream.normals(2));
    let a = DMatrix::from_vec(2, 2, stream.normals(4));
    let cov = SymMatrix::new(&a * a.transpose() + DMatrix::identity(2, 2) * 0.5).unwrap();
    GaussianState::new(mean, cov, 0.0).unwrap()
}

fn gaussian_kl_mc() -> Outcome {
    let mut stream = NoiseStream::new(606, 0);
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        let (p, q) = (random_state(&mut stream), random_state(&mut stream));
        let exact = gaussian_kl(&p, &q).unwrap();
        let (mc, se) = common::mc_gaussian_kl(&p, &q, 1_000_000, 1000 + i);
        worst = worst.max((exact - mc).abs() / se);
    }
    let p = random_state(&mut stream);
    let zero = gaussian_kl(&p, &p).unwrap();
    check(worst <= 3.0 && zero == 0.0, format!("largest deviation {worst:.2} SE over 10 pairs, identity KL {zero}"))
}

fn convergence() -> Outcome {
    let p = ou_1d(0.0, 2.0);
    let cfg = SimConfig {
        step: 1e-3,
        horizon: 3.0,
        paths: 10_000,
        seed: 17,
        record_stride: 50,
    };
    let ens = simulate(&DriftSpec::quadratic(&p), &CovarianceSpec::isotropic(1, 1.0).unwrap(), p.x0(), &cfg).unwrap();
    let xstar = p.optimum()[0];
    let mut worst = f64::INFINITY;
    for (k, &t) in ens.times().iter().enumerate() {
        let (m, se) = common::mean_se(ens.snapshot(k).map(|x| 0.5 * (x[0] - xstar).powi(2)));
        worst = worst.min(convergence_bound(t, 1.0, 1.0, 2.0) + 3.0 * se - m);
    }
    check(worst >= 0.0, format!("{} times, smallest margin {worst:.3e}", ens.times().len()))
}

fn matrix_exponential() -> Outcome {
    let mut stream = NoiseStream::new(808, 0);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let n = 2 + i % 5;
        let raw = DMatrix::from_vec(n, n, stream.normals(n * n));
        let sym = SymMatrix::new((&raw + raw.transpose()) * 0.5).unwrap();
        let scale = stream.uniform() / sym.spectral_norm();
        let m = sym.scale(scale);
        let got = sym_exp(&m, 1.0);
        let want = common::taylor_exp(m.as_matrix(), 1.0, 30);
        worst = worst.max((got.as_matrix() - want).norm());
    }
    check(worst <= 1e-10, format!("largest Frobenius error {worst:.2e} over 100 matrices"))
}

fn audit_config(sigma2: f64, adjacency: Adjacency) -> AuditConfig {
    AuditConfig {
        epsilon: 0.1,
        outer: 5,
        inner: 5,
        hidden: 10,
        activation: Activation::Relu,
        train: TrainSettings {
            scheme: NoiseScheme::AnisotropicPerParam { sigma2 },
            lr: 0.1,
            iters: 10_000,
            batch: 10,
            noise_on: NoiseBasis::Minibatch,
        },
        adjacency,
        seed: 1,
    }
}

fn dp_audit() -> Outcome {
    let start = Instant::now();
    let data = synth_blobs(2, 100, 2, 3.0, 7).unwrap();
    let control = estimate_delta(&audit_config(1e-2, Adjacency::Identical), &data).unwrap();
    let sweep: Vec<_> = [1e-3, 1e-2, 1e-1]
        .iter()
        .map(|&s2| estimate_delta(&audit_config(s2, Adjacency::default()), &data).unwrap())
        .collect();
    let rerun = estimate_delta(&audit_config(1e-2, Adjacency::default()), &data).unwrap();
    let secs = within(Duration::from_secs(300), start)?;
    let deltas: Vec<f64> = sweep.iter().map(|r| r.delta).collect();
    let monotone = deltas.windows(2).all(|w| w[1] <= w[0]);
    let reproducible = rerun.without_timing() == sweep[1].without_timing();
    check(
        control.delta == 0.0 && monotone && reproducible,
        format!(
            "control delta {}, delta over sigma2 1e-3/1e-2/1e-1 = {:?} (nonincreasing: {monotone}), bit-exact rerun: {reproducible}, {secs:.1}s",
            control.delta, deltas
        ),
    )
}

fn fuzz_dataset(stream: &mut NoiseStream, n: usize, m: usize, k: usize) -> Dataset {
    let features = DMatrix::from_vec(n, m, stream.normals(n * m));
    let labels = (0..n).map(|_| stream.below(k)).collect();
    Dataset::new(features, labels, k, "fuzz").unwrap()
}

fn gradient_check() -> Outcome {
    let mut stream = NoiseStream::new(1010, 0);
    let mut worst: f64 = 0.0;
    for i in 0..100u64 {
        let (m, h, k) = (1 + stream.below(4), 1 + stream.below(6), 2 + stream.below(3));
        let act = if i % 2 == 0 { Activation::Tanh } else { Activation::Relu };
        let arch = MlpArch::new(m, h, k, act).unwrap();
        let n = 3 + stream.below(6);
        let data = fuzz_dataset(&mut stream, n, m, k);
        let model = MlpModel::init(arch, i);
        let (_, grad) = model.loss_and_grad(&data);
        let fd = common::fd_gradient(&model, &data, 1e-6);
        for (a, b) in grad.iter().zip(fd.iter()) {
            worst = worst.max(common::rel_err(*a, *b));
        }
    }
    check(worst <= 1e-5, format!("largest relative error {worst:.2e} over 100 models"))
}

fn privacy_round_trip() -> Outcome {
    let mut stream = NoiseStream::new(1111, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100_000 {
        let c_t = 0.01 + 10.0 * stream.uniform();
        let lip = 0.01 + 5.0 * stream.uniform();
        let kl = 2.0 * stream.uniform();
        let delta = stream.uniform().powi(8).min(1.0 - 1e-9);
        let cp = ConcentrationParams::new(c_t, lip, kl).unwrap();
        let eps = eps_from_delta(delta, &cp).unwrap();
        worst = worst.max((delta_from_eps(eps, &cp) - delta).abs());
    }
    let adv = membership_advantage(0.02);
    check(worst <= 1e-12 && adv == 0.1, format!("largest round-trip error {worst:.2e}, advantage(0.02) = {adv}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("OU exactness", ou_exactness),
        ("bound domination", bound_domination),
        ("closed-form bounds", closed_forms),
        ("covariance optimizer", optimizer),
        ("quadratic trade-off", quadratic_tradeoff),
        ("Gaussian KL", gaussian_kl_mc),
        ("convergence bound", convergence),
        ("matrix exponential", matrix_exponential),
        ("DP audit", dp_audit),
        ("gradient correctness", gradient_check),
        ("privacy translation", privacy_round_trip),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({detail})", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
