//! Config checking and execution for each experiment kind.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use aniso_privacy::audit::{estimate_delta, membership_experiment, AuditConfig, MembershipConfig};
use aniso_privacy::bounds::{
    klbound_closed, klbound_stationary, lsi_constant, lsi_rate, mc_kl_bound, xi_bound, ClosedVariant, PhiField,
    RegularityParams,
};
use aniso_privacy::covopt::{
    axis_sweep, grid_surface, isotropic_point, optimal_diag_cov, quadratic_tradeoff, write_surface_csv,
    write_tradeoff_csv, GradientGap, Grid2,
};
use aniso_privacy::nn::{synth_blobs, Dataset};
use aniso_privacy::ou::{check_reversibility, error_to_opt, exact_state, gaussian_kl, invariant_state, GaussianState, QuadraticProblem};
use aniso_privacy::privacy::{delta_from_eps, eps_from_delta, membership_advantage, ConcentrationParams};
use aniso_privacy::sde::{
    simulate, CovarianceSpec, DriftSpec, LeastSquares, SimConfig, DEFAULT_PSD_FLOOR,
};
use aniso_privacy::{SpdMatrix, SymMatrix};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::*;
use crate::error::{at, during, CliError, FieldError};

/// A checked experiment, ready to run.
pub enum Plan {
    Simulate {
        drift: DriftSpec,
        cov: CovarianceSpec,
        x0: DVector<f64>,
        sim: SimConfig,
    },
    OuExact {
        problem: QuadraticProblem,
        times: Vec<f64>,
        invariant: bool,
    },
    KlBound {
        p: QuadraticProblem,
        q: QuadraticProblem,
        sim: SimConfig,
    },
    ClosedBounds {
        params: RegularityParams,
        times: Vec<f64>,
        m: f64,
    },
    OptimizeCov {
        s: GradientGap,
        zetas: Vec<f64>,
    },
    GridSurface {
        s: GradientGap,
        grid: Grid2,
    },
    QuadTradeoff {
        p: QuadraticProblem,
        q: QuadraticProblem,
        t: f64,
        grid: Grid2,
        sweep: Option<AxisSweepSpec>,
    },
    DpAudit {
        cfg: AuditConfig,
        data: Dataset,
    },
    Membership {
        cfg: MembershipConfig,
        data: Dataset,
    },
    PrivacyTranslate {
        cp: ConcentrationParams,
        epsilons: Vec<f64>,
        deltas: Vec<f64>,
    },
}

/// The plan together with the quantities it will produce.
pub struct Prepared {
    pub plan: Plan,
    pub derived: Value,
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Validation(vec![FieldError::new(path, message)])
}

fn matrix(rows: &Rows, path: &str) -> Result<DMatrix<f64>, CliError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(invalid(path, "matrix must be nonempty"));
    }
    if let Some(i) = rows.iter().position(|row| row.len() != c) {
        return Err(invalid(format!("{path}[{i}]"), format!("expected {c} columns")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn spd(rows: &Rows, path: &str) -> Result<SpdMatrix, CliError> {
    SpdMatrix::from_matrix(matrix(rows, path)?).map_err(at(path))
}

fn vector(v: &[f64], path: &str) -> Result<DVector<f64>, CliError> {
    if v.is_empty() {
        return Err(invalid(path, "vector must be nonempty"));
    }
    Ok(DVector::from_column_slice(v))
}

fn problem(spec: &ProblemSpec, path: &str) -> Result<QuadraticProblem, CliError> {
    let p = QuadraticProblem::new(
        matrix(&spec.design, &format!("{path}.design"))?,
        vector(&spec.target, &format!("{path}.target"))?,
        spd(&spec.noise, &format!("{path}.noise"))?,
        vector(&spec.x0, &format!("{path}.x0"))?,
    )
    .map_err(at(path))?;
    match &spec.v0 {
        Some(v0) => {
            let v0 = SymMatrix::new(matrix(v0, &format!("{path}.v0"))?).map_err(at(format!("{path}.v0")))?;
            p.with_initial_cov(v0).map_err(at(format!("{path}.v0")))
        }
        None => Ok(p),
    }
}

fn quadratic(spec: &QuadraticSpec, noise: SpdMatrix, x0: &DVector<f64>, path: &str) -> Result<QuadraticProblem, CliError> {
    QuadraticProblem::new(
        matrix(&spec.design, &format!("{path}.design"))?,
        vector(&spec.target, &format!("{path}.target"))?,
        noise,
        x0.clone(),
    )
    .map_err(at(path))
}

fn sim_config(step: f64, horizon: f64, paths: usize, record_stride: usize, seed: u64) -> Result<SimConfig, CliError> {
    let sim = SimConfig {
        step,
        horizon,
        paths,
        seed,
        record_stride,
    };
    sim.num_steps().map_err(at("experiment"))?;
    Ok(sim)
}

fn finite_nonneg(times: &[f64], path: &str) -> Result<(), CliError> {
    match times.iter().position(|t| !(t.is_finite() && *t >= 0.0)) {
        Some(i) => Err(invalid(format!("{path}[{i}]"), "times must be finite and nonnegative")),
        None => Ok(()),
    }
}

fn dataset(spec: &DatasetSpec, loaded: &Loaded) -> Result<Dataset, CliError> {
    let path = "experiment.dataset";
    match spec {
        DatasetSpec::Blobs {
            classes,
            per_class,
            dim,
            separation,
            seed,
        } => synth_blobs(*classes, *per_class, *dim, *separation, seed.unwrap_or(loaded.config.seed))
            .map_err(at(path)),
        DatasetSpec::Csv { path: file, num_classes } => {
            let resolved = loaded.resolve(file);
            let f = File::open(&resolved)
                .map_err(|e| invalid(format!("{path}.path"), format!("{}: {e}", resolved.display())))?;
            let name = resolved.file_stem().map_or("data".into(), |s| s.to_string_lossy().into_owned());
            Dataset::from_csv(f, name, *num_classes).map_err(at(format!("{path}.path")))
        }
    }
}

/// Builds every domain object the experiment needs without running it.
pub fn prepare(loaded: &Loaded) -> Result<Prepared, CliError> {
    let seed = loaded.config.seed;
    let (plan, derived) = match &loaded.config.experiment {
        Experiment::Simulate(e) => {
            let design = matrix(&e.drift.design, "experiment.drift.design")?;
            let target = vector(&e.drift.target, "experiment.drift.target")?;
            if design.nrows() != target.len() {
                return Err(invalid("experiment.drift.target", format!("expected {} entries", design.nrows())));
            }
            let d = design.ncols();
            let x0 = vector(&e.x0, "experiment.x0")?;
            if x0.len() != d {
                return Err(invalid("experiment.x0", format!("expected {d} entries")));
            }
            let cov = match &e.covariance {
                CovarianceChoice::Constant { matrix: m } => {
                    let m = SymMatrix::new(matrix(m, "experiment.covariance.matrix")?)
                        .map_err(at("experiment.covariance.matrix"))?;
                    CovarianceSpec::constant(m).map_err(at("experiment.covariance.matrix"))?
                }
                CovarianceChoice::Isotropic { variance } => {
                    CovarianceSpec::isotropic(d, *variance).map_err(at("experiment.covariance.variance"))?
                }
                CovarianceChoice::Minibatch { batch, replacement } => {
                    let model = LeastSquares::new(design.clone(), target.clone()).map_err(at("experiment.drift"))?;
                    CovarianceSpec::minibatch(Arc::new(model), *batch, *replacement, DEFAULT_PSD_FLOOR)
                        .map_err(at("experiment.covariance.batch"))?
                }
            };
            if cov.dim() != d {
                return Err(invalid("experiment.covariance", format!("expected a {d}x{d} covariance")));
            }
            let sim = sim_config(e.step, e.horizon, e.paths, e.record_stride, seed)?;
            let records = sim.recorded_steps().map_err(at("experiment"))?.len();
            let derived = json!({
                "dim": d,
                "steps": sim.num_steps().map_err(at("experiment"))?,
                "recorded_times": records,
                "rows": records * e.paths,
            });
            (
                Plan::Simulate {
                    drift: DriftSpec::Quadratic { design, target },
                    cov,
                    x0,
                    sim,
                },
                derived,
            )
        }
        Experiment::OuExact(e) => {
            let p = problem(&e.problem, "experiment.problem")?;
            finite_nonneg(&e.times, "experiment.times")?;
            let reversible = p.is_reversible();
            let derived = json!({
                "dim": p.dim(),
                "reversible": reversible,
                "covariance_route": if reversible { "closed form" } else { "eigenbasis" },
                "times": e.times.len(),
                "invariant": e.invariant,
            });
            (
                Plan::OuExact {
                    problem: p,
                    times: e.times.clone(),
                    invariant: e.invariant,
                },
                derived,
            )
        }
        Experiment::KlBound(e) => {
            let noise = spd(&e.noise, "experiment.noise")?;
            let x0 = vector(&e.x0, "experiment.x0")?;
            let p = quadratic(&e.drift, noise.clone(), &x0, "experiment.drift")?;
            let q = quadratic(&e.drift_prime, noise, &x0, "experiment.drift_prime")?;
            if p.dim() != q.dim() {
                return Err(invalid("experiment.drift_prime", "dimension differs from experiment.drift"));
            }
            let sim = sim_config(e.step, e.horizon, e.paths, e.record_stride, seed)?;
            let derived = json!({
                "dim": p.dim(),
                "bound": "Monte Carlo, shared covariance",
                "exact_comparison": "Gaussian KL of the two exact laws",
                "recorded_times": sim.recorded_steps().map_err(at("experiment"))?.len(),
            });
            (Plan::KlBound { p, q, sim }, derived)
        }
        Experiment::ClosedBounds(e) => {
            e.params.validate().map_err(at("experiment.params"))?;
            finite_nonneg(&e.times, "experiment.times")?;
            if !(e.m > 0.0 && e.m.is_finite()) {
                return Err(invalid("experiment.m", "must be positive and finite"));
            }
            let derived = json!({
                "variants": ["uniform", "long-time", "stationary"],
                "lsi_rate": lsi_rate(e.params.sigma, e.params.kappa),
                "tabulated_times": e.times.len(),
            });
            (
                Plan::ClosedBounds {
                    params: e.params.clone(),
                    times: e.times.clone(),
                    m: e.m,
                },
                derived,
            )
        }
        Experiment::OptimizeCov(e) => {
            let s = GradientGap::new(e.s.clone()).map_err(at("experiment.s"))?;
            if e.zetas.is_empty() {
                return Err(invalid("experiment.zetas", "need at least one trace budget"));
            }
            if let Some(i) = e.zetas.iter().position(|z| !(*z > 0.0 && z.is_finite())) {
                return Err(invalid(format!("experiment.zetas[{i}]"), "must be positive and finite"));
            }
            if s.as_slice().iter().all(|v| *v == 0.0) {
                return Err(invalid("experiment.s", "gradient gap is identically zero"));
            }
            let derived = json!({
                "dim": s.dim(),
                "schemes": ["optimal", "isotropic"],
                "rows": 2 * e.zetas.len(),
            });
            (
                Plan::OptimizeCov {
                    s,
                    zetas: e.zetas.clone(),
                },
                derived,
            )
        }
        Experiment::GridSurface(e) => {
            let s = GradientGap::new(e.s.clone()).map_err(at("experiment.s"))?;
            if s.dim() != 2 {
                return Err(invalid("experiment.s", "surfaces need a two-dimensional gap"));
            }
            e.grid.validate().map_err(at("experiment.grid"))?;
            let derived = json!({ "points": e.grid.resolution * e.grid.resolution });
            (Plan::GridSurface { s, grid: e.grid }, derived)
        }
        Experiment::QuadTradeoff(e) => {
            let x0 = vector(&e.x0, "experiment.x0")?;
            let noise = SpdMatrix::identity(x0.len());
            let p = quadratic(&e.problem, noise.clone(), &x0, "experiment.problem")?;
            let q = quadratic(&e.problem_prime, noise, &x0, "experiment.problem_prime")?;
            if p.dim() != 2 || q.dim() != 2 {
                return Err(invalid("experiment.problem", "trade-off surfaces need two-dimensional problems"));
            }
            let t = match e.t {
                Some(t) if !(t > 0.0 && t.is_finite()) => {
                    return Err(invalid("experiment.t", "must be positive and finite, or omitted for t = +inf"))
                }
                Some(t) => t,
                None => f64::INFINITY,
            };
            e.grid.validate().map_err(at("experiment.grid"))?;
            if let Some(sw) = &e.axis_sweep {
                if !p.btb().as_sym().is_diagonal() {
                    return Err(invalid("experiment.axis_sweep", "axis sweeps need a diagonal BᵀB"));
                }
                if sw.levels.len() < 2 || sw.levels.iter().any(|l| !(*l > 0.0)) || !(sw.base > 0.0) {
                    return Err(invalid("experiment.axis_sweep", "levels (at least two) and base must be positive"));
                }
            }
            let derived = json!({
                "points": e.grid.resolution * e.grid.resolution,
                "time": if t.is_finite() { json!(t) } else { json!("inf") },
                "axis_sweep": e.axis_sweep.is_some(),
            });
            (
                Plan::QuadTradeoff {
                    p,
                    q,
                    t,
                    grid: e.grid,
                    sweep: e.axis_sweep.clone(),
                },
                derived,
            )
        }
        Experiment::DpAudit(e) => {
            let data = dataset(&e.dataset, loaded)?;
            let cfg = e.audit_config(seed);
            cfg.validate(&data).map_err(at("experiment.train"))?;
            let derived = json!({
                "examples": data.len(),
                "trainings": 2 * cfg.outer * cfg.inner,
                "comparisons": cfg.outer * cfg.inner * data.len(),
            });
            (Plan::DpAudit { cfg, data }, derived)
        }
        Experiment::Membership(e) => {
            let data = dataset(&e.dataset, loaded)?;
            let cfg = e.membership_config(seed);
            if cfg.target >= data.len() {
                return Err(invalid("experiment.target", format!("row {} outside dataset of {}", cfg.target, data.len())));
            }
            cfg.validate(&data).map_err(at("experiment.train"))?;
            let derived = json!({
                "examples": data.len(),
                "trainings": 2 * cfg.runs,
                "histogram_rows": 2 * cfg.runs,
            });
            (Plan::Membership { cfg, data }, derived)
        }
        Experiment::PrivacyTranslate(e) => {
            let cp = ConcentrationParams::new(e.c_t, e.lip, e.kl).map_err(at("experiment"))?;
            if let Some(i) = e.deltas.iter().position(|d| !(*d > 0.0 && *d < 1.0)) {
                return Err(invalid(format!("experiment.deltas[{i}]"), "must lie in (0, 1)"));
            }
            if let Some(i) = e.epsilons.iter().position(|x| !(*x >= 0.0)) {
                return Err(invalid(format!("experiment.epsilons[{i}]"), "must be nonnegative"));
            }
            let derived = json!({
                "delta_at_epsilons": e.epsilons.len(),
                "epsilon_at_deltas": e.deltas.len(),
            });
            (
                Plan::PrivacyTranslate {
                    cp,
                    epsilons: e.epsilons.clone(),
                    deltas: e.deltas.clone(),
                },
                derived,
            )
        }
    };
    Ok(Prepared { plan, derived })
}

struct Out<'a> {
    dir: &'a Path,
    written: Vec<String>,
}

impl Out<'_> {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        self.written.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io(e.to_string()))?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn csv(
        &mut self,
        name: &str,
        write: impl FnOnce(&mut BufWriter<File>) -> aniso_privacy::Result<()>,
    ) -> Result<(), CliError> {
        let mut w = self.create(name)?;
        write(&mut w).map_err(|e| CliError::Io(e.to_string()))?;
        w.flush()?;
        Ok(())
    }
}

fn state_json(s: &GaussianState) -> Value {
    json!({
        "time": if s.time.is_finite() { json!(s.time) } else { json!("inf") },
        "mean": s.mean.as_slice(),
        "cov": s.cov.to_rows(),
    })
}

fn kl_between(p: &QuadraticProblem, q: &QuadraticProblem, t: f64) -> aniso_privacy::Result<f64> {
    // Both laws start from the same point mass.
    if t == 0.0 && p.v0().frobenius_norm() == 0.0 {
        return Ok(0.0);
    }
    gaussian_kl(&exact_state(p, t)?, &exact_state(q, t)?)
}

/// Runs the plan, writing into `dir`. Returns the files written.
pub fn execute(plan: &Plan, dir: &Path) -> Result<Vec<String>, CliError> {
    let mut out = Out {
        dir,
        written: Vec::new(),
    };
    match plan {
        Plan::Simulate { drift, cov, x0, sim } => {
            let ens = simulate(drift, cov, x0, sim).map_err(during("simulate"))?;
            out.csv("trajectories.csv", |w| ens.write_csv(w))?;
        }
        Plan::OuExact {
            problem,
            times,
            invariant,
        } => {
            let states: Vec<Value> = times
                .iter()
                .map(|&t| exact_state(problem, t).map(|s| state_json(&s)))
                .collect::<Result<_, _>>()
                .map_err(during("exact_state"))?;
            let errors: Vec<f64> = times
                .iter()
                .map(|&t| error_to_opt(problem, t))
                .collect::<Result<_, _>>()
                .map_err(during("error_to_opt"))?;
            let mut doc = json!({
                "reversible": check_reversibility(problem.btb().as_sym(), problem.noise().as_sym()),
                "states": states,
            });
            if *invariant {
                let inv = invariant_state(problem).map_err(during("invariant_state"))?;
                doc["invariant"] = state_json(&inv);
                doc["invariant_error_to_opt"] =
                    json!(error_to_opt(problem, f64::INFINITY).map_err(during("error_to_opt"))?);
            }
            out.json("gaussian_state.json", &doc)?;
            out.csv("error_to_opt.csv", |w| {
                writeln!(w, "time,error")?;
                for (t, e) in times.iter().zip(&errors) {
                    writeln!(w, "{t:.16e},{e:.16e}")?;
                }
                Ok(())
            })?;
        }
        Plan::KlBound { p, q, sim } => {
            let cov = CovarianceSpec::spd(p.noise());
            let (drift, drift_prime) = (DriftSpec::quadratic(p), DriftSpec::quadratic(q));
            let ens = simulate(&drift, &cov, p.x0(), sim).map_err(during("simulate"))?;
            let phi = PhiField::shared_covariance(drift, drift_prime, cov).map_err(during("phi"))?;
            let curve = mc_kl_bound(&ens, &phi).map_err(during("mc_kl_bound"))?;
            let exact: Vec<f64> = curve
                .times
                .iter()
                .map(|&t| kl_between(p, q, t))
                .collect::<Result<_, _>>()
                .map_err(during("gaussian_kl"))?;
            out.csv("kl_bound.csv", |w| curve.write_csv(w))?;
            out.csv("kl_compare.csv", |w| {
                writeln!(w, "time,bound,std_err,exact_kl")?;
                for (k, t) in curve.times.iter().enumerate() {
                    writeln!(w, "{t:.16e},{:.16e},{:.16e},{:.16e}", curve.bound[k], curve.std_err[k], exact[k])?;
                }
                Ok(())
            })?;
        }
        Plan::ClosedBounds { params, times, m } => {
            let rho = lsi_rate(params.sigma, params.kappa);
            let table: Vec<Value> = times
                .iter()
                .map(|&t| {
                    json!({
                        "time": t,
                        "C_t": lsi_constant(t, rho, params.c0),
                        "xi": xi_bound(t, params, *m),
                    })
                })
                .collect();
            let doc = json!({
                "closed_uniform": klbound_closed(params, ClosedVariant::Uniform),
                "closed_long_time": klbound_closed(params, ClosedVariant::LongTime),
                "stationary": klbound_stationary(params),
                "lsi_rate": rho,
                "lsi_limit": 2.0 / rho,
                "xi_limit": xi_bound(f64::INFINITY, params, *m),
                "table": table,
            });
            out.json("closed_bounds.json", &doc)?;
        }
        Plan::OptimizeCov { s, zetas } => {
            let mut rows = Vec::new();
            for &z in zetas {
                let opt = optimal_diag_cov(s, z).map_err(during("optimal_diag_cov"))?;
                let iso = isotropic_point(s, z).map_err(during("isotropic_point"))?;
                rows.push((z, "optimal", opt));
                rows.push((z, "isotropic", iso));
            }
            out.csv("optimal_cov.csv", |w| {
                let header: Vec<String> = (0..s.dim()).map(|i| format!("v{i}")).collect();
                writeln!(w, "zeta,scheme,{},kl_term,accuracy_loss", header.join(","))?;
                for (z, scheme, p) in &rows {
                    let vs: Vec<String> = p.diag_sigma.iter().map(|v| format!("{v:.16e}")).collect();
                    writeln!(w, "{z:.16e},{scheme},{},{:.16e},{:.16e}", vs.join(","), p.kl_term, p.accuracy_loss)?;
                }
                Ok(())
            })?;
        }
        Plan::GridSurface { s, grid } => {
            let pts = grid_surface(s, grid).map_err(during("grid_surface"))?;
            out.csv("surface.csv", |w| write_surface_csv(&pts, w))?;
        }
        Plan::QuadTradeoff { p, q, t, grid, sweep } => {
            let pts = quadratic_tradeoff(p, q, *t, grid).map_err(during("quadratic_tradeoff"))?;
            out.csv("tradeoff.csv", |w| write_tradeoff_csv(&pts, w))?;
            if let Some(sw) = sweep {
                let res = axis_sweep(p, q, *t, &sw.levels, sw.base).map_err(during("axis_sweep"))?;
                out.json("axis_sweep.json", &res)?;
            }
        }
        Plan::DpAudit { cfg, data } => {
            let report = estimate_delta(cfg, data).map_err(during("estimate_delta"))?;
            out.json("audit_report.json", &report)?;
        }
        Plan::Membership { cfg, data } => {
            let res = membership_experiment(cfg, data).map_err(during("membership_experiment"))?;
            out.csv("membership.csv", |w| res.write_csv(w))?;
            out.json(
                "membership_summary.json",
                &json!({
                    "mean_gap": res.mean_gap,
                    "worst_loss": res.worst_loss,
                    "worst_example_loss": res.worst_example_loss,
                    "excluded_runs": res.excluded_runs,
                }),
            )?;
        }
        Plan::PrivacyTranslate { cp, epsilons, deltas } => {
            let by_eps: Vec<Value> = epsilons
                .iter()
                .map(|&e| json!({ "epsilon": e, "delta": delta_from_eps(e, cp) }))
                .collect();
            let by_delta: Vec<Value> = deltas
                .iter()
                .map(|&d| eps_from_delta(d, cp).map(|e| json!({ "delta": d, "epsilon": e })))
                .collect::<Result<_, _>>()
                .map_err(during("eps_from_delta"))?;
            out.json(
                "privacy.json",
                &json!({
                    "kl": cp.kl,
                    "membership_advantage": membership_advantage(cp.kl),
                    "delta_at_epsilon": by_eps,
                    "epsilon_at_delta": by_delta,
                }),
            )?;
        }
    }
    Ok(out.written)
}
