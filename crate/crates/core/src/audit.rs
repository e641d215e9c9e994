//! Empirical privacy audits from paired training runs.
//!
//! Both audits train one model on `D` and one on a neighbouring `D'` from the
//! same seed, so initialization, minibatches and injected noise coincide and
//! any difference between the two models is caused by the changed record.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nn::{make_adjacent, train_from_seed, Activation, Adjacency, Dataset, MlpArch, TrainSettings};
use crate::rng::{derive_seed, NoiseStream};

/// Probabilities are clamped to `[PROB_FLOOR, 1]` before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

const OUTER_KEY: u64 = 0x0C7E;

/// Settings for [`estimate_delta`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub epsilon: f64,
    /// Outer rounds `T₁`, one neighbouring dataset each.
    pub outer: usize,
    /// Paired trainings `T₂` per outer round.
    pub inner: usize,
    pub hidden: usize,
    #[serde(default)]
    pub activation: Activation,
    pub train: TrainSettings,
    #[serde(default)]
    pub adjacency: Adjacency,
    pub seed: u64,
}

impl AuditConfig {
    pub fn validate(&self, data: &Dataset) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(invalid("epsilon", "must be positive"));
        }
        if self.outer == 0 {
            return Err(invalid("outer", "must be at least 1"));
        }
        if self.inner == 0 {
            return Err(invalid("inner", "must be at least 1"));
        }
        MlpArch::for_dataset(data, self.hidden, self.activation)?;
        self.train.validate(data.len())?;
        if self.adjacency == Adjacency::Remove {
            self.train.validate(data.len() - 1)?;
        }
        Ok(())
    }
}

/// Result of [`estimate_delta`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub epsilon: f64,
    /// `δ_{t₁} = count_{t₁}/(T₂·N)` over the completed inner rounds.
    pub delta_per_outer: Vec<f64>,
    /// `max_{t₁} δ_{t₁}`.
    pub delta: f64,
    pub counts: Vec<u64>,
    pub total_comparisons: u64,
    /// Row changed in each outer round.
    pub adjacent_indices: Vec<usize>,
    /// `(t₁, t₂)` pairs dropped because a training run diverged.
    pub excluded_rounds: Vec<(usize, usize)>,
    /// Largest training (minibatch) loss over all iterations and runs.
    pub worst_loss: f64,
    /// Largest per-example loss on the training data at the end of any run.
    pub worst_example_loss: f64,
    /// Largest log-ratio observed.
    pub max_log_ratio: f64,
    pub runtime_seconds: f64,
}

impl AuditReport {
    /// The report with timing removed, for reproducibility comparisons.
    pub fn without_timing(&self) -> AuditReport {
        AuditReport {
            runtime_seconds: 0.0,
            ..self.clone()
        }
    }
}

/// `ln(max(p, floor)/max(p', floor))`.
pub fn clamped_log_ratio(p: f64, p_prime: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0).ln() - p_prime.clamp(PROB_FLOOR, 1.0).ln()
}

struct PairOutcome {
    count: u64,
    diverged: bool,
    worst_loss: f64,
    worst_example_loss: f64,
    max_log_ratio: f64,
}

fn run_pair(
    data: &Dataset,
    neighbour: &Dataset,
    arch: MlpArch,
    settings: &TrainSettings,
    epsilon: f64,
    seed: u64,
) -> Result<PairOutcome> {
    let (m, log) = train_from_seed(arch, data, settings, seed)?;
    let (m_prime, log_prime) = train_from_seed(arch, neighbour, settings, seed)?;
    let worst_loss = log.worst_loss().max(log_prime.worst_loss());
    if log.diverged() || log_prime.diverged() {
        return Ok(PairOutcome {
            count: 0,
            diverged: true,
            worst_loss,
            worst_example_loss: f64::NAN,
            max_log_ratio: f64::NAN,
        });
    }
    let p = m.forward(data.features());
    let q = m_prime.forward(data.features());
    let mut count = 0;
    let mut max_log_ratio = f64::NEG_INFINITY;
    for (i, &c) in data.labels().iter().enumerate() {
        let r = clamped_log_ratio(p[(i, c)], q[(i, c)]);
        max_log_ratio = max_log_ratio.max(r);
        if r > epsilon {
            count += 1;
        }
    }
    let worst_example_loss = m
        .per_example_loss(data)
        .into_iter()
        .chain(m_prime.per_example_loss(neighbour))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(PairOutcome {
        count,
        diverged: false,
        worst_loss,
        worst_example_loss,
        max_log_ratio,
    })
}

/// Estimates `δ` at a fixed `ε`: in each outer round a neighbouring dataset is
/// formed at a uniformly drawn row, `T₂` paired trainings are run, and every
/// training point with `ln(p_c(x)/p'_c(x)) > ε` is counted.
pub fn estimate_delta(cfg: &AuditConfig, data: &Dataset) -> Result<AuditReport> {
    let start = Instant::now();
    cfg.validate(data)?;
    let arch = MlpArch::for_dataset(data, cfg.hidden, cfg.activation)?;
    let n = data.len();
    let adjacent_indices: Vec<usize> = (0..cfg.outer)
        .map(|t1| NoiseStream::new(derive_seed(cfg.seed, &[OUTER_KEY, t1 as u64]), 0).below(n))
        .collect();
    let neighbours: Vec<Dataset> = adjacent_indices
        .iter()
        .map(|&j| make_adjacent(data, j, &cfg.adjacency))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.outer)
        .flat_map(|t1| (0..cfg.inner).map(move |t2| (t1, t2)))
        .collect();
    let outcomes: Vec<PairOutcome> = jobs
        .par_iter()
        .map(|&(t1, t2)| {
            let seed = derive_seed(cfg.seed, &[t1 as u64, t2 as u64]);
            run_pair(data, &neighbours[t1], arch, &cfg.train, cfg.epsilon, seed)
        })
        .collect::<Result<_>>()?;

    let mut counts = vec![0u64; cfg.outer];
    let mut completed = vec![0usize; cfg.outer];
    let mut excluded_rounds = Vec::new();
    let mut worst_loss = f64::NEG_INFINITY;
    let mut worst_example_loss = f64::NEG_INFINITY;
    let mut max_log_ratio = f64::NEG_INFINITY;
    for (&(t1, t2), o) in jobs.iter().zip(&outcomes) {
        worst_loss = worst_loss.max(o.worst_loss);
        if o.diverged {
            excluded_rounds.push((t1, t2));
            continue;
        }
        counts[t1] += o.count;
        completed[t1] += 1;
        worst_example_loss = worst_example_loss.max(o.worst_example_loss);
        max_log_ratio = max_log_ratio.max(o.max_log_ratio);
    }
    // An outer round with no completed training carries no evidence; it is
    // reported as the vacuous δ = 1.
    let delta_per_outer: Vec<f64> = counts
        .iter()
        .zip(&completed)
        .map(|(&c, &k)| if k == 0 { 1.0 } else { c as f64 / (k * n) as f64 })
        .collect();
    let delta = delta_per_outer.iter().cloned().fold(0.0, f64::max);
    Ok(AuditReport {
        epsilon: cfg.epsilon,
        delta_per_outer,
        delta,
        counts,
        total_comparisons: completed.iter().map(|&k| (k * n) as u64).sum(),
        adjacent_indices,
        excluded_rounds,
        worst_loss,
        worst_example_loss,
        max_log_ratio,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Settings for [`membership_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MembershipConfig {
    /// Row whose membership is tested.
    pub target: usize,
    pub runs: usize,
    pub hidden: usize,
    #[serde(default)]
    pub activation: Activation,
    pub train: TrainSettings,
    #[serde(default = "remove")]
    pub adjacency: Adjacency,
    pub seed: u64,
}

fn remove() -> Adjacency {
    Adjacency::Remove
}

impl MembershipConfig {
    pub fn validate(&self, data: &Dataset) -> Result<()> {
        if self.runs < 2 {
            return Err(invalid("runs", "need at least two runs"));
        }
        if self.target >= data.len() {
            return Err(invalid("target", format!("row {} outside dataset of {}", self.target, data.len())));
        }
        MlpArch::for_dataset(data, self.hidden, self.activation)?;
        self.train.validate(data.len())?;
        if self.adjacency == Adjacency::Remove {
            self.train.validate(data.len() - 1)?;
        }
        Ok(())
    }
}

/// Losses on the target row under models trained with and without it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipResult {
    pub loss_d: Vec<f64>,
    pub loss_dprime: Vec<f64>,
    /// `|mean(loss_d) − mean(loss_dprime)|`.
    pub mean_gap: f64,
    /// Largest training (minibatch) loss over all iterations and runs.
    pub worst_loss: f64,
    /// Largest per-example loss on the training data at the end of any run.
    pub worst_example_loss: f64,
    /// Runs excluded because a training diverged.
    pub excluded_runs: Vec<usize>,
}

impl MembershipResult {
    /// CSV with header `run,arm,loss_on_target`, arms `D` and `Dprime`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "run,arm,loss_on_target")?;
        for (r, (a, b)) in self.loss_d.iter().zip(&self.loss_dprime).enumerate() {
            writeln!(w, "{r},D,{a:.16e}")?;
            writeln!(w, "{r},Dprime,{b:.16e}")?;
        }
        Ok(())
    }
}

/// Trains `runs` paired models on `D` and `D'` and records the loss each
/// assigns to the target row.
pub fn membership_experiment(cfg: &MembershipConfig, data: &Dataset) -> Result<MembershipResult> {
    cfg.validate(data)?;
    let arch = MlpArch::for_dataset(data, cfg.hidden, cfg.activation)?;
    let neighbour = make_adjacent(data, cfg.target, &cfg.adjacency)?;
    let target = data.subset(&[cfg.target]);
    let per_run: Vec<_> = (0..cfg.runs)
        .into_par_iter()
        .map(|r| -> Result<_> {
            let seed = derive_seed(cfg.seed, &[r as u64]);
            let (m, log) = train_from_seed(arch, data, &cfg.train, seed)?;
            let (mp, logp) = train_from_seed(arch, &neighbour, &cfg.train, seed)?;
            let diverged = log.diverged() || logp.diverged();
            let worst_example = m
                .per_example_loss(data)
                .into_iter()
                .chain(mp.per_example_loss(&neighbour))
                .fold(f64::NEG_INFINITY, f64::max);
            Ok((
                m.per_example_loss(&target)[0],
                mp.per_example_loss(&target)[0],
                log.worst_loss().max(logp.worst_loss()),
                worst_example,
                diverged,
            ))
        })
        .collect::<Result<_>>()?;
    let mut out = MembershipResult {
        loss_d: Vec::with_capacity(cfg.runs),
        loss_dprime: Vec::with_capacity(cfg.runs),
        mean_gap: 0.0,
        worst_loss: f64::NEG_INFINITY,
        worst_example_loss: f64::NEG_INFINITY,
        excluded_runs: Vec::new(),
    };
    for (r, (a, b, worst, worst_example, diverged)) in per_run.into_iter().enumerate() {
        out.worst_loss = out.worst_loss.max(worst);
        if diverged {
            out.excluded_runs.push(r);
            continue;
        }
        out.loss_d.push(a);
        out.loss_dprime.push(b);
        out.worst_example_loss = out.worst_example_loss.max(worst_example);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    out.mean_gap = (mean(&out.loss_d) - mean(&out.loss_dprime)).abs();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{synth_blobs, NoiseBasis, NoiseScheme};

    fn settings(sigma2: f64) -> TrainSettings {
        TrainSettings {
            scheme: NoiseScheme::AnisotropicPerParam { sigma2 },
            lr: 0.1,
            iters: 40,
            batch: 10,
            noise_on: NoiseBasis::Minibatch,
        }
    }

    fn config(adjacency: Adjacency, epsilon: f64) -> AuditConfig {
        AuditConfig {
            epsilon,
            outer: 2,
            inner: 2,
            hidden: 4,
            activation: Activation::Relu,
            train: settings(1e-2),
            adjacency,
            seed: 17,
        }
    }

    #[test]
    fn identical_neighbour_gives_zero_delta() {
        let d = synth_blobs(2, 15, 2, 3.0, 1).unwrap();
        let r = estimate_delta(&config(Adjacency::Identical, 1e-3), &d).unwrap();
        assert_eq!(r.delta, 0.0);
        assert_eq!(r.max_log_ratio, 0.0);
        assert_eq!(r.total_comparisons, 2 * 2 * 30);
    }

    #[test]
    fn unreachable_threshold_gives_zero_delta() {
        let d = synth_blobs(2, 15, 2, 3.0, 1).unwrap();
        let r = estimate_delta(&config(Adjacency::FlipLabel, 1e6), &d).unwrap();
        assert_eq!(r.delta, 0.0);
        assert!(r.max_log_ratio.is_finite());
    }

    #[test]
    fn reports_are_reproducible() {
        let d = synth_blobs(2, 15, 2, 3.0, 1).unwrap();
        let cfg = config(Adjacency::FlipLabel, 0.01);
        let a = estimate_delta(&cfg, &d).unwrap();
        let b = estimate_delta(&cfg, &d).unwrap();
        assert_eq!(a.without_timing(), b.without_timing());
        assert!(a.delta_per_outer.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a.delta, a.delta_per_outer.iter().cloned().fold(0.0, f64::max));
    }

    #[test]
    fn clamped_ratio_is_finite() {
        assert_eq!(clamped_log_ratio(0.0, 0.0), 0.0);
        assert!((clamped_log_ratio(1.0, 0.0) - 12.0 * 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn membership_null_case_and_csv() {
        let d = synth_blobs(2, 10, 2, 2.0, 4).unwrap();
        let cfg = MembershipConfig {
            target: 3,
            runs: 4,
            hidden: 3,
            activation: Activation::Relu,
            train: settings(1e-2),
            adjacency: Adjacency::Identical,
            seed: 5,
        };
        let r = membership_experiment(&cfg, &d).unwrap();
        assert_eq!(r.loss_d, r.loss_dprime);
        assert_eq!(r.mean_gap, 0.0);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 4);
        assert!(text.lines().nth(2).unwrap().starts_with("0,Dprime,"));
    }

    #[test]
    fn membership_rejects_bad_config() {
        let d = synth_blobs(2, 5, 2, 2.0, 4).unwrap();
        let mut cfg = MembershipConfig {
            target: 30,
            runs: 4,
            hidden: 3,
            activation: Activation::Relu,
            train: settings(1e-2),
            adjacency: Adjacency::Remove,
            seed: 5,
        };
        assert!(membership_experiment(&cfg, &d).is_err());
        cfg.target = 0;
        cfg.runs = 1;
        assert!(membership_experiment(&cfg, &d).is_err());
    }
}
