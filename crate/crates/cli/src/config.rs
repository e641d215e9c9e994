use std::path::{Path, PathBuf};

use aniso_privacy::audit::{AuditConfig, MembershipConfig};
use aniso_privacy::bounds::RegularityParams;
use aniso_privacy::covopt::Grid2;
use aniso_privacy::nn::{Activation, Adjacency, TrainSettings};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, FieldError};

pub const SCHEMA_VERSION: u32 = 1;

/// A parsed experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub experiment: Experiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    Simulate(SimulateExp),
    OuExact(OuExactExp),
    KlBound(KlBoundExp),
    ClosedBounds(ClosedBoundsExp),
    OptimizeCov(OptimizeCovExp),
    GridSurface(GridSurfaceExp),
    QuadTradeoff(QuadTradeoffExp),
    DpAudit(DpAuditExp),
    Membership(MembershipExp),
    PrivacyTranslate(PrivacyTranslateExp),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Simulate(_) => "simulate",
            Experiment::OuExact(_) => "ou-exact",
            Experiment::KlBound(_) => "kl-bound",
            Experiment::ClosedBounds(_) => "closed-bounds",
            Experiment::OptimizeCov(_) => "optimize-cov",
            Experiment::GridSurface(_) => "grid-surface",
            Experiment::QuadTradeoff(_) => "quad-tradeoff",
            Experiment::DpAudit(_) => "dp-audit",
            Experiment::Membership(_) => "membership",
            Experiment::PrivacyTranslate(_) => "privacy-translate",
        }
    }
}

/// Rows of a dense matrix.
pub type Rows = Vec<Vec<f64>>;

/// `f(x) = ½‖Bx − b‖²` with noise covariance `Σ` and start `x0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub design: Rows,
    pub target: Vec<f64>,
    pub noise: Rows,
    pub x0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v0: Option<Rows>,
}

/// Drift of a quadratic problem without the noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticSpec {
    pub design: Rows,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CovarianceChoice {
    Constant { matrix: Rows },
    Isotropic { variance: f64 },
    /// SGD covariance of the least-squares summands, one per design row.
    Minibatch { batch: usize, replacement: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateExp {
    pub drift: QuadraticSpec,
    pub covariance: CovarianceChoice,
    pub x0: Vec<f64>,
    pub step: f64,
    pub horizon: f64,
    pub paths: usize,
    #[serde(default = "one")]
    pub record_stride: usize,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuExactExp {
    pub problem: ProblemSpec,
    pub times: Vec<f64>,
    /// Also report the invariant law.
    #[serde(default = "yes")]
    pub invariant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KlBoundExp {
    pub drift: QuadraticSpec,
    pub drift_prime: QuadraticSpec,
    pub noise: Rows,
    pub x0: Vec<f64>,
    pub step: f64,
    pub horizon: f64,
    pub paths: usize,
    #[serde(default = "one")]
    pub record_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClosedBoundsExp {
    pub params: RegularityParams,
    /// Times at which `C_t` and `ξ_t` are tabulated.
    #[serde(default)]
    pub times: Vec<f64>,
    /// Scale `M` inside `ξ_t`.
    #[serde(default = "unit")]
    pub m: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeCovExp {
    pub s: Vec<f64>,
    pub zetas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSurfaceExp {
    pub s: Vec<f64>,
    pub grid: Grid2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSweepSpec {
    pub levels: Vec<f64>,
    pub base: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadTradeoffExp {
    pub problem: QuadraticSpec,
    pub problem_prime: QuadraticSpec,
    pub x0: Vec<f64>,
    /// Evaluation time; omit for the invariant laws.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    pub grid: Grid2,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis_sweep: Option<AxisSweepSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    Blobs {
        classes: usize,
        per_class: usize,
        dim: usize,
        separation: f64,
        /// Defaults to the top-level seed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Csv {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        num_classes: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpAuditExp {
    pub dataset: DatasetSpec,
    pub epsilon: f64,
    pub outer: usize,
    pub inner: usize,
    pub hidden: usize,
    #[serde(default)]
    pub activation: Activation,
    pub train: TrainSettings,
    #[serde(default)]
    pub adjacency: Adjacency,
}

impl DpAuditExp {
    pub fn audit_config(&self, seed: u64) -> AuditConfig {
        AuditConfig {
            epsilon: self.epsilon,
            outer: self.outer,
            inner: self.inner,
            hidden: self.hidden,
            activation: self.activation,
            train: self.train,
            adjacency: self.adjacency.clone(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MembershipExp {
    pub dataset: DatasetSpec,
    pub target: usize,
    pub runs: usize,
    pub hidden: usize,
    #[serde(default)]
    pub activation: Activation,
    pub train: TrainSettings,
    #[serde(default = "remove")]
    pub adjacency: Adjacency,
}

fn remove() -> Adjacency {
    Adjacency::Remove
}

impl MembershipExp {
    pub fn membership_config(&self, seed: u64) -> MembershipConfig {
        MembershipConfig {
            target: self.target,
            runs: self.runs,
            hidden: self.hidden,
            activation: self.activation,
            train: self.train,
            adjacency: self.adjacency.clone(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyTranslateExp {
    pub kl: f64,
    #[serde(rename = "C_t")]
    pub c_t: f64,
    /// Lipschitz constant of the privacy loss; never estimated.
    pub lip: f64,
    #[serde(default)]
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub deltas: Vec<f64>,
}

/// A config together with the directory its relative paths refer to.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: Config,
    pub base_dir: PathBuf,
}

impl Loaded {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }

    /// SHA-256 of the config re-serialized with defaults filled in and keys
    /// sorted, so formatting and key order do not change it.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(&self.config).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

pub fn load(path: &Path) -> Result<Loaded, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let config: Config = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let message = inner.to_string();
        // Missing fields are reported against the enclosing object.
        let path = match missing_field(&message) {
            Some(field) if path == "." => field.to_string(),
            Some(field) => format!("{path}.{field}"),
            None => path,
        };
        CliError::Validation(vec![FieldError::new(path, message)])
    })?;
    if config.schema_version != SCHEMA_VERSION {
        return Err(CliError::Validation(vec![FieldError::new(
            "schema_version",
            format!("unsupported schema version {}, expected {SCHEMA_VERSION}", config.schema_version),
        )]));
    }
    let base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(Loaded { config, base_dir })
}

fn missing_field(message: &str) -> Option<&str> {
    let rest = message.strip_prefix("missing field `")?;
    rest.split('`').next()
}
