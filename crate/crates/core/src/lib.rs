//! Relative-entropy privacy accounting for noisy gradient dynamics with
//! anisotropic noise.
//!
//! Training by noisy gradient descent is modelled as a Langevin diffusion
//! `dx = b(x) dt + Σ^{1/2}(x) dW`. Running it on two neighbouring datasets
//! gives two laws `p_t`, `p'_t`; their relative entropy bounds what an
//! observer of the trained parameters can learn about the changed record.
//!
//! - [`linalg`]: symmetric and positive-definite matrix types.
//! - [`ou`]: exact Gaussian laws for quadratic objectives.
//! - [`sde`]: Euler–Maruyama ensembles with common-noise pairing.
//! - [`bounds`]: Monte-Carlo and closed-form relative-entropy bounds.
//! - [`privacy`]: membership advantage and `(ε, δ)` translation.
//! - [`covopt`]: noise covariance under a trace budget.
//! - [`nn`]: small softmax classifiers and noisy training.
//! - [`audit`]: empirical `δ` estimation and membership experiments.

pub mod audit;
pub mod bounds;
pub mod covopt;
pub mod error;
pub mod linalg;
pub mod nn;
pub mod ou;
pub mod privacy;
pub mod rng;
pub mod sde;

pub use error::{Error, Result};
pub use linalg::{SpdMatrix, SymMatrix};

/// Keeps the guide's snippets compiling and passing.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/gaussian-laws.md")]
    mod gaussian_laws {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/closed-bounds.md")]
    mod closed_bounds {}
    #[doc = include_str!("../../../book/src/privacy.md")]
    mod privacy {}
    #[doc = include_str!("../../../book/src/covariance.md")]
    mod covariance {}
    #[doc = include_str!("../../../book/src/auditing.md")]
    mod auditing {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
