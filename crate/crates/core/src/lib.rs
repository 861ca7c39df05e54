//! Weight collapse of the ensemble Kalman filter viewed as a particle filter.
//!
//! The crate provides a linear-Gaussian state-space model, the exact Kalman
//! recursion, a perturbed-observation EnKF with localization and inflation,
//! standard and optimal-proposal particle filters, the importance weights
//! that turn an EnKF into a particle filter, and the diagnostics used to
//! measure weight degeneracy: effective dimensions, `G = E(w²)/E(w)²`, and
//! MSE statistics. The [`harness`] module runs the dimension sweeps and
//! writes CSV tables.
//!
//! ```
//! use collapselab::diagnostics::{closed_form_g, estimate_g};
//!
//! let uniform = estimate_g(&[0.0; 100]).unwrap();
//! assert!((uniform.g - 1.0).abs() < 1e-12);
//! assert!((closed_form_g(0.1, 10) - 1.0424).abs() < 1e-4);
//! ```

pub mod config;
pub mod diagnostics;
pub mod enkf;
pub mod error;
pub mod harness;
pub mod kalman;
pub mod model;
pub mod particle;
pub mod pf_enkf;
pub mod rng;

pub use error::{Error, Result};
pub use model::{Ensemble, Gaussian, LinearGaussianModel, WeightedEnsemble};

/// Runs the guide's snippets as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/enkf.md")]
    mod enkf {}
    #[doc = include_str!("../../../book/src/particle-filters.md")]
    mod particle_filters {}
    #[doc = include_str!("../../../book/src/pf-enkf.md")]
    mod pf_enkf {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
