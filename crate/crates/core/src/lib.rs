//! Generative discriminative machine (GDM).
//!
//! A ridge discriminator regularized by an ordinary-least-squares generator,
//! solved in closed form through a primal (feature-space) or dual
//! (subject-space) route. Because the fitted pattern is a fixed linear map of
//! the labels, its permutation null distribution has an analytic Gaussian
//! approximation, which this crate turns into p-values with
//! Benjamini–Hochberg control.
//!
//! Modules:
//!
//! - [`model`]: cohorts, label standardization, covariate bases, residualization
//! - [`solver`]: objective, primal/dual/path solvers, prediction
//! - [`baselines`]: ridge regression and its activation-pattern transform
//! - [`inference`]: Q matrix, analytic and permutation p-values, BH-FDR
//! - [`harness`]: cross-validation, confounding scenarios, multi-site protocol
//! - [`synth`]: synthetic cohorts with known ground truth
//! - [`io`] and [`workflow`]: CSV/JSON formats and the command-line runner

pub mod baselines;
pub mod error;
pub mod harness;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod model;
pub mod seeds;
pub mod solver;
pub mod synth;
pub mod workflow;

pub use error::{GdmError, Result};
pub use model::{Cohort, CovariateBasis, LabelTransform, Labels, ResidualizerFit};
pub use solver::{GdmHyperParams, GdmModel, GdmSolution, RoutePreference, SolverRoute};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
