//! Probability-free pathwise calculus on sampled càdlàg paths.
//!
//! The crate works on a fixed nested sequence of time partitions and provides:
//!
//! * [`partitions`]: nested partition sequences and their index arithmetic,
//! * [`paths`]: sampled càdlàg paths, stopped paths and vertical perturbations,
//! * [`functionals`]: non-anticipative functionals and their horizontal and
//!   vertical derivatives,
//! * [`quadvar`]: quadratic variation along a partition sequence and the
//!   related p-variation / interval / uniform notions,
//! * [`integration`]: Föllmer integrals and pathwise Itô residuals,
//! * [`trading`]: simple and limit self-financing strategies, delta hedging
//!   and the plausibility diagnostics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod functionals;
pub mod integration;
pub mod partitions;
pub mod paths;
pub mod quadvar;
pub mod trading;

mod convergence;

pub use convergence::{cauchy_gap, ConvergenceConfig, GapSummary};
pub use error::{Error, Result};
pub use functionals::{Functional, FdConfig};
pub use partitions::PartitionSequence;
pub use paths::{PathState, SampledPath, StoppedPath, VerticalPerturbation};
