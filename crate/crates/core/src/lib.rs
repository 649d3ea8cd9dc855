//! Flow matching workbench.
//!
//! Implements conditional flow matching with three coupling strategies over
//! 2D toy distributions:
//!
//! - independent pairing (I-CFM),
//! - Gibbs-kernel weighted pairing (W-CFM), where each independently drawn
//!   pair `(x, y)` enters the loss with weight `exp(-c(x, y) / eps)`,
//! - minibatch optimal transport pairing (OT-CFM), via an exact assignment
//!   solver or log-domain Sinkhorn.
//!
//! The crate also ships the evaluation stack used by the benchmarks
//! (empirical W2^2, normalized path energy, PRDC, KDE grids) and the
//! diagnostics for tilt-density estimation, epsilon selection and the
//! large-batch equivalence check.
//!
//! See the `examples/` directory for one runnable example per capability;
//! the `flowmatch` binary exposes the same machinery as subcommands.

pub mod bench;
pub mod coupling;
pub mod diagnostics;
pub mod error;
pub mod manifest;
pub mod metrics;
pub mod net;
pub mod ode;
pub mod rng;
pub mod toydata;
pub mod trainer;

pub use error::{Error, Result};
