//! Quantum ghost imaging through a thin sheet of turbulence.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] holds the domain types and the closed-form coherence,
//!   ghost-image and visibility laws.
//! * [`turbulence`] generates seeded phase screens and estimates their
//!   structure functions.
//! * [`engine`] evaluates the unfolded two-photon propagation kernels, builds
//!   Monte Carlo and quadrature estimates of G², and synthesizes
//!   scanning-slit coincidence scans.
//! * [`fitting`] recovers visibility from scans and turbulence strength from
//!   visibility campaigns.
//! * [`harness`] is the configuration, campaign and figure-reproduction layer
//!   behind the `ghostimg` binary.
//!
//! All lengths are millimetres internally and all wavenumbers rad/mm.

// `!(x > 0.0)` is used on purpose to reject NaN along with nonpositive values.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::too_many_arguments,
    clippy::needless_range_loop
)]

pub mod engine;
pub mod error;
pub mod exec;
pub mod fitting;
pub mod harness;
pub mod model;
pub mod turbulence;
pub mod units;

pub use error::{Error, Result};
pub use exec::Execution;
