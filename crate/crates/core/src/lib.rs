//! Numerical laboratory for the non-abelian X-ray transform on the Poincaré
//! disk and its small conformal perturbations.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: the disk model, metric quantities and complete geodesics.
//! * [`bundle`]: unitary connections, skew-Hermitian Higgs fields, gauges
//!   and curvature on the trivial bundle `M × C^d`.
//! * [`transport`]: transport ODEs along geodesics and scattering matrices.
//! * [`xray`]: scattering datasets over geodesic fans, dataset comparison and
//!   gauge recovery.
//! * [`spherebundle`]: discretised calculus on the unit sphere bundle
//!   (geodesic vector field, vertical/horizontal derivatives, Fourier modes,
//!   commutator and Pestov checks).
//! * [`reconstruct`]: Higgs field recovery by damped Gauss–Newton.
//! * [`config`]: the TOML experiment configuration shared with the CLI.

// `!(a < b)` is used on purpose so that NaN fails validation; index loops
// mirror the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bundle;
pub mod config;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod ode;
pub mod reconstruct;
pub mod spherebundle;
pub mod transport;
pub mod xray;

pub use error::{Error, Result};

/// Version string embedded in every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
