//! Spatial-mode detection-efficiency mismatch under emulated atmospheric
//! turbulence.
//!
//! The crate is organised as a pipeline:
//!
//! * [`turbmath`] Noll-indexed Zernike polynomials and Kolmogorov statistics.
//! * [`screens`] random phase screens, tip-tilt correction and the
//!   29-member weighted hologram ensemble.
//! * [`optics`] far-field propagation, centroids and fiber coupling.
//! * [`receiver`] four-channel passive-basis polarization receiver and
//!   efficiency-map files.
//! * [`scan`] angle scans under an ensemble, weighted maps and attack angles.
//! * [`attack`] faked-state intercept-resend optimizer, QBER curves and
//!   unsafe radius.
//! * [`witness`] PPT feasibility check for intercept-resend compatibility.
//! * [`config`] / [`cli`] flat `key=value` run configuration and the
//!   `qkdturb` command pipelines.

pub mod attack;
pub mod cli;
pub mod config;
pub mod error;
pub mod optics;
pub mod receiver;
pub mod scan;
pub mod screens;
pub mod turbmath;
pub mod witness;

pub use error::{Error, Result};

/// Default wavelength of the attack laser (m).
pub const WAVELENGTH: f64 = 532e-9;
/// Default emulated beam diameter (m).
pub const BEAM_DIAMETER: f64 = 0.20;
