//! Simulation of wavefront correction for spatially entangled photon pairs.
//!
//! A transmission matrix measured with a nearly separable (coherent-like)
//! two-photon state is used to correct a strongly entangled state through the
//! same thin scatterer. Correction is judged from second-order correlations.
//!
//! Modules, bottom up:
//!
//! - [`spdc`]: double-Gaussian pair amplitudes, coherence and Schmidt modes.
//! - [`optics`]: phase screen, SLM mask and the linear channel to the camera.
//! - [`propagation`]: pair propagation, reduced intensity, speckle contrast.
//! - [`wavefront`]: transmission matrices, correction masks, optimization.
//! - [`correlations`]: G² maps, projections, camera frames and estimation.
//! - [`experiments`]: configuration and the seeded experiment drivers.

pub mod correlations;
pub mod error;
pub mod experiments;
pub mod io;
pub mod optics;
pub mod propagation;
pub mod spdc;
pub mod stats;
pub mod wavefront;

pub use error::{Error, Result};
pub use num_complex::Complex64;
