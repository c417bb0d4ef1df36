//! Wave-optics Monte Carlo simulation of fluctuating-loss free-space optical
//! channels.
//!
//! The crate samples the channel transmittance by propagating a Gaussian beam
//! through sparse-spectrum phase screens, reconstructs the probability
//! distribution of transmittance (PDT), fits analytical PDT families to the
//! sampled data, compares them with Kolmogorov–Smirnov statistics, and
//! evaluates quadrature-squeezing transfer under transmittance postselection.
//!
//! Module map:
//!
//! * [`turbulence`] – refractive-index and phase spectra, Rytov parameter,
//!   theoretical phase-structure function.
//! * [`screens`] – phase-screen generators and structure-function estimation.
//! * [`optics`] – complex fields, Gaussian sources, split-step propagation.
//! * [`sampling`] – channel configuration, Monte Carlo driver, per-sample
//!   observables and the sample-file format.
//! * [`pdt`] – the transmittance-distribution model families.
//! * [`stats`] – KS statistics and the beam-statistics toolkit.
//! * [`squeezing`] – squeezing transfer with postselection.

pub mod analysis;
pub mod error;
pub mod fft;
pub mod math;
pub mod optics;
pub mod pdt;
pub mod presets;
pub mod rng;
pub mod sampling;
pub mod screens;
pub mod squeezing;
pub mod stats;
pub mod turbulence;
pub mod verify;

pub use error::{Error, Result};
