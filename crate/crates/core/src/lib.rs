//! Drift-implicit Euler spectral-Galerkin (DIEG) simulation of one-dimensional
//! monotone SPDEs on (0, 1) with homogeneous Dirichlet conditions, driven by
//! multiplicative space-time white noise.
//!
//! The crate is organised bottom-up:
//!
//! - [`spectral`]: sine eigenbasis, quadrature transforms, Sobolev norms and the
//!   one-step resolvent `(I - τΔ_N)^{-1}`.
//! - [`model`]: drift/diffusion coefficient models, their structural constants
//!   and the Galerkin projections of the Nemytskii operators.
//! - [`noise`]: counter-based Gaussian increment streams and the multiplicative
//!   noise increment.
//! - [`scheme`]: the implicit time step, trajectories and the coupled discrete
//!   stochastic convolution.
//! - [`ergodic`]: Monte Carlo ensembles, time averages, Lyapunov and
//!   convolution-moment diagnostics.
//! - [`config`], [`output`], [`commands`], [`selftest`]: the experiment driver
//!   used by the `spde-ergo` binary.

pub mod commands;
pub mod config;
pub mod ergodic;
pub mod error;
pub mod model;
pub mod noise;
pub mod output;
pub mod scheme;
pub mod selftest;
pub mod spectral;

pub use error::{Error, Result};
pub use model::{CoefficientModel, ModelConstants, ModelSpec};
pub use noise::NoiseStream;
pub use scheme::{Dieg, PathState, SchemeParams, StepDiagnostics};
pub use spectral::SpectralCoeffs;
