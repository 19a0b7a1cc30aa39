//! Numerical laboratory for the stochastic wave equation in three space
//! dimensions driven by Gaussian noise that is white in time and has a
//! Riesz-type spatial covariance `φ(x)|x|^{-β}`.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`], [`fft`]: periodic lattice, real fields, 3-D transforms and the
//!   `SWE3` field dump format.
//! * [`covariance`]: the noise law, its spectral density and seeded sampling
//!   of spatially correlated increments.
//! * [`kernel`]: the wave propagator as a Fourier multiplier, its mollified
//!   version, the homogeneous solution and the Dalang integral.
//! * [`solver`]: the stochastic trigonometric scheme for the controlled mild
//!   equation, plus a Picard construction sharing the same discrete map.
//! * [`skeleton`]: the skeleton equation, the rate functional and a penalty /
//!   adjoint minimiser over controls.
//! * [`ldp`]: small-noise Monte Carlo, the additive-noise Gaussian oracle and
//!   slope extrapolation.
//! * [`regularity`]: Hölder norms, moduli of continuity, fractional Sobolev
//!   norms and increment-exponent estimation.
//!
//! Data-parallel loops go through [`exec`], which uses rayon when the
//! `parallel` feature is enabled and falls back to plain iteration otherwise.

pub mod covariance;
pub mod error;
pub mod exec;
pub mod fft;
pub mod grid;
pub mod kernel;
pub mod ldp;
pub mod optim;
pub mod quad;
pub mod regularity;
pub mod rng;
pub mod skeleton;
pub mod solver;

pub use covariance::{CovarianceSpec, DensityTable, NoiseIncrements, Phi};
pub use error::{Error, Result};
pub use exec::Exec;
pub use grid::{Field, Grid};
pub use kernel::InitialData;
pub use ldp::{ProbabilityEstimate, SlopeReport};
pub use regularity::{ExponentInterval, Region};
pub use skeleton::{EventKind, EventSpec, RateReport};
pub use solver::{Coefficient, CoefficientSpec, Control, SolverConfig, Trajectory};
