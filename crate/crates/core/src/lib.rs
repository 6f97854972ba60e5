//! Numerical laboratory for the canonical Gibbs ensemble of point vortices
//! on the unit torus and its Gaussian-field (Sine-Gordon) representation.
//!
//! The crate is organised around the objects the experiments need:
//!
//! * [`kernels`]: spectral evaluation and tabulation of the Green function
//!   `G`, the screened (Yukawa) part `W_m` and the smooth part `V_m = G - W_m`.
//! * [`field`]: exact spectral sampling of the Gaussian field with covariance
//!   `V_m` and the functionals built on it.
//! * [`gibbs`]: vortex configurations, the Hamiltonian, partition-function
//!   estimates, Metropolis sampling and correlation-function histograms.
//! * [`expansion`]: numerical checks of the exponential-integral inequalities,
//!   the Sine-Gordon identity and the remainder expansion.
//! * [`meanfield`]: free energy, sinh-Poisson residual and the decorrelation
//!   rate experiment.
//!
//! All randomised routines are pure functions of their seed; parallel
//! reductions are performed in a fixed order so results do not depend on the
//! number of worker threads.

pub mod error;
pub mod expansion;
pub mod fft;
pub mod field;
pub mod gibbs;
pub mod kernels;
pub mod meanfield;
pub mod rng;
pub mod stats;
pub mod sum;

pub use error::{Error, Result};
pub use stats::{Estimate, EstimateMethod};
