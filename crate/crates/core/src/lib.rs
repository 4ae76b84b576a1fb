//! Spectral-Galerkin simulation of systems of stochastic damped wave
//! equations with state-dependent matrix friction and multiplicative noise,
//! together with the machinery of their small-mass (Smoluchowski-Kramers)
//! limit: the frozen Ornstein-Uhlenbeck cell problem, its invariant
//! covariance, the noise-induced drift of the limiting quasilinear
//! parabolic system, and the perturbed-test-function identities that
//! explain where that drift comes from.
//!
//! Module map:
//!
//! * [`spectral`]: Dirichlet eigenbasis on an interval, fractional Sobolev
//!   norms, sine-transform pair for pointwise nonlinearities;
//! * [`coefficients`]: the friction/forcing/diffusion triple and its smooth
//!   cutoff truncation;
//! * [`noise`]: reproducible counter-based Q-Wiener increments;
//! * [`wave`]: splitting integrator for the damped wave system with exact
//!   group rotation and exact frozen-friction damping;
//! * [`ou`]: cell-problem kernels, block-Sylvester covariance solve,
//!   Gaussian calculus on quadratic functionals;
//! * [`drift`]: the noise-induced drift, spectral / Monte-Carlo / ergodic;
//! * [`parabolic`]: semi-implicit integrator for the limit equation;
//! * [`corrector`]: corrector functions and generator identities;
//! * [`harness`]: mu-sweep, ablation, diagnostics, configuration, reports.

pub mod coefficients;
pub mod corrector;
pub mod drift;
pub mod error;
pub mod harness;
pub mod noise;
pub mod ou;
pub mod parabolic;
pub mod spectral;
pub mod wave;

pub use error::{Result, SimError};
