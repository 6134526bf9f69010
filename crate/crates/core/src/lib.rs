//! Monte Carlo laboratory for systems of independent one-dimensional random
//! walks in a common i.i.d. random environment.
//!
//! The crate is organized around six concerns:
//!
//! * [`environment`] — the site-probability law, reproducible lazy
//!   environments, and the model's analytic invariants (mean odds ratio,
//!   asymptotic speed, tail exponent, stationary potential).
//! * [`walker`] — quenched single-walk simulation, hitting times, and
//!   backtracking statistics.
//! * [`particles`] — particle configurations, environment-dependent product
//!   initial laws, and exact finite-window dynamics via site-wise binomial
//!   splitting.
//! * [`coupling`] — the matched/unmatched-particle coupling of two systems in
//!   the same environment, discrepancy decay, and the two-walk meeting
//!   experiment.
//! * [`estimators`] / [`stats`] — deviation maxima, slowdown probabilities and
//!   scaling fits, hydrodynamic transport error, Poisson goodness of fit, and
//!   total-variation distance.
//!
//! All numeric kernels are generic over the scalar type through [`Scalar`]
//! (any of `f32`/`f64`); [`Real`] is the concrete alias used by the
//! experiment harness.

pub mod coupling;
pub mod environment;
pub mod error;
pub mod estimators;
pub mod numeric;
pub mod particles;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod walker;

pub use error::ModelError;
pub use scalar::Scalar;

/// Default scalar type for experiments. All harness-level code and every
/// acceptance tolerance is expressed in this precision.
pub type Real = f64;

/// Lattice site index.
pub type Site = i64;
