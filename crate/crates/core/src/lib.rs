//! Hamiltonian MixFlows, composed-flow estimators, and a shadowing-window
//! diagnostic for finite-precision orbits.
//!
//! Maps are written once against [`precision::Real`] and evaluated either in
//! binary64 (the numerical flow) or in MPFR extended precision (the reference
//! "exact" flow, behind the `extended` feature).

pub mod dynamics;
pub mod error;
pub mod estimators;
pub mod mixflow;
pub mod parallel;
pub mod precision;
pub mod rng;
pub mod shadowing;
pub mod special;
pub mod stats;
pub mod targets;

pub use error::{Error, Result};
pub use precision::{PrecisionSpec, Real};
pub use rng::{make_rng, RngStream};
