//! Hegselmann-Krause bounded-confidence dynamics.
//!
//! * [`discrete`]: finitely many agents, one-step update, equilibria and clusters.
//! * [`continuum`]: agents indexed by an interval, with monotone piecewise-linear
//!   opinion profiles.
//! * [`counterexample`]: the double-S profile whose opinion range never drops to
//!   two, with per-step certificates of the invariants that keep it there.
//! * [`experiments`]: seeded Monte Carlo estimates and scaling scans.
//!
//! Everything is generic over [`numerics::Real`], so the same code runs on exact
//! rationals, doubles, or wide binary floats. The crate is `no_std` (with
//! `alloc`); file formats and the command line live in the companion crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod continuum;
pub mod counterexample;
pub mod discrete;
pub mod experiments;
pub mod numerics;

pub use numerics::{approx_eq, mean, Backend, BigFloat, NumericsError, PrecisionPolicy, Real, Scalar};
