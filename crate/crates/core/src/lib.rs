//! Numerical library for option pricing under Lévy jump models with
//! large-trader feedback, variance-minimizing hedging, and dynamic portfolio
//! selection via a Riccati-transformed HJB solver.
//!
//! Module map:
//! * [`levy`] — Lévy measure families, admissibility envelopes, compensated
//!   quadrature, martingale drift.
//! * [`pricing`] — Black-Scholes and jump-diffusion series closed forms.
//! * [`feedback`] — implicit shift functions H and ξ, feedback volatility,
//!   drift correction δ.
//! * [`pide`] — implicit finite-difference solver for the transformed linear
//!   PIDE and its variable-coefficient feedback variant.
//! * [`hedging`] — pointwise variance-minimizing hedge and its ρ-expansion.
//! * [`portfolio`] — parametric Markowitz value function α(φ) on simplex and
//!   discrete decision sets.
//! * [`hjb`] — finite-volume solver for the Riccati-transformed HJB Cauchy
//!   problem.
//! * [`config`] / [`runner`] — key=value scenario files and the batch
//!   front-end behind the CLI.

pub mod config;
pub mod error;
pub mod feedback;
pub mod hedging;
pub mod hjb;
pub mod levy;
pub mod pide;
pub mod portfolio;
pub mod pricing;
pub mod quad;
pub mod runner;
pub mod special;

pub use error::{Error, Result};
