//! Equitable longevity risk sharing pools.
//!
//! A mortality-impaired subgroup pays into a national plan calibrated on the
//! base population. This crate measures the inequity: the contribution rate
//! at which a small pool with an optimal payout would give the subgroup the
//! same expected lifetime utility as the guaranteed plan.
//!
//! - [`mortality`]: Gompertz law, survival, annuity factors.
//! - [`baseline`]: the guaranteed plan, its replacement rate and generosity.
//! - [`pool`]: binomial survivor-count quantities in closed form.
//! - [`lattice`]: Markov-chain solver for the accumulation moments.
//! - [`solver`]: optimal payout, utility and the equivalent rates.
//! - [`simulator`]: seeded income paths and percentile fans.
//! - [`oracle`]: enumeration and Monte Carlo cross-checks.

// `!(x > 0.0)` is deliberate throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod error;
pub mod lattice;
pub mod mortality;
pub mod oracle;
pub mod pool;
pub mod simulator;
pub mod solver;

pub use baseline::{calibrate_eta, EconomicBasis, LifeCycle, ReplacementRate};
pub use error::{Error, Result};
pub use lattice::{compute_b_vector, BVector, DeathRule, LatticeSpec, Resolution};
pub use mortality::{GompertzLaw, QuadratureSpec};
pub use pool::{BetaCurve, ExponentForm, PoolSpec, SGrid};
pub use solver::{equivalent_rates, EquivalenceResult, PayoutSchedule};
