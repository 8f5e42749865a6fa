//! Lane-change advisory model and the freeway microsimulation that exercises it.
//!
//! The crate is `no_std` (with `alloc`) so the numerical core can be embedded
//! anywhere; file IO, configuration parsing and the command line live in the
//! `sentinel-cli` crate.
//!
//! * [`prob`] computes the probability that a vehicle can leave its lane (and
//!   possibly cross several more) before a target point, from a Monte Carlo
//!   base-case table and a recursive integral over extra lanes.
//! * [`oracle`] simulates the idealized lane-change process directly. It builds
//!   the base-case table and validates the recursion.
//! * [`sim`] is a fixed-step multi-lane freeway simulator with an incident
//!   blockage and the advisory agent riding on equipped cars.
//! * [`metrics`] turns event logs into delay, discharge and density measures.
#![cfg_attr(not(test), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

extern crate alloc;

pub mod metrics;
pub mod oracle;
pub mod prob;
pub mod sim;

/// Metres per foot.
pub const FT: f64 = 0.3048;
/// Metres per second in one mile per hour.
pub const MPH: f64 = 0.44704;
/// Metres per mile.
pub const MILE: f64 = 1609.344;
