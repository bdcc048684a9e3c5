//! Command-level DRAM read-disturbance simulator.
//!
//! `coldsim` models an open-bitline DRAM bank at the granularity of
//! ACT/PRE/REF commands. Activating a row drives every bitline of its
//! subarray (and, through the shared sense amplifiers, half of the bitlines
//! of each neighboring subarray) to the stored data's voltage. Charged cells
//! hanging off a perturbed bitline leak faster the further the bitline sits
//! from the precharge level, and a cell whose accumulated damage reaches its
//! voltage-dependent flip time discharges. The same accrual model covers
//! column-based disturbance, retention loss (bitline at VDD/2), and a simple
//! RowHammer/RowPress neighbor-row term.
//!
//! On top of the engine sit the measurement algorithms (bisection search for
//! the time to first bitflip, blast radius, subarray reverse engineering via
//! row-copy probing), refresh mitigations (rate scaling, proactive victim-row
//! refresh, retention-aware refresh with bitmap or Bloom-filter weak-row
//! sets), closed-form refresh throughput/energy analytics, and Hamming-code
//! error-injection tooling.
//!
//! All durations are `f64` nanoseconds unless a name says otherwise. Every
//! run is deterministic given a geometry, a profile distribution, and a seed.

// Negated comparisons like `!(v > 0.0)` are validity guards that also catch
// NaN; the positively-phrased forms do not.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod array;
pub mod characterize;
pub mod config;
pub mod ecc;
pub mod engine;
pub mod error;
pub mod mitigate;
pub mod rng;
pub mod stream;

pub use error::SimError;

/// Duration helpers: nanoseconds are the base unit.
pub mod units {
    pub const NS: f64 = 1.0;
    pub const US: f64 = 1e3;
    pub const MS: f64 = 1e6;
    pub const SEC: f64 = 1e9;
}
