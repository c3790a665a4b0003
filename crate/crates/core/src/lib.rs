//! Optimal power/subcarrier allocation, SIC decoding orders and time-sharing
//! schedules for multi-user downlinks where subscriber antennas outnumber
//! base-station antennas.
//!
//! The pipeline works on the dual uplink: a broadcast channel set is mapped
//! to its multiple-access dual ([`duality`]), the convex weighted energy (or
//! weighted sum-rate) problem is solved there ([`allocator`]), the decoding
//! order is read off the rate-floor multipliers, users with tied multipliers
//! are time-shared ([`timeshare`]), and the covariances are mapped back to
//! the broadcast side. [`baselines`] holds OMA, NOMA and MC-NOMA reference
//! schemes and [`harness`] drives experiment sweeps.

pub mod allocator;
pub mod baselines;
pub mod channel;
pub mod duality;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod sic;
pub mod timeshare;

pub use error::{Error, Result};
