//! Online ridepooling with an electric fleet.
//!
//! The crate is organised around the batch loop of an operator that pools
//! riders into high-capacity vehicles while keeping the fleet charged:
//!
//! - [`network`]: road graph, travel-time queries, charge-station placement.
//! - [`battery`]: charging curve, charge-up-to policy, linear discharge.
//! - [`demand`]: requests, demand profiles and the availability requirement.
//! - [`pooling`]: shareability graph, trip enumeration, assignment, rebalancing.
//! - [`schedule`]: long-horizon charge timing and short-horizon station assignment.
//! - [`benchmark`]: the demand-unaware threshold charging baseline.
//! - [`sim`]: the deterministic day simulator and its metrics.

pub mod battery;
pub mod benchmark;
pub mod demand;
pub mod network;
pub mod pooling;
pub mod schedule;
pub mod sim;

/// Wall-clock time and durations, in seconds.
pub type Seconds = f64;

pub use demand::RequestId;
pub use network::{NodeId, RoadNetwork, Station, StationId};
pub use pooling::VehicleId;
