//! Freeway microsimulation.

pub mod config;
pub mod driving;
pub mod events;
pub mod sentinel;
pub mod world;

pub use config::{BehaviorParams, LaneIndex, RoadConfig, SimConfig, VehicleClass};
pub use events::{Advisory, Crossing, Departure, Entry, EventLog, Trip};
pub use world::{simulate, LcState, SimError, VehicleState, World};
