//! Mobility-on-demand with ride-sharing on a synthetic road network.

pub mod demand;
pub mod fleet;
pub mod network;
pub mod sim;

pub use demand::{generate_demand, ingest_trips_csv, DemandConfig, Pattern, RideRequest, Zoning};
pub use fleet::{train_fleet, EpisodeInfo, TrainingLog, TrainingSchedule};
pub use network::{LatticeConfig, NodeId, RoadNetwork};
pub use sim::{Decision, Observation, RequestStatus, SimConfig, Simulation, TraceEvent};
