//! Discrete-time microscopic traffic simulation on a straight bottleneck.

pub mod collision;
pub mod idm;
pub mod road;
pub mod style;
pub mod vehicle;
pub mod world;

pub use collision::{detect_collisions, footprints_overlap, Footprint};
pub use idm::{desired_gap, idm_accel, IdmParams, B_EMERGENCY};
pub use road::{MapKind, RoadNetwork, Segment};
pub use style::{DrivingStyle, LcParams, StyleDistribution, StyleKind};
pub use vehicle::{gap_between, half_extent_x, Lateral, LaneChange, Vehicle, VehicleKind, VEHICLE_LENGTH, VEHICLE_WIDTH};
pub use world::{sample_fleet, SLOT_NAMES, CavCommand, FleetConfig, HistoryFrame, KinState, SimConfig, StepReport, WorldState};
