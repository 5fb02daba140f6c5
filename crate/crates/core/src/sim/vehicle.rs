use serde::{Deserialize, Serialize};

use super::idm::IdmParams;
use super::style::DrivingStyle;

pub const VEHICLE_LENGTH: f64 = 5.0;
pub const VEHICLE_WIDTH: f64 = 1.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum VehicleKind {
    Cav,
    Hdv,
}

impl VehicleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VehicleKind::Cav => "CAV",
            VehicleKind::Hdv => "HDV",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lateral {
    Stay,
    Left,
    Right,
}

impl Lateral {
    /// Target lane from `lane`, if it is an integer lane index at all.
    pub fn target(self, lane: usize) -> Option<usize> {
        match self {
            Lateral::Stay => Some(lane),
            Lateral::Left => Some(lane + 1),
            Lateral::Right => lane.checked_sub(1),
        }
    }
}

/// Ongoing lane change; the vehicle's `lane` already holds the target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaneChange {
    pub from: usize,
    pub steps_done: u32,
    pub y_from: f64,
    pub y_to: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: u32,
    pub kind: VehicleKind,
    /// Longitudinal position of the footprint centre, m.
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub theta: f64,
    pub lane: usize,
    pub length: f64,
    pub width: f64,
    /// Present for HDVs only.
    pub style: Option<DrivingStyle>,
    pub lane_change: Option<LaneChange>,
    /// Seconds until the next lane change is allowed.
    pub cooldown: f64,
    /// Acceleration realised over the last simulation step.
    pub accel: f64,
}

impl Vehicle {
    pub fn is_cav(&self) -> bool {
        self.kind == VehicleKind::Cav
    }

    pub fn lc_progress(&self, lc_steps: u32) -> Option<f64> {
        self.lane_change.map(|lc| f64::from(lc.steps_done) / f64::from(lc_steps))
    }

    /// A vehicle mid-change occupies both its origin and target lanes.
    pub fn occupies(&self, lane: usize) -> bool {
        self.lane == lane || self.lane_change.is_some_and(|lc| lc.from == lane)
    }

    pub fn occupied_lanes(&self) -> impl Iterator<Item = usize> {
        let from = self.lane_change.map(|lc| lc.from).filter(|&f| f != self.lane);
        std::iter::once(self.lane).chain(from)
    }

    /// Half of the footprint's extent along the road axis.
    pub fn half_extent_x(&self) -> f64 {
        half_extent_x(self.length, self.width, self.theta)
    }

    pub fn front(&self) -> f64 {
        self.x + self.half_extent_x()
    }

    pub fn rear(&self) -> f64 {
        self.x - self.half_extent_x()
    }

    /// Car-following parameters; CAVs are predicted with the normal style.
    pub fn idm_params(&self, cav_model: &IdmParams<f64>) -> IdmParams<f64> {
        self.style.map_or(*cav_model, |s| s.idm)
    }
}

pub fn half_extent_x(length: f64, width: f64, theta: f64) -> f64 {
    0.5 * length * theta.cos().abs() + 0.5 * width * theta.sin().abs()
}

/// Bumper gap from `follower` to `leader` along the road axis.
pub fn gap_between(follower: &Vehicle, leader: &Vehicle) -> f64 {
    leader.rear() - follower.front()
}
