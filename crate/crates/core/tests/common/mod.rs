//! Hand-built worlds and the refinement rule-table oracle shared by the
//! integration tests.
#![allow(dead_code)]

use bottleneck_marl::psar::{Kinematics, PsarContext, PsarThresholds, RefinementTag};
use bottleneck_marl::sim::{
    sample_fleet, DrivingStyle, FleetConfig, RoadNetwork, Segment, SimConfig, StyleKind, Vehicle, VehicleKind, WorldState,
    VEHICLE_LENGTH, VEHICLE_WIDTH,
};

/// Straight road with a constant number of lanes.
pub fn straight(lanes: usize) -> RoadNetwork {
    RoadNetwork::new(1300.0, vec![Segment { start: 0.0, end: 1300.0, lanes }], 25.0, 3.2).unwrap()
}

pub fn car(net: &RoadNetwork, id: u32, kind: VehicleKind, lane: usize, x: f64, v: f64) -> Vehicle {
    Vehicle {
        id,
        kind,
        x,
        y: net.lane_center(lane),
        v,
        theta: 0.0,
        lane,
        length: VEHICLE_LENGTH,
        width: VEHICLE_WIDTH,
        style: (kind == VehicleKind::Hdv).then(|| DrivingStyle::preset(StyleKind::Normal)),
        lane_change: None,
        cooldown: 0.0,
        accel: 0.0,
    }
}

pub fn cav(net: &RoadNetwork, id: u32, lane: usize, x: f64, v: f64) -> Vehicle {
    car(net, id, VehicleKind::Cav, lane, x, v)
}

pub fn hdv(net: &RoadNetwork, id: u32, lane: usize, x: f64, v: f64) -> Vehicle {
    car(net, id, VehicleKind::Hdv, lane, x, v)
}

/// World holding exactly `vehicles` at time zero.
pub fn world_with(net: &RoadNetwork, sim: &SimConfig, mut vehicles: Vec<Vehicle>) -> WorldState {
    let fleet = FleetConfig { n_vehicles: 1, penetration: 0.0, ..FleetConfig::default() };
    let mut w = sample_fleet(net, sim, &fleet, 0).unwrap();
    vehicles.sort_by_key(|v| v.id);
    w.initial_count = vehicles.len();
    w.vehicles = vehicles;
    w.history.clear();
    w.push_history();
    w
}

pub fn world(net: &RoadNetwork, vehicles: Vec<Vehicle>) -> WorldState {
    world_with(net, &SimConfig::default(), vehicles)
}

/// Environment over a hand-built world; the scenario reports one initial CAV.
pub fn env_with(net: &RoadNetwork, vehicles: Vec<Vehicle>) -> bottleneck_marl::env::Env {
    let cfg = bottleneck_marl::env::ScenarioConfig {
        network: Some(net.clone()),
        fleet: FleetConfig { n_vehicles: 1, penetration: 1.0, ..FleetConfig::default() },
        ..Default::default()
    };
    let mut env = bottleneck_marl::env::Env::reset(&cfg, 0).unwrap();
    env.world = world_with(net, &env.world.cfg.clone(), vehicles);
    env
}

/// Decision list written from the rule table: predicates first, then the
/// first matching row of each branch.
pub fn psar_oracle(a_hat: usize, c: &PsarContext, th: &PsarThresholds) -> (usize, RefinementTag, f64) {
    struct P {
        d: f64,
        t: f64,
        dv: f64,
    }
    let pair = |o: &Kinematics| {
        let e = &c.ego;
        let d = (o.x - e.x - e.length) * e.theta.cos() - e.width * 0.5 * e.theta.sin().abs();
        let dv = e.v * e.theta.cos().abs() - o.v * o.theta.cos().abs();
        P { d, t: if dv == 0.0 { f64::INFINITY } else { d / dv }, dv }
    };
    let rk = |p: &P, d0: f64, t0: f64| p.d.abs() <= d0 && 0.0 < p.t && p.t <= t0;
    let (mut a, mut tag, mut b) = (a_hat, RefinementTag::None, 0.0);
    if matches!(a, 1 | 2) {
        if let Some(p) = c.target_front.as_ref().map(pair) {
            if p.d <= th.d_lc_min || rk(&p, th.d_safe, th.tau_safe) {
                (a, tag) = (0, RefinementTag::CancelLc);
            } else if rk(&p, th.d_safe, th.tau_att) || rk(&p, th.d_att, th.tau_safe) {
                (tag, b) = (RefinementTag::DecelLc, p.dv.abs().min(th.b_max));
            }
        }
        if a != 0 {
            if let Some(p) = c.target_rear.as_ref().map(pair) {
                let soft = rk(&p, th.d_safe, th.tau_att) || rk(&p, th.d_att, th.tau_safe);
                if p.d.abs() <= th.d_lc_min || rk(&p, th.d_safe, th.tau_safe) || (soft && b != 0.0) {
                    (a, tag) = (0, RefinementTag::CancelLc);
                }
            }
        }
    }
    if matches!(a, 0 | 3 | 4) {
        if let Some(p) = c.front.as_ref().map(pair) {
            let rows: [(bool, usize, RefinementTag); 4] = [
                (p.d <= th.d_warn && p.t > 0.0, 4, RefinementTag::ForceBrake),
                (p.d <= th.d_safe || (p.d <= th.d_warn && a == 3), 0, RefinementTag::SupprAccel),
                (rk(&p, th.d_att, th.tau_warn), 4, RefinementTag::ForceBrake),
                (rk(&p, th.d_att, th.tau_att) && a == 3, 0, RefinementTag::SupprAccel),
            ];
            if let Some(&(_, na, nt)) = rows.iter().find(|r| r.0) {
                (a, tag) = (na, nt);
            }
        }
    }
    if tag != RefinementTag::DecelLc {
        b = 0.0;
    }
    (a, tag, b)
}
