use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::collision::detect_collisions;
use super::idm::{idm_accel_unchecked, IdmParams, B_EMERGENCY};
use super::road::RoadNetwork;
use super::style::{DrivingStyle, StyleDistribution};
use super::vehicle::{gap_between, half_extent_x, Lateral, LaneChange, Vehicle, VehicleKind, VEHICLE_LENGTH, VEHICLE_WIDTH};
use crate::error::{Error, Result};

/// Time stepping and manoeuvre constants of the simulator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    /// Simulation steps per lane change.
    pub lc_steps: u32,
    /// Speed floor in the heading formula, m/s.
    pub v_floor: f64,
    pub theta_max: f64,
    /// Distance ahead of a lane end at which merging becomes mandatory, m.
    pub lookahead: f64,
    pub history_depth: usize,
    /// Simulation steps between history frames.
    pub history_interval: u64,
    /// Car-following model used to predict CAVs and to stop them at lane ends.
    pub cav_model: IdmParams<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            lc_steps: 10,
            v_floor: 1.0,
            theta_max: 0.5,
            lookahead: 200.0,
            history_depth: 5,
            history_interval: 10,
            cav_model: DrivingStyle::preset(super::style::StyleKind::Normal).idm,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || self.lc_steps == 0 || !(self.v_floor > 0.0) || self.history_depth == 0 || self.history_interval == 0 {
            return Err(Error::Config("dt, lc_steps, v_floor, history depth and interval must be positive".into()));
        }
        if !(self.theta_max > 0.0 && self.theta_max < std::f64::consts::FRAC_PI_2) || !(self.lookahead >= 0.0) {
            return Err(Error::Config("theta_max must lie in (0, pi/2) and lookahead be non-negative".into()));
        }
        self.cav_model.validate()
    }
}

/// Vehicle population and initial placement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FleetConfig {
    pub n_vehicles: usize,
    /// CAV penetration rate.
    pub penetration: f64,
    pub styles: StyleDistribution,
    pub v_init: f64,
    /// Uniform extra spacing added to each initial gap, m.
    pub jitter: f64,
    /// Vehicles are placed in `[0, spawn_length]`; `None` uses the first
    /// segment minus a 20 m margin.
    pub spawn_length: Option<f64>,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self {
            n_vehicles: 25,
            penetration: 0.4,
            styles: StyleDistribution::D1,
            v_init: 15.0,
            jitter: 10.0,
            spawn_length: None,
        }
    }
}

/// Kinematic snapshot kept in the history ring.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinState {
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub theta: f64,
    pub lane: usize,
}

impl KinState {
    pub fn of(v: &Vehicle) -> Self {
        Self { x: v.x, y: v.y, v: v.v, theta: v.theta, lane: v.lane }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryFrame {
    pub time: f64,
    pub states: BTreeMap<u32, KinState>,
}

/// Commands for one CAV over one simulation step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CavCommand {
    pub accel: f64,
    pub lateral: Lateral,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub exited: Vec<u32>,
    /// CAV lane-change requests that could not start.
    pub rejected_lateral: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub network: RoadNetwork,
    pub cfg: SimConfig,
    /// Active vehicles, sorted by id.
    pub vehicles: Vec<Vehicle>,
    pub sim_time: f64,
    pub step_count: u64,
    pub exited: Vec<(u32, f64)>,
    pub initial_count: usize,
    pub history: VecDeque<HistoryFrame>,
    pub rng: ChaCha8Rng,
}

/// Seeded initial population; see [`FleetConfig`].
pub fn sample_fleet(network: &RoadNetwork, sim: &SimConfig, fleet: &FleetConfig, seed: u64) -> Result<WorldState> {
    network.validate()?;
    sim.validate()?;
    fleet.styles.validate()?;
    if fleet.n_vehicles == 0 {
        return Err(Error::Config("at least one vehicle is required".into()));
    }
    if !(0.0..=1.0).contains(&fleet.penetration) {
        return Err(Error::Config(format!("penetration {} outside [0, 1]", fleet.penetration)));
    }
    if !(fleet.v_init >= 0.0 && fleet.v_init <= network.speed_limit) || !(fleet.jitter >= 0.0) {
        return Err(Error::Config("initial speed or jitter out of range".into()));
    }
    let first = network.segments[0];
    let spawn = fleet.spawn_length.unwrap_or((first.end - 20.0).max(first.length() * 0.5));
    if !(spawn > 0.0 && spawn <= first.end) {
        return Err(Error::Config(format!("spawn length {spawn} must lie inside the first segment")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = fleet.n_vehicles;
    let n_cav = ((n as f64) * fleet.penetration).round() as usize;
    let mut kinds: Vec<VehicleKind> = (0..n).map(|k| if k < n_cav { VehicleKind::Cav } else { VehicleKind::Hdv }).collect();
    kinds.shuffle(&mut rng);
    let styles: Vec<Option<DrivingStyle>> = kinds
        .iter()
        .map(|k| match k {
            VehicleKind::Cav => None,
            VehicleKind::Hdv => Some(DrivingStyle::preset(fleet.styles.sample(&mut rng))),
        })
        .collect();

    let lanes = first.lanes;
    let mut last_rear: Vec<Option<f64>> = vec![None; lanes];
    let mut vehicles = Vec::with_capacity(n);
    for (k, (kind, style)) in kinds.into_iter().zip(styles).enumerate() {
        let lane = k % lanes;
        let idm = style.map_or(sim.cav_model, |s| s.idm);
        let half = 0.5 * VEHICLE_LENGTH;
        let front = match last_rear[lane] {
            None => spawn - rng.random_range(0.0..=fleet.jitter),
            Some(rear) => rear - idm.s0 - fleet.v_init * idm.t_headway - rng.random_range(0.0..=fleet.jitter),
        };
        let x = front - half;
        if x - half < 0.0 {
            return Err(Error::Config(format!(
                "{n} vehicles do not fit in {spawn:.0} m of {lanes} lanes at {} m/s",
                fleet.v_init
            )));
        }
        last_rear[lane] = Some(x - half);
        vehicles.push(Vehicle {
            id: k as u32,
            kind,
            x,
            y: network.lane_center(lane),
            v: fleet.v_init,
            theta: 0.0,
            lane,
            length: VEHICLE_LENGTH,
            width: VEHICLE_WIDTH,
            style,
            lane_change: None,
            cooldown: 0.0,
            accel: 0.0,
        });
    }
    let mut world = WorldState {
        network: network.clone(),
        cfg: sim.clone(),
        vehicles,
        sim_time: 0.0,
        step_count: 0,
        exited: Vec::new(),
        initial_count: n,
        history: VecDeque::with_capacity(sim.history_depth),
        rng,
    };
    world.push_history();
    Ok(world)
}

impl WorldState {
    pub fn vehicle(&self, id: u32) -> Option<&Vehicle> {
        self.index_of(id).map(|i| &self.vehicles[i])
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.vehicles.binary_search_by_key(&id, |v| v.id).ok()
    }

    pub fn cav_ids(&self) -> Vec<u32> {
        self.vehicles.iter().filter(|v| v.is_cav()).map(|v| v.id).collect()
    }

    pub fn active_count(&self) -> usize {
        self.vehicles.len()
    }

    pub fn detect_collisions(&self) -> Vec<(u32, u32)> {
        detect_collisions(&self.vehicles)
    }

    pub fn push_history(&mut self) {
        if self.history.len() == self.cfg.history_depth {
            self.history.pop_front();
        }
        let states = self.vehicles.iter().map(|v| (v.id, KinState::of(v))).collect();
        self.history.push_back(HistoryFrame { time: self.sim_time, states });
    }

    /// Leader and follower of `vehicles[ego]` among vehicles occupying `lane`.
    ///
    /// Vehicles are ordered by `(x, id)`, which breaks exact position ties.
    pub fn neighbours_in_lane(&self, ego: usize, lane: usize) -> (Option<usize>, Option<usize>) {
        let e = &self.vehicles[ego];
        let key = (e.x, e.id);
        let mut lead: Option<usize> = None;
        let mut follow: Option<usize> = None;
        for (i, v) in self.vehicles.iter().enumerate() {
            if i == ego || !v.occupies(lane) {
                continue;
            }
            let k = (v.x, v.id);
            if ahead(k, key) {
                if lead.is_none_or(|l| ahead((self.vehicles[l].x, self.vehicles[l].id), k)) {
                    lead = Some(i);
                }
            } else if follow.is_none_or(|f| ahead(k, (self.vehicles[f].x, self.vehicles[f].id))) {
                follow = Some(i);
            }
        }
        (lead, follow)
    }

    fn params_of(&self, i: usize) -> IdmParams<f64> {
        self.vehicles[i].idm_params(&self.cfg.cav_model)
    }

    /// IDM acceleration of `f` behind `l` (free road if `None`).
    fn follow_accel(&self, f: usize, l: Option<usize>) -> f64 {
        let fv = &self.vehicles[f];
        let p = self.params_of(f);
        match l {
            Some(l) => {
                let lv = &self.vehicles[l];
                idm_accel_unchecked(fv.v, gap_between(fv, lv), lv.v, &p)
            }
            None => idm_accel_unchecked(fv.v, f64::INFINITY, 0.0, &p),
        }
    }

    /// IDM acceleration toward the end of `lane`, treated as a stopped obstacle.
    fn lane_end_accel(&self, i: usize, lane: usize) -> f64 {
        let v = &self.vehicles[i];
        match self.network.lane_end(lane, v.x) {
            Some(end) => idm_accel_unchecked(v.v, end - v.front(), 0.0, &self.params_of(i)),
            None => f64::INFINITY,
        }
    }

    /// Car-following acceleration of an HDV over every lane it occupies.
    fn hdv_accel(&self, i: usize) -> f64 {
        let v = &self.vehicles[i];
        let mut a = self.lane_end_accel(i, v.lane);
        for lane in v.occupied_lanes() {
            a = a.min(self.follow_accel(i, self.neighbours_in_lane(i, lane).0));
        }
        a
    }

    /// MOBIL-style lane-change decision for an HDV.
    ///
    /// Mandatory when the current lane ends within the lookahead: the vehicle
    /// moves toward a longer-surviving lane as soon as the safety test passes,
    /// with the admissible deceleration growing toward the emergency bound as
    /// the lane end approaches. Otherwise discretionary: safety and incentive
    /// must both hold, and lanes ending within the lookahead are not entered.
    pub fn hdv_lane_change(&self, id: u32) -> Result<Lateral> {
        let i = self.index_of(id).ok_or_else(|| Error::Contract(format!("no vehicle {id}")))?;
        let ego = &self.vehicles[i];
        let Some(style) = ego.style else {
            return Err(Error::Contract(format!("vehicle {id} is not an HDV")));
        };
        if ego.lane_change.is_some() || ego.cooldown > 0.0 {
            return Ok(Lateral::Stay);
        }
        let lanes_here = self.network.lanes_at(ego.x);
        let own_end = self.network.distance_to_lane_end(ego.lane, ego.x);
        let mandatory = own_end <= self.cfg.lookahead;
        let b_safe = if mandatory {
            let urgency = (1.0 - own_end / self.cfg.lookahead.max(1e-9)).clamp(0.0, 1.0);
            style.lc.b_safe + (B_EMERGENCY - style.lc.b_safe) * urgency
        } else {
            style.lc.b_safe
        };
        let (cur_lead, old_follow) = self.neighbours_in_lane(i, ego.lane);
        let a_c = self.follow_accel(i, cur_lead).min(self.lane_end_accel(i, ego.lane));

        let mut best: Option<(f64, f64, Lateral)> = None;
        for dir in [Lateral::Left, Lateral::Right] {
            let Some(target) = dir.target(ego.lane) else { continue };
            if target >= lanes_here {
                continue;
            }
            let survive = self.network.distance_to_lane_end(target, ego.x);
            // dropped lanes are the highest indices, so moving right always
            // heads toward the surviving lanes even if the next one also ends
            if mandatory && !(survive > own_end || (dir == Lateral::Right && survive >= own_end)) {
                continue;
            }
            if !mandatory && survive <= self.cfg.lookahead {
                continue;
            }
            let (new_lead, new_follow) = self.neighbours_in_lane(i, target);
            if let Some(l) = new_lead {
                if gap_between(ego, &self.vehicles[l]) < style.idm.s0 {
                    continue;
                }
            }
            if let Some(f) = new_follow {
                let s0 = style.idm.s0.max(self.params_of(f).s0);
                if gap_between(&self.vehicles[f], ego) < s0 {
                    continue;
                }
            }
            let a_c_new = self.follow_accel(i, new_lead).min(self.lane_end_accel(i, target));
            let a_n_new = new_follow.map(|f| self.follow_accel_to(f, i));
            if a_c_new < -b_safe || a_n_new.is_some_and(|a| a < -b_safe) {
                continue;
            }
            let incentive = if mandatory {
                0.0
            } else {
                let gain_n = new_follow.map_or(0.0, |f| a_n_new.unwrap_or(0.0) - self.follow_accel(f, new_lead));
                let gain_o = old_follow.map_or(0.0, |o| self.follow_accel(o, cur_lead) - self.follow_accel_to(o, i));
                let incentive = a_c_new - a_c + style.lc.politeness * (gain_n + gain_o);
                if incentive <= style.lc.threshold {
                    continue;
                }
                incentive
            };
            let better = match best {
                None => true,
                Some((bi, bs, _)) => incentive > bi || (incentive == bi && survive > bs),
            };
            if better {
                best = Some((incentive, survive, dir));
            }
        }
        Ok(best.map_or(Lateral::Stay, |b| b.2))
    }

    fn follow_accel_to(&self, f: usize, l: usize) -> f64 {
        self.follow_accel(f, Some(l))
    }

    /// Starts a lane change; `false` when the vehicle is mid-change or the
    /// target lane does not exist here.
    pub fn start_lane_change(&mut self, i: usize, dir: Lateral) -> bool {
        let lanes_here = self.network.lanes_at(self.vehicles[i].x);
        let v = &mut self.vehicles[i];
        if v.lane_change.is_some() {
            return false;
        }
        let Some(target) = dir.target(v.lane) else { return false };
        if target == v.lane || target >= lanes_here {
            return false;
        }
        v.lane_change = Some(LaneChange { from: v.lane, steps_done: 0, y_from: v.y, y_to: self.network.lane_center(target) });
        v.lane = target;
        true
    }

    /// One simulation step of length `cfg.dt`.
    ///
    /// Order: CAV lane-change requests, HDV lane-change decisions (by id),
    /// accelerations from the resulting occupancy, then integration from the
    /// front of the road backwards so every HDV can cap its speed against the
    /// already-updated position of its leader. That cap is the HDV safety
    /// mode: an HDV never closes a gap completely. CAVs get no such guard.
    pub fn step(&mut self, commands: &BTreeMap<u32, CavCommand>) -> Result<StepReport> {
        let mut report = StepReport::default();
        for (&id, cmd) in commands {
            let i = self.index_of(id).ok_or_else(|| Error::Contract(format!("command for unknown vehicle {id}")))?;
            if !self.vehicles[i].is_cav() {
                return Err(Error::Contract(format!("command for HDV {id}")));
            }
            if !cmd.accel.is_finite() {
                return Err(Error::Domain(format!("non-finite command for vehicle {id}")));
            }
            if cmd.lateral != Lateral::Stay && !self.start_lane_change(i, cmd.lateral) {
                report.rejected_lateral.push(id);
            }
        }
        for i in 0..self.vehicles.len() {
            if self.vehicles[i].is_cav() {
                continue;
            }
            let dir = self.hdv_lane_change(self.vehicles[i].id)?;
            if dir != Lateral::Stay {
                self.start_lane_change(i, dir);
            }
        }

        let n = self.vehicles.len();
        let mut accel = vec![0.0; n];
        let mut leaders: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..n {
            let v = &self.vehicles[i];
            leaders[i] = v.occupied_lanes().filter_map(|l| self.neighbours_in_lane(i, l).0).collect();
            accel[i] = if v.is_cav() {
                let cmd = commands.get(&v.id).map_or(0.0, |c| c.accel);
                cmd.min(self.lane_end_accel(i, v.lane))
            } else {
                self.hdv_accel(i)
            };
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            let (va, vb) = (&self.vehicles[a], &self.vehicles[b]);
            vb.x.total_cmp(&va.x).then(vb.id.cmp(&va.id))
        });
        let dt = self.cfg.dt;
        let old: Vec<Vehicle> = self.vehicles.clone();
        for &i in &order {
            let v_max = self.network.speed_limit;
            let prev = &old[i];
            let mut v_new = (prev.v + accel[i] * dt).clamp(0.0, v_max);
            let mut lc = prev.lane_change;
            let (mut y, mut theta) = (prev.y, 0.0);
            if let Some(c) = lc.as_mut() {
                c.steps_done += 1;
                let frac = f64::from(c.steps_done) / f64::from(self.cfg.lc_steps);
                let lat_speed = (c.y_to - c.y_from) / (f64::from(self.cfg.lc_steps) * dt);
                if c.steps_done >= self.cfg.lc_steps {
                    y = c.y_to;
                } else {
                    y = c.y_from + (c.y_to - c.y_from) * frac;
                    theta = (lat_speed / v_new.max(self.cfg.v_floor)).atan().clamp(-self.cfg.theta_max, self.cfg.theta_max);
                }
            }
            let hx = half_extent_x(prev.length, prev.width, theta);
            let cos = theta.cos();
            let mut limit = f64::INFINITY;
            if !prev.is_cav() {
                for &l in &leaders[i] {
                    let (lo, ln) = (&old[l], &self.vehicles[l]);
                    let gap_now = gap_between(prev, lo);
                    let margin = (0.5 * gap_now).clamp(0.0, 1.0);
                    limit = limit.min(ln.rear() - margin - hx - prev.x);
                }
            }
            if let Some(end) = self.network.lane_end(prev.lane, prev.x) {
                limit = limit.min(end - hx - prev.x);
            }
            if v_new * cos * dt > limit {
                v_new = (limit / (cos * dt)).max(0.0);
            }
            let x_new = prev.x + v_new * cos * dt;
            let v = &mut self.vehicles[i];
            v.accel = (v_new - prev.v) / dt;
            v.v = v_new;
            v.x = x_new;
            v.y = y;
            v.theta = theta;
            v.lane_change = lc.filter(|c| c.steps_done < self.cfg.lc_steps);
            if lc.is_some() && v.lane_change.is_none() {
                v.cooldown = v.style.map_or(0.0, |s| s.lc.cooldown);
            } else {
                v.cooldown = (v.cooldown - dt).max(0.0);
            }
        }

        self.step_count += 1;
        self.sim_time = self.step_count as f64 * dt;
        let total = self.network.total_length;
        let time = self.sim_time;
        self.vehicles.retain(|v| {
            if v.x > total {
                report.exited.push(v.id);
                false
            } else {
                true
            }
        });
        self.exited.extend(report.exited.iter().map(|&id| (id, time)));
        if self.step_count.is_multiple_of(self.cfg.history_interval) {
            self.push_history();
        }
        Ok(report)
    }
}

fn ahead(a: (f64, u32), b: (f64, u32)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 > b.1)
}

/// Neighbour slot order used by observations, PSAR and the global graph.
pub const SLOT_NAMES: [&str; 6] = ["ego_lead", "ego_follow", "left_lead", "left_follow", "right_lead", "right_follow"];

impl WorldState {
    /// Up to six neighbours of `id`: nearest leader (`dx > 0`) and follower
    /// (`dx <= 0`) by `|dx|` in the ego lane and each adjacent lane, judged by
    /// the vehicles' `lane` field. Ties go to the lower id.
    pub fn neighbor_slots(&self, id: u32) -> Result<[Option<u32>; 6]> {
        let ego = self.vehicle(id).ok_or_else(|| Error::Contract(format!("no vehicle {id}")))?;
        let lanes = [Some(ego.lane), Some(ego.lane + 1), ego.lane.checked_sub(1)];
        let mut best: [Option<(f64, u32)>; 6] = [None; 6];
        for v in &self.vehicles {
            if v.id == id {
                continue;
            }
            for (k, lane) in lanes.iter().enumerate() {
                if *lane != Some(v.lane) {
                    continue;
                }
                let dx = v.x - ego.x;
                let slot = 2 * k + usize::from(dx <= 0.0);
                let cand = (dx.abs(), v.id);
                if best[slot].is_none_or(|b| cand.0 < b.0 || (cand.0 == b.0 && cand.1 < b.1)) {
                    best[slot] = Some(cand);
                }
            }
        }
        Ok(best.map(|b| b.map(|(_, id)| id)))
    }
}
