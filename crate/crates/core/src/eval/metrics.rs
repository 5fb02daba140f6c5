use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{EpisodeLog, VehicleRow};
use crate::env::ScenarioConfig;
use crate::error::{Error, Result};

/// Event definitions. A vehicle counts once per episode for each event type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EventThresholds {
    /// Waiting: speed strictly below this, m/s.
    pub we_speed: f64,
    /// Proximity violation: leader gap strictly below this, m.
    pub proximity: f64,
    /// Time to collision strictly below this, s.
    pub ttc: f64,
    /// Emergency braking: deceleration strictly above this, m/s².
    pub emergency_decel: f64,
}

impl Default for EventThresholds {
    fn default() -> Self {
        Self { we_speed: 3.0, proximity: 3.0, ttc: 1.5, emergency_decel: 4.0 }
    }
}

impl EventThresholds {
    /// Thresholds tied to a scenario's reward and refinement settings.
    pub fn from_scenario(s: &ScenarioConfig) -> Self {
        Self { we_speed: s.reward.v_th, proximity: s.reward.d_th_c, ttc: s.psar.tau_safe, ..Self::default() }
    }

    pub fn is_wait(&self, r: &VehicleRow) -> bool {
        r.v < self.we_speed
    }

    pub fn is_safety_critical(&self, r: &VehicleRow) -> bool {
        r.collided || r.gap < self.proximity || r.ttc < self.ttc || r.accel < -self.emergency_decel
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub episodes: usize,
    pub vehicle_episodes: usize,
    /// Vehicle-steps the speed statistics cover.
    pub samples: usize,
    pub mean_speed: f64,
    pub std_speed: f64,
    pub p_wes: f64,
    pub p_sces: f64,
    /// Share of vehicles involved in a collision.
    pub p_collision: f64,
    pub mean_return: f64,
    /// Share of episodes ending in a CAV collision.
    pub collision_episode_rate: f64,
    pub causes: BTreeMap<String, usize>,
    pub segment_speeds: BTreeMap<String, Vec<f64>>,
}

fn share(hit: &BTreeSet<u32>, seen: &BTreeSet<u32>) -> f64 {
    if seen.is_empty() { 0.0 } else { hit.len() as f64 / seen.len() as f64 }
}

/// Aggregates episode logs. Event probabilities are per-episode vehicle
/// shares averaged over episodes; speed statistics pool every vehicle-step.
pub fn compute_metrics(logs: &[EpisodeLog], th: &EventThresholds) -> Result<MetricsReport> {
    if logs.is_empty() {
        return Err(Error::Contract("metrics need at least one episode".into()));
    }
    let mut speeds = Vec::new();
    let mut segment_speeds: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let (mut p_wes, mut p_sces, mut p_col) = (0.0, 0.0, 0.0);
    let mut vehicle_episodes = 0;
    let mut causes = BTreeMap::new();
    for log in logs {
        let mut seen = BTreeSet::new();
        let (mut we, mut sce, mut col) = (BTreeSet::new(), BTreeSet::new(), BTreeSet::new());
        for r in &log.rows {
            seen.insert(r.id);
            speeds.push(r.v);
            segment_speeds.entry(r.segment.clone()).or_default().push(r.v);
            if th.is_wait(r) {
                we.insert(r.id);
            }
            if th.is_safety_critical(r) {
                sce.insert(r.id);
            }
            if r.collided {
                col.insert(r.id);
            }
        }
        vehicle_episodes += seen.len();
        p_wes += share(&we, &seen);
        p_sces += share(&sce, &seen);
        p_col += share(&col, &seen);
        let cause = serde_json::to_value(log.cause)?.as_str().unwrap_or("unknown").to_string();
        *causes.entry(cause).or_insert(0) += 1;
    }
    let n = logs.len() as f64;
    let m = speeds.len().max(1) as f64;
    let mean_speed = speeds.iter().sum::<f64>() / m;
    let std_speed = (speeds.iter().map(|v| (v - mean_speed).powi(2)).sum::<f64>() / m).sqrt();
    Ok(MetricsReport {
        episodes: logs.len(),
        vehicle_episodes,
        samples: speeds.len(),
        mean_speed,
        std_speed,
        p_wes: p_wes / n,
        p_sces: p_sces / n,
        p_collision: p_col / n,
        mean_return: logs.iter().map(|l| l.ret).sum::<f64>() / n,
        collision_episode_rate: causes.get("collision").copied().unwrap_or(0) as f64 / n,
        causes,
        segment_speeds,
    })
}
