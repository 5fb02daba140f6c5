use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::psar::PsarThresholds;
use crate::reward::RewardConfig;
use crate::sim::{FleetConfig, MapKind, RoadNetwork, SimConfig};

/// Everything needed to reproduce an episode apart from the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub map: MapKind,
    /// Use the test layout with the reduction shifted downstream.
    pub shifted: bool,
    /// Explicit geometry; overrides `map` when present.
    pub network: Option<RoadNetwork>,
    pub fleet: FleetConfig,
    pub sim: SimConfig,
    /// Simulation steps per decision step.
    pub decision_steps: u32,
    /// Episode cap in decision steps.
    pub horizon: u32,
    /// Magnitude of the accelerate command, m/s².
    pub a_cmd: f64,
    /// Magnitude of the decelerate command, m/s².
    pub b_cmd: f64,
    pub psar_enabled: bool,
    pub psar: PsarThresholds,
    pub reward: RewardConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            map: MapKind::Reduction25,
            shifted: false,
            network: None,
            fleet: FleetConfig::default(),
            sim: SimConfig::default(),
            decision_steps: 10,
            horizon: 300,
            a_cmd: 2.0,
            b_cmd: 3.0,
            psar_enabled: true,
            psar: PsarThresholds::default(),
            reward: RewardConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn network(&self) -> RoadNetwork {
        self.network.clone().unwrap_or_else(|| RoadNetwork::bottleneck_variant(self.map, self.shifted))
    }

    pub fn validate(&self) -> Result<()> {
        self.network().validate()?;
        self.sim.validate()?;
        self.fleet.styles.validate()?;
        self.psar.validate()?;
        self.reward.validate()?;
        if self.decision_steps == 0 || self.horizon == 0 {
            return Err(Error::Config("decision_steps and horizon must be positive".into()));
        }
        if !(self.a_cmd > 0.0 && self.b_cmd > 0.0) {
            return Err(Error::Config("command magnitudes must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Desk-scale learning scenario: 10 vehicles, 4 CAVs, D1 styles.
    pub fn desk_scale() -> Self {
        Self {
            fleet: FleetConfig { n_vehicles: 10, penetration: 0.4, ..FleetConfig::default() },
            ..Self::default()
        }
    }
}
