use rand::Rng;
use serde::{Deserialize, Serialize};

use super::idm::IdmParams;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleKind {
    Aggressive,
    Normal,
    Cautious,
}

/// Lane-change parameters of the MOBIL-style decision rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LcParams {
    pub politeness: f64,
    /// Acceleration-gain threshold, m/s².
    pub threshold: f64,
    /// Largest deceleration a lane change may impose, m/s².
    pub b_safe: f64,
    /// Minimum time between lane changes, s.
    pub cooldown: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrivingStyle {
    pub kind: StyleKind,
    pub idm: IdmParams<f64>,
    pub lc: LcParams,
}

impl DrivingStyle {
    pub fn preset(kind: StyleKind) -> Self {
        let mut idm = IdmParams { v0: 25.0, t_headway: 1.5, a_max: 2.5, b_comf: 2.0, s0: 2.0, delta: 4.0 };
        let mut lc = LcParams { politeness: 0.3, threshold: 0.2, b_safe: 4.0, cooldown: 3.0 };
        match kind {
            StyleKind::Normal => {}
            StyleKind::Aggressive => {
                idm.t_headway = 1.0;
                idm.s0 = 1.0;
                lc.politeness = 0.1;
                lc.cooldown = 1.0;
            }
            StyleKind::Cautious => {
                idm.t_headway = 2.0;
                idm.s0 = 3.0;
                lc.politeness = 0.5;
                lc.cooldown = 5.0;
            }
        }
        Self { kind, idm, lc }
    }

    pub fn validate(&self) -> Result<()> {
        self.idm.validate()?;
        let lc = &self.lc;
        if [lc.threshold, lc.b_safe, lc.cooldown].iter().all(|v| v.is_finite() && *v > 0.0)
            && lc.politeness.is_finite()
            && lc.politeness >= 0.0
        {
            Ok(())
        } else {
            Err(Error::Config(format!("lane-change parameters of {:?} must be positive", self.kind)))
        }
    }
}

/// Probabilities of the three HDV styles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleDistribution {
    pub p_aggressive: f64,
    pub p_normal: f64,
    pub p_cautious: f64,
}

impl StyleDistribution {
    pub const D1: Self = Self { p_aggressive: 0.2, p_normal: 0.6, p_cautious: 0.2 };
    pub const D2: Self = Self { p_aggressive: 0.2, p_normal: 0.4, p_cautious: 0.4 };
    pub const D3: Self = Self { p_aggressive: 0.4, p_normal: 0.4, p_cautious: 0.2 };

    pub fn new(p_aggressive: f64, p_normal: f64, p_cautious: f64) -> Result<Self> {
        let d = Self { p_aggressive, p_normal, p_cautious };
        d.validate()?;
        Ok(d)
    }

    pub fn named(name: &str) -> Result<Self> {
        match name.to_ascii_uppercase().as_str() {
            "D1" => Ok(Self::D1),
            "D2" => Ok(Self::D2),
            "D3" => Ok(Self::D3),
            _ => Err(Error::Config(format!("unknown style distribution `{name}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ps = [self.p_aggressive, self.p_normal, self.p_cautious];
        if ps.iter().any(|p| !(0.0..=1.0).contains(p)) || (ps.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("style probabilities {ps:?} must lie in [0,1] and sum to 1")));
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> StyleKind {
        let u: f64 = rng.random();
        if u < self.p_aggressive {
            StyleKind::Aggressive
        } else if u < self.p_aggressive + self.p_normal {
            StyleKind::Normal
        } else {
            StyleKind::Cautious
        }
    }
}
