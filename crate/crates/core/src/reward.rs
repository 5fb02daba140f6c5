//! Team reward: per-CAV ego terms, softmin aggregation with an annealed
//! temperature, a fleet speed term and a terminal term.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sim::WorldState;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub w_e: f64,
    pub w_g: f64,
    pub w_ev: f64,
    pub w_ew: f64,
    pub w_ec: f64,
    pub w_etp: f64,
    pub v_max: f64,
    pub d_th_w: f64,
    pub d_th_c: f64,
    pub p_ev: f64,
    pub p_ec: f64,
    pub p_gv: f64,
    pub v_th: f64,
    /// Paid once, on the step the last CAV leaves the road.
    pub r_done: f64,
    /// Paid once, on the step an episode ends in a CAV collision.
    pub r_collision: f64,
    pub tau_init: f64,
    pub tau_final: f64,
    /// Annealing length in global environment steps.
    pub t_anneal: u64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            w_e: 0.6,
            w_g: 0.4,
            w_ev: 1.0,
            w_ew: 0.5,
            w_ec: 2.0,
            w_etp: 0.3,
            v_max: 25.0,
            d_th_w: 10.0,
            d_th_c: 3.0,
            p_ev: 0.0,
            p_ec: 0.0,
            p_gv: 0.0,
            v_th: 3.0,
            r_done: 10.0,
            r_collision: -20.0,
            tau_init: 2.0,
            tau_final: 0.05,
            t_anneal: 100_000,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.d_th_w > self.d_th_c && self.d_th_c > 0.0) {
            return bad("reward needs d_th_w > d_th_c > 0");
        }
        if !(self.tau_init >= self.tau_final && self.tau_final > 0.0) {
            return bad("reward needs tau_init >= tau_final > 0");
        }
        if !(0.0..=1.0).contains(&self.w_e) {
            return bad("w_e must lie in [0, 1]");
        }
        if !(self.v_max > 0.0) {
            return bad("v_max must be positive");
        }
        Ok(())
    }
}

/// `-|v - v_max| / v_max + p_ev`.
pub fn speed_term<T: Scalar>(v: T, v_max: T, p_ev: T) -> T {
    -(v - v_max).abs() / v_max + p_ev
}

/// Sum over neighbours with `d_c < d <= d_w` of `-(d_w - d) / (d_w - d_c)`.
pub fn warning_term<T: Scalar>(distances: &[T], d_w: T, d_c: T) -> T {
    distances
        .iter()
        .filter(|&&d| d > d_c && d <= d_w)
        .fold(T::zero(), |acc, &d| acc - (d_w - d) / (d_w - d_c))
}

/// Sum over neighbours with `d <= d_c` of `-(d_c - d) / d_c + p_ec`.
pub fn collision_term<T: Scalar>(distances: &[T], d_c: T, p_ec: T) -> T {
    distances.iter().filter(|&&d| d <= d_c).fold(T::zero(), |acc, &d| acc - (d_c - d) / d_c + p_ec)
}

/// `sigmoid(v - v_th) - 1`, in `(-1, 0)`.
pub fn time_penalty<T: Scalar>(v: T, v_th: T) -> T {
    crate::neural::graph::sigmoid(v - v_th) - T::one()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgoReward {
    pub speed: f64,
    pub warning: f64,
    pub collision: f64,
    pub time_penalty: f64,
    pub total: f64,
}

/// Ego reward from speed and centre distances to other vehicles.
pub fn ego_reward_from(v: f64, distances: &[f64], cfg: &RewardConfig) -> EgoReward {
    let speed = speed_term(v, cfg.v_max, cfg.p_ev);
    let warning = warning_term(distances, cfg.d_th_w, cfg.d_th_c);
    let collision = collision_term(distances, cfg.d_th_c, cfg.p_ec);
    let time_penalty = time_penalty(v, cfg.v_th);
    let total = cfg.w_ev * speed + cfg.w_ew * warning + cfg.w_ec * collision + cfg.w_etp * time_penalty;
    EgoReward { speed, warning, collision, time_penalty, total }
}

/// Ego reward of CAV `id`; distances are Euclidean between footprint centres.
pub fn ego_reward(world: &WorldState, id: u32, cfg: &RewardConfig) -> Result<EgoReward> {
    let ego = world.vehicle(id).ok_or_else(|| Error::Contract(format!("no vehicle {id}")))?;
    if !ego.is_cav() {
        return Err(Error::Contract(format!("vehicle {id} is not a CAV")));
    }
    let distances: Vec<f64> =
        world.vehicles.iter().filter(|v| v.id != id).map(|v| (v.x - ego.x).hypot(v.y - ego.y)).collect();
    Ok(ego_reward_from(ego.v, &distances, cfg))
}

/// `w_i = exp(-r_i / tau) / sum_j exp(-r_j / tau)`, evaluated with a max shift.
pub fn softmin_weights<T: Scalar>(r: &[T], tau: T) -> Result<Vec<T>> {
    if !(tau > T::zero()) || !tau.is_finite() {
        return Err(Error::Domain(format!("softmin temperature {tau} must be positive")));
    }
    if r.is_empty() {
        return Err(Error::Domain("softmin of an empty set".into()));
    }
    let logits: Vec<T> = r.iter().map(|&x| -x / tau).collect();
    let max = logits.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let exps: Vec<T> = logits.iter().map(|&x| (x - max).exp()).collect();
    let z = exps.iter().fold(T::zero(), |s, &x| s + x);
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// Softmin-weighted mean and the weights.
pub fn softmin_aggregate<T: Scalar>(r: &[T], tau: T) -> Result<(T, Vec<T>)> {
    let w = softmin_weights(r, tau)?;
    let agg = w.iter().zip(r).fold(T::zero(), |s, (&wi, &ri)| s + wi * ri);
    Ok((agg, w))
}

/// Linear annealing from `tau_init` to `tau_final` over `t_anneal` steps.
pub fn temperature(t: u64, cfg: &RewardConfig) -> f64 {
    if cfg.t_anneal == 0 || t >= cfg.t_anneal {
        return cfg.tau_final;
    }
    cfg.tau_init - (cfg.tau_init - cfg.tau_final) * t as f64 / cfg.t_anneal as f64
}

/// `-|mean(v) - v_max| / v_max + p_gv`; zero for an empty fleet.
pub fn global_term<T: Scalar>(speeds: &[T], v_max: T, p_gv: T) -> T {
    if speeds.is_empty() {
        return T::zero();
    }
    let mean = speeds.iter().fold(T::zero(), |s, &v| s + v) / T::lit(speeds.len() as f64);
    -(mean - v_max).abs() / v_max + p_gv
}

pub fn global_reward(world: &WorldState, cfg: &RewardConfig) -> f64 {
    let speeds: Vec<f64> = world.vehicles.iter().filter(|v| v.is_cav()).map(|v| v.v).collect();
    global_term(&speeds, cfg.v_max, cfg.p_gv)
}

/// `w_e * r_e_bar + w_g * r_g + r_done`.
pub fn total_reward(r_e_bar: f64, r_g: f64, r_done: f64, cfg: &RewardConfig) -> f64 {
    cfg.w_e * r_e_bar + cfg.w_g * r_g + r_done
}

/// How the step ended, for the terminal term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalEvent {
    None,
    AllExited,
    Collision,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub ids: Vec<u32>,
    pub ego: Vec<EgoReward>,
    pub weights: Vec<f64>,
    pub r_e_bar: f64,
    pub r_g: f64,
    pub r_done: f64,
    pub total: f64,
    pub tau: f64,
}

/// Full team reward for the CAVs `ids` still on the road.
pub fn compute_reward(
    world: &WorldState,
    ids: &[u32],
    event: TerminalEvent,
    tau: f64,
    cfg: &RewardConfig,
) -> Result<RewardBreakdown> {
    let ego = ids.iter().map(|&id| ego_reward(world, id, cfg)).collect::<Result<Vec<_>>>()?;
    let totals: Vec<f64> = ego.iter().map(|e| e.total).collect();
    let (r_e_bar, weights) = if totals.is_empty() { (0.0, Vec::new()) } else { softmin_aggregate(&totals, tau)? };
    let speeds: Vec<f64> = ids.iter().filter_map(|&id| world.vehicle(id)).map(|v| v.v).collect();
    let r_g = global_term(&speeds, cfg.v_max, cfg.p_gv);
    let r_done = match event {
        TerminalEvent::None => 0.0,
        TerminalEvent::AllExited => cfg.r_done,
        TerminalEvent::Collision => cfg.r_collision,
    };
    let total = total_reward(r_e_bar, r_g, r_done, cfg);
    Ok(RewardBreakdown { ids: ids.to_vec(), ego, weights, r_e_bar, r_g, r_done, total, tau })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmin_rejects_bad_temperature() {
        assert!(softmin_weights(&[1.0f64], 0.0).is_err());
        assert!(softmin_weights(&[1.0f64], -1.0).is_err());
        assert!(softmin_weights::<f64>(&[], 1.0).is_err());
    }

    #[test]
    fn softmin_in_single_precision() {
        let w = softmin_weights(&[0.0f32, 1.0], 1.0).unwrap();
        assert!((w[0] - 0.731_058_6).abs() < 1e-6);
    }
}
