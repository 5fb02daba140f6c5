//! Rule-based refinement of proposed CAV actions from longitudinal gaps and
//! time-to-collision against the surrounding vehicles.

pub mod verify;

use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sim::{Vehicle, WorldState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsarThresholds<T = f64> {
    pub d_lc_min: T,
    pub d_safe: T,
    pub d_warn: T,
    pub d_att: T,
    pub tau_safe: T,
    pub tau_warn: T,
    pub tau_att: T,
    pub b_max: T,
}

impl<T: Scalar> PsarThresholds<T> {
    pub fn new(
        (d_lc_min, d_safe, d_warn, d_att): (T, T, T, T),
        (tau_safe, tau_warn, tau_att): (T, T, T),
        b_max: T,
    ) -> Result<Self> {
        let th = Self { d_lc_min, d_safe, d_warn, d_att, tau_safe, tau_warn, tau_att, b_max };
        th.validate()?;
        Ok(th)
    }

    /// Checks `d_lc_min <= d_safe < d_warn < d_att`, `tau_safe < tau_warn < tau_att`, `b_max > 0`.
    pub fn validate(&self) -> Result<()> {
        let all = [self.d_lc_min, self.d_safe, self.d_warn, self.d_att, self.tau_safe, self.tau_warn, self.tau_att, self.b_max];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("PSAR thresholds must be finite".into()));
        }
        if !(self.d_lc_min <= self.d_safe && self.d_safe < self.d_warn && self.d_warn < self.d_att) {
            return Err(Error::Config("PSAR distances must satisfy d_lc_min <= d_safe < d_warn < d_att".into()));
        }
        if !(self.tau_safe < self.tau_warn && self.tau_warn < self.tau_att) {
            return Err(Error::Config("PSAR TTC thresholds must satisfy tau_safe < tau_warn < tau_att".into()));
        }
        if !(self.b_max > T::zero()) {
            return Err(Error::Config("PSAR b_max must be positive".into()));
        }
        Ok(())
    }
}

impl Default for PsarThresholds<f64> {
    fn default() -> Self {
        Self { d_lc_min: 5.0, d_safe: 8.0, d_warn: 15.0, d_att: 30.0, tau_safe: 1.5, tau_warn: 3.0, tau_att: 5.0, b_max: 4.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefinementTag {
    None,
    CancelLc,
    DecelLc,
    ForceBrake,
    SupprAccel,
}

impl RefinementTag {
    pub fn as_str(self) -> &'static str {
        match self {
            RefinementTag::None => "none",
            RefinementTag::CancelLc => "cancel_lc",
            RefinementTag::DecelLc => "decel_lc",
            RefinementTag::ForceBrake => "force_brake",
            RefinementTag::SupprAccel => "suppr_accel",
        }
    }
}

/// Outcome of refinement. `b_lc` is positive exactly when the tag is `DecelLc`.
///
/// The tag names the last rule that fired, even when the rule left the action
/// value unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Refinement<T = f64> {
    pub tag: RefinementTag,
    pub b_lc: T,
}

/// Longitudinal state of one vehicle as PSAR sees it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kinematics<T = f64> {
    pub x: T,
    pub v: T,
    pub theta: T,
    pub length: T,
    pub width: T,
}

impl Kinematics<f64> {
    pub fn of(v: &Vehicle) -> Self {
        Self { x: v.x, v: v.v, theta: v.theta, length: v.length, width: v.width }
    }
}

/// Ego plus the vehicles each branch of the rule set inspects.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsarContext<T = f64> {
    pub ego: Kinematics<T>,
    /// Leader in the ego lane.
    pub front: Option<Kinematics<T>>,
    /// Leader and follower in the lane a proposed lane change targets.
    pub target_front: Option<Kinematics<T>>,
    pub target_rear: Option<Kinematics<T>>,
}

/// `(x_j - x_i - L) cos(theta_i) - (W_i / 2) |sin(theta_i)|`.
pub fn longitudinal_gap<T: Scalar>(ego: &Kinematics<T>, other: &Kinematics<T>) -> T {
    (other.x - ego.x - ego.length) * ego.theta.cos() - ego.width / T::lit(2.0) * ego.theta.sin().abs()
}

/// `v_i |cos(theta_i)| - v_j |cos(theta_j)|`.
pub fn delta_v_long<T: Scalar>(ego: &Kinematics<T>, other: &Kinematics<T>) -> T {
    ego.v * ego.theta.cos().abs() - other.v * other.theta.cos().abs()
}

/// Gap over closing speed; `+inf` when the closing speed is zero.
pub fn ttc<T: Scalar>(ego: &Kinematics<T>, other: &Kinematics<T>) -> T {
    let dv = delta_v_long(ego, other);
    if dv == T::zero() {
        T::infinity()
    } else {
        longitudinal_gap(ego, other) / dv
    }
}

/// `|d| <= d0` and `0 < ttc <= tau0`.
pub fn risk<T: Scalar>(d: T, ttc: T, d0: T, tau0: T) -> bool {
    d.abs() <= d0 && ttc > T::zero() && ttc <= tau0
}

struct Pair<T> {
    d: T,
    ttc: T,
    dv: T,
}

impl<T: Scalar> Pair<T> {
    fn new(ego: &Kinematics<T>, other: &Kinematics<T>) -> Self {
        Self { d: longitudinal_gap(ego, other), ttc: ttc(ego, other), dv: delta_v_long(ego, other) }
    }

    fn risk(&self, d0: T, tau0: T) -> bool {
        risk(self.d, self.ttc, d0, tau0)
    }
}

/// Refines a proposed action.
///
/// Lane changes are checked first against the target-lane leader (cancel on
/// hard violations, decelerate on soft ones) and then against the target-lane
/// follower. If the action is, or has become, a longitudinal one, the ego-lane
/// leader may force braking or suppress acceleration.
pub fn refine<T: Scalar>(proposed: Action, ctx: &PsarContext<T>, th: &PsarThresholds<T>) -> (Action, Refinement<T>) {
    let mut a = proposed;
    let mut tag = RefinementTag::None;
    let mut b_lc = T::zero();
    if a.is_lane_change() {
        if let Some(j) = &ctx.target_front {
            let p = Pair::new(&ctx.ego, j);
            if p.d <= th.d_lc_min || p.risk(th.d_safe, th.tau_safe) {
                a = Action::Remain;
                tag = RefinementTag::CancelLc;
            } else if p.risk(th.d_safe, th.tau_att) || p.risk(th.d_att, th.tau_safe) {
                b_lc = p.dv.abs().min(th.b_max);
                tag = RefinementTag::DecelLc;
            }
        }
        if let (Some(k), true) = (&ctx.target_rear, a != Action::Remain) {
            let p = Pair::new(&ctx.ego, k);
            let soft = p.risk(th.d_safe, th.tau_att) || p.risk(th.d_att, th.tau_safe);
            if p.d.abs() <= th.d_lc_min || p.risk(th.d_safe, th.tau_safe) || (soft && b_lc != T::zero()) {
                a = Action::Remain;
                tag = RefinementTag::CancelLc;
            }
        }
    }
    if matches!(a, Action::Remain | Action::Accelerate | Action::Decelerate) {
        if let Some(j) = &ctx.front {
            let p = Pair::new(&ctx.ego, j);
            if p.d <= th.d_warn && p.ttc > T::zero() {
                a = Action::Decelerate;
                tag = RefinementTag::ForceBrake;
            } else if p.d <= th.d_safe || (p.d <= th.d_warn && a == Action::Accelerate) {
                a = Action::Remain;
                tag = RefinementTag::SupprAccel;
            } else if p.risk(th.d_att, th.tau_warn) {
                a = Action::Decelerate;
                tag = RefinementTag::ForceBrake;
            } else if p.risk(th.d_att, th.tau_att) && a == Action::Accelerate {
                a = Action::Remain;
                tag = RefinementTag::SupprAccel;
            }
        }
    }
    if tag != RefinementTag::DecelLc {
        b_lc = T::zero();
    }
    (a, Refinement { tag, b_lc })
}

/// Builds the refinement context of CAV `id` from the world's neighbour slots.
pub fn context(world: &WorldState, id: u32, proposed: Action) -> Result<PsarContext> {
    let ego = world.vehicle(id).ok_or_else(|| Error::Contract(format!("no vehicle {id}")))?;
    let slots = world.neighbor_slots(id)?;
    let kin = |s: Option<u32>| s.and_then(|id| world.vehicle(id)).map(Kinematics::of);
    let (tf, tr) = match proposed {
        Action::Left => (slots[2], slots[3]),
        Action::Right => (slots[4], slots[5]),
        _ => (None, None),
    };
    Ok(PsarContext { ego: Kinematics::of(ego), front: kin(slots[0]), target_front: kin(tf), target_rear: kin(tr) })
}

/// Refinement of CAV `id`'s proposed action in the current world.
pub fn refine_action(proposed: Action, world: &WorldState, id: u32, th: &PsarThresholds) -> Result<(Action, Refinement)> {
    let ego = world.vehicle(id).ok_or_else(|| Error::Contract(format!("no vehicle {id}")))?;
    if !ego.is_cav() {
        return Err(Error::Contract(format!("vehicle {id} is not a CAV")));
    }
    Ok(refine(proposed, &context(world, id, proposed)?, th))
}
