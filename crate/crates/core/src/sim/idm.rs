use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Hard lower bound on any IDM output, m/s².
pub const B_EMERGENCY: f64 = 9.0;

/// Intelligent Driver Model parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdmParams<T> {
    /// Desired speed v0, m/s.
    pub v0: T,
    /// Time headway T, s.
    pub t_headway: T,
    pub a_max: T,
    pub b_comf: T,
    /// Jam distance s0, m.
    pub s0: T,
    pub delta: T,
}

impl<T: Scalar> IdmParams<T> {
    pub fn validate(&self) -> Result<()> {
        let all = [self.v0, self.t_headway, self.a_max, self.b_comf, self.s0, self.delta];
        if all.iter().all(|v| v.is_finite() && *v > T::zero()) {
            Ok(())
        } else {
            Err(Error::Config("IDM parameters must be positive and finite".into()))
        }
    }
}

/// Desired gap `s* = s0 + max(0, v T + v dv / (2 sqrt(a b)))`.
pub fn desired_gap<T: Scalar>(v: T, v_leader: T, p: &IdmParams<T>) -> T {
    let dyn_part = v * p.t_headway + v * (v - v_leader) / (T::lit(2.0) * (p.a_max * p.b_comf).sqrt());
    p.s0 + dyn_part.max(T::zero())
}

/// IDM acceleration, clamped to `[-B_EMERGENCY, a_max]`.
///
/// `gap` is the bumper-to-bumper distance; pass `+inf` when there is no
/// leader. A non-positive gap yields the emergency bound.
pub fn idm_accel<T: Scalar>(v: T, gap: T, v_leader: T, p: &IdmParams<T>) -> Result<T> {
    if !v.is_finite() || gap.is_nan() || gap == T::neg_infinity() || !v_leader.is_finite() {
        return Err(Error::Domain(format!("idm_accel(v={v}, gap={gap}, v_leader={v_leader})")));
    }
    Ok(idm_accel_unchecked(v, gap, v_leader, p))
}

pub(crate) fn idm_accel_unchecked<T: Scalar>(v: T, gap: T, v_leader: T, p: &IdmParams<T>) -> T {
    let lo = -T::lit(B_EMERGENCY);
    if gap <= T::zero() {
        return lo;
    }
    let free = (v.max(T::zero()) / p.v0).powf(p.delta);
    let interaction = if gap.is_infinite() {
        T::zero()
    } else {
        let r = desired_gap(v, v_leader, p) / gap;
        r * r
    };
    (p.a_max * (T::one() - free - interaction)).max(lo).min(p.a_max)
}
