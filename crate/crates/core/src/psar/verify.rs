//! Grid verification of [`super::refine`] against a second, flat
//! transcription of the rule set that shares no code with it.

use serde::Serialize;

use super::{refine, Kinematics, PsarContext, PsarThresholds, RefinementTag};
use crate::action::Action;

/// Decision table written as straight-line code: every predicate is
/// evaluated inline, nothing is factored out.
pub fn reference_refine(a_hat: usize, ctx: &PsarContext, th: &PsarThresholds) -> (usize, RefinementTag, f64) {
    let e = &ctx.ego;
    let mut a = a_hat;
    let mut tag = RefinementTag::None;
    let mut b_lc = 0.0f64;
    if a == 1 || a == 2 {
        if let Some(j) = ctx.target_front {
            let d = (j.x - e.x - e.length) * e.theta.cos() - 0.5 * e.width * e.theta.sin().abs();
            let dv = e.v * e.theta.cos().abs() - j.v * j.theta.cos().abs();
            let t = if dv == 0.0 { f64::INFINITY } else { d / dv };
            let hard = d <= th.d_lc_min || (d.abs() <= th.d_safe && t > 0.0 && t <= th.tau_safe);
            let soft = (d.abs() <= th.d_safe && t > 0.0 && t <= th.tau_att) || (d.abs() <= th.d_att && t > 0.0 && t <= th.tau_safe);
            if hard {
                a = 0;
                tag = RefinementTag::CancelLc;
            } else if soft {
                b_lc = if dv.abs() < th.b_max { dv.abs() } else { th.b_max };
                tag = RefinementTag::DecelLc;
            }
        }
        if a != 0 {
            if let Some(k) = ctx.target_rear {
                let d = (k.x - e.x - e.length) * e.theta.cos() - 0.5 * e.width * e.theta.sin().abs();
                let dv = e.v * e.theta.cos().abs() - k.v * k.theta.cos().abs();
                let t = if dv == 0.0 { f64::INFINITY } else { d / dv };
                let hard = d.abs() <= th.d_lc_min || (d.abs() <= th.d_safe && t > 0.0 && t <= th.tau_safe);
                let soft = (d.abs() <= th.d_safe && t > 0.0 && t <= th.tau_att) || (d.abs() <= th.d_att && t > 0.0 && t <= th.tau_safe);
                if hard || (soft && b_lc != 0.0) {
                    a = 0;
                    tag = RefinementTag::CancelLc;
                }
            }
        }
    }
    if a == 0 || a == 3 || a == 4 {
        if let Some(j) = ctx.front {
            let d = (j.x - e.x - e.length) * e.theta.cos() - 0.5 * e.width * e.theta.sin().abs();
            let dv = e.v * e.theta.cos().abs() - j.v * j.theta.cos().abs();
            let t = if dv == 0.0 { f64::INFINITY } else { d / dv };
            if d <= th.d_warn && t > 0.0 {
                a = 4;
                tag = RefinementTag::ForceBrake;
            } else if d <= th.d_safe || (d <= th.d_warn && a == 3) {
                a = 0;
                tag = RefinementTag::SupprAccel;
            } else if d.abs() <= th.d_att && t > 0.0 && t <= th.tau_warn {
                a = 4;
                tag = RefinementTag::ForceBrake;
            } else if d.abs() <= th.d_att && t > 0.0 && t <= th.tau_att && a == 3 {
                a = 0;
                tag = RefinementTag::SupprAccel;
            }
        }
    }
    if tag != RefinementTag::DecelLc {
        b_lc = 0.0;
    }
    (a, tag, b_lc)
}

#[derive(Clone, Debug, Serialize)]
pub struct GridReport {
    pub cases: usize,
    pub mismatches: usize,
    pub tag_counts: Vec<(String, usize)>,
    pub first_mismatch: Option<String>,
}

impl GridReport {
    pub fn passed(&self) -> bool {
        self.mismatches == 0 && self.cases > 0
    }
}

/// Threshold sets used by the grid: the defaults plus a tighter and a
/// looser variant, including the `d_lc_min == d_safe` boundary case.
pub fn grid_thresholds() -> Vec<PsarThresholds> {
    vec![
        PsarThresholds::default(),
        PsarThresholds { d_lc_min: 4.0, d_safe: 4.0, d_warn: 10.0, d_att: 20.0, tau_safe: 1.0, tau_warn: 2.0, tau_att: 4.0, b_max: 3.0 },
        PsarThresholds { d_lc_min: 6.0, d_safe: 10.0, d_warn: 20.0, d_att: 40.0, tau_safe: 2.0, tau_warn: 4.0, tau_att: 6.0, b_max: 6.0 },
    ]
}

/// Every combination of gap, speed, heading and presence on a fixed lattice.
pub fn grid_cases() -> Vec<(usize, PsarContext, usize)> {
    let ego_v = [0.0, 8.0, 15.0, 25.0];
    let ego_theta = [0.0, 0.12];
    let front_dx: [Option<f64>; 7] = [None, Some(5.0), Some(9.0), Some(13.0), Some(20.0), Some(32.0), Some(60.0)];
    let front_v = [0.0, 12.0, 15.0, 24.0];
    let tf_dx: [Option<f64>; 6] = [None, Some(4.0), Some(11.0), Some(14.0), Some(30.0), Some(50.0)];
    let tf_v = [5.0, 15.0, 22.0];
    let tr_dx: [Option<f64>; 6] = [None, Some(0.0), Some(-3.0), Some(-12.0), Some(-25.0), Some(-40.0)];
    let tr_v = [6.0, 15.0, 25.0];
    let n_th = grid_thresholds().len();
    let veh = |x: f64, v: f64, theta: f64| Kinematics { x, v, theta, length: 5.0, width: 1.8 };
    let mut out = Vec::new();
    for &ev in &ego_v {
        for &et in &ego_theta {
            let ego = veh(100.0, ev, et);
            for fdx in front_dx {
                for &fv in front_v.iter().take(if fdx.is_some() { front_v.len() } else { 1 }) {
                    for tdx in tf_dx {
                        for &tv in tf_v.iter().take(if tdx.is_some() { tf_v.len() } else { 1 }) {
                            for rdx in tr_dx {
                                for &rv in tr_v.iter().take(if rdx.is_some() { tr_v.len() } else { 1 }) {
                                    let ctx = PsarContext {
                                        ego,
                                        front: fdx.map(|dx| veh(100.0 + dx, fv, 0.0)),
                                        target_front: tdx.map(|dx| veh(100.0 + dx, tv, 0.0)),
                                        target_rear: rdx.map(|dx| veh(100.0 + dx, rv, 0.0)),
                                    };
                                    for a in 0..5 {
                                        for t in 0..n_th {
                                            out.push((a, ctx, t));
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Runs the grid through both transcriptions.
pub fn verify_grid() -> GridReport {
    let ths = grid_thresholds();
    let cases = grid_cases();
    let mut mismatches = 0;
    let mut first = None;
    let mut counts = std::collections::BTreeMap::<&'static str, usize>::new();
    for (a, ctx, t) in &cases {
        let th = &ths[*t];
        let (got, r) = refine(Action::from_index(*a).expect("grid action"), ctx, th);
        let (want, want_tag, want_b) = reference_refine(*a, ctx, th);
        *counts.entry(r.tag.as_str()).or_default() += 1;
        if got.index() != want || r.tag != want_tag || r.b_lc != want_b {
            mismatches += 1;
            if first.is_none() {
                first = Some(format!("action {a}, thresholds #{t}, {ctx:?}: got ({got:?}, {r:?}), want ({want}, {want_tag:?}, {want_b})"));
            }
        }
    }
    GridReport {
        cases: cases.len(),
        mismatches,
        tag_counts: counts.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        first_mismatch: first,
    }
}
