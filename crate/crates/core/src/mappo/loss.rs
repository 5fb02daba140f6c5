use std::sync::Arc;

use crate::env::Observation;
use crate::error::{Error, Result};
use crate::nets::{ActorBatch, ActorNet, CriticBatch, CriticNet};
use crate::env::GlobalState;
use crate::neural::{Graph, NodeId, Tensor};

/// `min(r A, clip(r, 1-eps, 1+eps) A)` for one sample.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// `max((v - R)^2, (v_old + clip(v - v_old, -eps, eps) - R)^2)` for one sample.
pub fn clipped_value_error(v: f64, v_old: f64, ret: f64, eps: f64) -> f64 {
    let clipped = v_old + (v - v_old).clamp(-eps, eps);
    (v - ret).powi(2).max((clipped - ret).powi(2))
}

/// Entropy of the categorical distribution given by `logits`.
pub fn entropy(logits: &[f64]) -> f64 {
    let mut lp = logits.to_vec();
    crate::neural::graph::log_softmax_in_place(&mut lp);
    -lp.iter().map(|l| l.exp() * l).sum::<f64>()
}

#[derive(Clone, Copy, Debug)]
pub struct ActorStep<'a> {
    pub obs: &'a Observation,
    pub action: usize,
    pub old_log_prob: f64,
    pub advantage: f64,
}

/// Consecutive decisions of one agent, replayed from a stored recurrent state.
#[derive(Clone, Debug)]
pub struct ActorSequence<'a> {
    pub h0: &'a [f64],
    pub steps: Vec<ActorStep<'a>>,
}

#[derive(Clone, Copy, Debug)]
pub struct CriticStep<'a> {
    pub state: &'a GlobalState,
    pub old_value: f64,
    pub ret: f64,
}

#[derive(Clone, Debug)]
pub struct CriticSequence<'a> {
    pub h0: &'a [f64],
    pub steps: Vec<CriticStep<'a>>,
}

#[derive(Clone, Copy, Debug)]
pub struct ActorLoss {
    pub loss: NodeId,
    /// Mean clipped surrogate.
    pub surrogate: NodeId,
    pub entropy: NodeId,
}

fn check_sequences<S>(seqs: &[S], len: impl Fn(&S) -> usize) -> Result<(Vec<usize>, usize)> {
    if seqs.is_empty() || seqs.iter().any(|s| len(s) == 0) {
        return Err(Error::Contract("loss needs at least one non-empty sequence".into()));
    }
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(len(&seqs[i])));
    let total = seqs.iter().map(len).sum();
    Ok((order, total))
}

fn stack_h0(rows: Vec<&[f64]>, width: usize) -> Result<Tensor<f64>> {
    let n = rows.len();
    let mut data = Vec::with_capacity(n * width);
    for r in rows {
        if r.len() != width {
            return Err(Error::Shape(format!("recurrent state of {} values, expected {width}", r.len())));
        }
        data.extend_from_slice(r);
    }
    Tensor::new(n, width, data)
}

/// Clipped-surrogate actor loss with an entropy bonus, averaged over every
/// decision in `seqs`. Sequences are unrolled together from their stored
/// states; shorter ones simply drop out of later steps.
pub fn actor_loss(g: &mut Graph<'_, f64>, actor: &ActorNet, seqs: &[ActorSequence<'_>], eps: f64, entropy_coef: f64) -> Result<ActorLoss> {
    let (order, total) = check_sequences(seqs, |s| s.steps.len())?;
    let h0 = stack_h0(order.iter().map(|&i| seqs[i].h0).collect(), actor.cfg.gru_hidden)?;
    let mut h = g.input(h0);
    let mut surr_terms = Vec::new();
    let mut ent_terms = Vec::new();
    let max_len = seqs[order[0]].steps.len();
    for k in 0..max_len {
        let active: Vec<&ActorStep<'_>> = order.iter().map_while(|&i| seqs[i].steps.get(k)).collect();
        let n = active.len();
        if g.shape(h)[0] != n {
            h = g.slice_rows(h, 0, n);
        }
        let obs: Vec<&Observation> = active.iter().map(|s| s.obs).collect();
        let batch = ActorBatch::new(&obs, &actor.cfg)?;
        let out = actor.forward(g, &batch, h)?;
        h = out.hidden;
        let lp = g.log_softmax_rows(out.logits);
        let idx: Arc<[usize]> = active.iter().map(|s| s.action).collect();
        let new_lp = g.pick_cols(lp, idx);
        let old_lp = g.input(Tensor::column(active.iter().map(|s| s.old_log_prob).collect()));
        let adv = g.input(Tensor::column(active.iter().map(|s| s.advantage).collect()));
        let diff = g.sub(new_lp, old_lp);
        let ratio = g.exp(diff);
        let s1 = g.mul(ratio, adv);
        let clipped = g.clamp(ratio, 1.0 - eps, 1.0 + eps);
        let s2 = g.mul(clipped, adv);
        let surr = g.minimum(s1, s2);
        surr_terms.push(g.sum(surr));
        let p = g.exp(lp);
        let plp = g.mul(p, lp);
        ent_terms.push(g.sum(plp));
    }
    let inv = 1.0 / total as f64;
    let surr_sum = g.concat_rows(&surr_terms);
    let surr_sum = g.sum(surr_sum);
    let surrogate = g.scale(surr_sum, inv);
    let neg_ent_sum = g.concat_rows(&ent_terms);
    let neg_ent_sum = g.sum(neg_ent_sum);
    let entropy = g.scale(neg_ent_sum, -inv);
    let bonus = g.scale(entropy, entropy_coef);
    let objective = g.add(surrogate, bonus);
    let loss = g.neg(objective);
    Ok(ActorLoss { loss, surrogate, entropy })
}

/// Clipped value loss averaged over every state in `seqs`.
pub fn critic_loss(g: &mut Graph<'_, f64>, critic: &CriticNet, seqs: &[CriticSequence<'_>], eps: f64) -> Result<NodeId> {
    let (order, total) = check_sequences(seqs, |s| s.steps.len())?;
    let h0 = stack_h0(order.iter().map(|&i| seqs[i].h0).collect(), critic.cfg.gru_hidden)?;
    let mut h = g.input(h0);
    let mut terms = Vec::new();
    let max_len = seqs[order[0]].steps.len();
    for k in 0..max_len {
        let active: Vec<&CriticStep<'_>> = order.iter().map_while(|&i| seqs[i].steps.get(k)).collect();
        let n = active.len();
        if g.shape(h)[0] != n {
            h = g.slice_rows(h, 0, n);
        }
        let states: Vec<&GlobalState> = active.iter().map(|s| s.state).collect();
        let batch = CriticBatch::new(&states, &critic.cfg)?;
        let out = critic.forward(g, &batch, h)?;
        h = out.hidden;
        let v_old = g.input(Tensor::column(active.iter().map(|s| s.old_value).collect()));
        let ret = g.input(Tensor::column(active.iter().map(|s| s.ret).collect()));
        let dv = g.sub(out.value, v_old);
        let dv = g.clamp(dv, -eps, eps);
        let v_clip = g.add(v_old, dv);
        let e1 = g.sub(out.value, ret);
        let e1 = g.square(e1);
        let e2 = g.sub(v_clip, ret);
        let e2 = g.square(e2);
        let e = g.maximum(e1, e2);
        terms.push(g.sum(e));
    }
    let s = g.concat_rows(&terms);
    let s = g.sum(s);
    Ok(g.scale(s, 1.0 / total as f64))
}
