use crate::error::{Error, Result};

/// Generalised advantage estimation over a flat sequence that may hold
/// several episodes.
///
/// `values` carries one extra entry, the bootstrap value of the state after
/// the last step; it is ignored when the last step is terminal. A `done`
/// step bootstraps with zero and cuts the advantage recursion.
pub fn compute_gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n + 1 || dones.len() != n {
        return Err(Error::Contract(format!(
            "gae needs values = rewards + 1 and dones = rewards, got {n} rewards, {} values, {} dones",
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut next = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * live - values[t];
        next = delta + gamma * lambda * live * next;
        adv[t] = next;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Shifts and scales to zero mean, unit variance; constant input maps to zeros.
pub fn normalize(x: &mut [f64]) {
    let (mean, std) = mean_std(x);
    for v in x {
        *v = (*v - mean) / std;
    }
}

/// Mean and population standard deviation, the latter floored at 1e-8.
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (0.0, 1.0);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt().max(1e-8))
}
