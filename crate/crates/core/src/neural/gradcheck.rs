//! Central finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::graph::{Graph, NodeId};
use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Entries checked per parameter tensor; larger tensors are sampled.
    pub max_entries: usize,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-5, tolerance: 1e-4, max_entries: 64, floor: 1e-3, seed: 0 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn eval_loss<F>(store: &ParamStore<f64>, build: &F) -> Result<f64>
where
    F: for<'a> Fn(&mut Graph<'a, f64>) -> Result<NodeId>,
{
    let mut g = Graph::new(store);
    let loss = build(&mut g)?;
    g.check_finite()?;
    Ok(g.value(loss).item())
}

/// Compares analytic parameter gradients of the loss built by `build`
/// against central differences. The store is restored before returning.
pub fn grad_check<F>(store: &mut ParamStore<f64>, build: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: for<'a> Fn(&mut Graph<'a, f64>) -> Result<NodeId>,
{
    let analytic: Vec<_> = {
        let mut g = Graph::new(store);
        let loss = build(&mut g)?;
        if g.shape(loss) != [1, 1] {
            return Err(Error::Shape("grad check needs a scalar loss".into()));
        }
        g.check_finite()?;
        g.backward(loss).params().to_vec()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = Vec::with_capacity(store.len());
    let mut overall = 0.0f64;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.value(id).len();
        let entries: Vec<usize> =
            if n <= cfg.max_entries { (0..n).collect() } else { sample(&mut rng, n, cfg.max_entries).into_vec() };
        let mut worst = 0.0f64;
        for &k in &entries {
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + cfg.step;
            let plus = eval_loss(store, &build);
            store.value_mut(id).data_mut()[k] = orig - cfg.step;
            let minus = eval_loss(store, &build);
            store.value_mut(id).data_mut()[k] = orig;
            let numeric = (plus? - minus?) / (2.0 * cfg.step);
            let a = analytic[id.index()].as_ref().map_or(0.0, |t| t.data()[k]);
            worst = worst.max(relative_error(a, numeric, cfg.floor));
        }
        overall = overall.max(worst);
        params.push(ParamCheck { name: store.name(id).to_string(), checked: entries.len(), max_rel_error: worst });
    }
    Ok(GradCheckReport { params, max_rel_error: overall, tolerance: cfg.tolerance })
}
