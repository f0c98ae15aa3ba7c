//! AdamW with decoupled weight decay.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        AdamWParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

/// One update `p ← p − lr·(m̂/(√v̂ + ε) + wd·p)`.
pub fn adamw_step(params: &mut [f64], grads: &[f64], state: &mut Moments, lr: f64, hp: &AdamWParams) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::Config(format!(
            "gradient has {} values for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    if state.m.is_empty() {
        state.m = vec![0.0; params.len()];
        state.v = vec![0.0; params.len()];
    }
    state.t += 1;
    let c1 = 1.0 - hp.beta1.powi(state.t as i32);
    let c2 = 1.0 - hp.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
        state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= lr * (mh / (vh.sqrt() + hp.eps) + hp.weight_decay * params[i]);
    }
    Ok(())
}

/// Optimizer state for every tensor of a [`ParamStore`].
#[derive(Debug, Clone, Default)]
pub struct AdamW {
    pub hp: AdamWParams,
    state: BTreeMap<String, Moments>,
}

impl AdamW {
    pub fn new(hp: AdamWParams) -> Self {
        AdamW {
            hp,
            state: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Vec<f64>>, lr: f64) -> Result<()> {
        for (name, g) in grads {
            let entry = store.get_mut(name).ok_or_else(|| Error::Config(format!("no parameter `{name}`")))?;
            let st = self.state.entry(name.clone()).or_default();
            adamw_step(&mut entry.data, g, st, lr, &self.hp)?;
        }
        Ok(())
    }
}
