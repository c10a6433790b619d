use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::ModelParams;
use crate::{Error, Result};

/// Gradients keyed by parameter name. BTreeMap keeps every reduction over
/// them in sorted-name order, which pins bit-determinism.
pub type Grads = BTreeMap<String, Vec<f32>>;

/// AdamW hyperparameters (decoupled weight decay).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Optimizer state: first/second moment buffers for trainable parameters
/// only, plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub step: u64,
    pub hyper: AdamHyper,
    trainable: BTreeSet<String>,
    m: BTreeMap<String, Vec<f32>>,
    v: BTreeMap<String, Vec<f32>>,
}

impl OptimState {
    pub fn new(params: &ModelParams, trainable: BTreeSet<String>, hyper: AdamHyper) -> Result<Self> {
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for name in &trainable {
            let n = params.get(name)?.numel();
            m.insert(name.clone(), vec![0.0f32; n]);
            v.insert(name.clone(), vec![0.0f32; n]);
        }
        Ok(Self {
            step: 0,
            hyper,
            trainable,
            m,
            v,
        })
    }

    pub fn trainable(&self) -> &BTreeSet<String> {
        &self.trainable
    }

    pub fn moment_buffers(&self) -> (&BTreeMap<String, Vec<f32>>, &BTreeMap<String, Vec<f32>>) {
        (&self.m, &self.v)
    }

    pub fn restore_moments(
        &mut self,
        m: BTreeMap<String, Vec<f32>>,
        v: BTreeMap<String, Vec<f32>>,
        step: u64,
    ) -> Result<()> {
        for name in &self.trainable {
            if !m.contains_key(name) || !v.contains_key(name) {
                return Err(Error::Contract(format!(
                    "missing moment buffers for trainable '{name}'"
                )));
            }
        }
        self.m = m;
        self.v = v;
        self.step = step;
        Ok(())
    }
}

/// Scales all trainable gradients so their global L2 norm does not exceed
/// max_norm; returns the observed (pre-clip) norm. Non-finite gradients are
/// a numeric failure naming the parameter.
pub fn clip_grad_norm(grads: &mut Grads, max_norm: f32) -> Result<f64> {
    if max_norm <= 0.0 {
        return Err(Error::Config("max_norm must be positive".into()));
    }
    let mut sum_sq = 0.0f64;
    for (name, g) in grads.iter() {
        for &v in g {
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in parameter '{name}'"
                )));
            }
            sum_sq += (v as f64) * (v as f64);
        }
    }
    let norm = sum_sq.sqrt();
    if norm > max_norm as f64 {
        let scale = (max_norm as f64 / norm) as f32;
        for g in grads.values_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    Ok(norm)
}

/// One decoupled-weight-decay Adam step over the trainable set:
/// w <- w - lr_eff * m_hat / (sqrt(v_hat) + eps) - lr_eff * wd * w,
/// with lr_eff = lr * multiplier(name). Frozen names are untouched; a
/// missing gradient for a trainable name is a contract error.
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &Grads,
    opt: &mut OptimState,
    lr: f64,
    multipliers: Option<&BTreeMap<String, f64>>,
) -> Result<()> {
    opt.step += 1;
    let t = opt.step as i32;
    let h = opt.hyper;
    let bias1 = 1.0 - h.beta1.powi(t);
    let bias2 = 1.0 - h.beta2.powi(t);
    let names: Vec<String> = opt.trainable.iter().cloned().collect();
    for name in &names {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing gradient for trainable '{name}'")))?;
        let lr_eff = lr * multipliers.and_then(|m| m.get(name)).copied().unwrap_or(1.0);
        let m = opt.m.get_mut(name).expect("moment buffer exists");
        let v = opt.v.get_mut(name).expect("moment buffer exists");
        let w = params.get_mut(name)?.data_mut();
        if g.len() != w.len() {
            return Err(Error::Shape(format!(
                "gradient for '{name}' has {} values, parameter has {}",
                g.len(),
                w.len()
            )));
        }
        for i in 0..w.len() {
            let gi = g[i] as f64;
            let mi = h.beta1 * m[i] as f64 + (1.0 - h.beta1) * gi;
            let vi = h.beta2 * v[i] as f64 + (1.0 - h.beta2) * gi * gi;
            m[i] = mi as f32;
            v[i] = vi as f32;
            let m_hat = mi / bias1;
            let v_hat = vi / bias2;
            let wi = w[i] as f64;
            w[i] = (wi - lr_eff * (m_hat / (v_hat.sqrt() + h.eps)) - lr_eff * h.weight_decay * wi)
                as f32;
        }
    }
    Ok(())
}
