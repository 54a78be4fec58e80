use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamStore};
use super::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected adaptive-moment optimiser state.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Adam { config, step: 0, m: zeros.clone(), v: zeros, _marker: std::marker::PhantomData }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, store: &mut ParamStore<T>, grads: &Grads<T>, lr: f64) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::NonFinite("gradients".into()));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, g) in grads.values.iter().enumerate() {
            let data = &mut store.get_mut(super::ParamId(i)).data;
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..g.len() {
                let gk = g[k].as_f64();
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                data[k] -= T::of(lr * mh / (vh.sqrt() + eps));
            }
        }
        if !store.all_finite() {
            return Err(Error::NonFinite("parameters after update".into()));
        }
        Ok(())
    }
}

/// Rescale `grads` so their global L2 norm is at most `max_norm`. Returns
/// the factor applied.
pub fn clip_global_norm<T: Real>(grads: &mut Grads<T>, max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = grads.global_norm();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.scale(T::of(s));
        s
    } else {
        1.0
    }
}
