use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::Tensor;
use kbnet_core::tns::TensorContainer;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are created lazily for parameters that
/// receive a gradient.
pub struct Adam {
    pub config: AdamConfig,
    /// Number of updates applied.
    pub t: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    /// Updates every parameter accepted by `trainable` that has a gradient.
    pub fn step(
        &mut self,
        params: &ParamStore,
        grads: &GradStore,
        lr: f64,
        trainable: impl Fn(&str) -> bool,
    ) -> Result<()> {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (name, var) in params.iter() {
            if !trainable(name) {
                continue;
            }
            let Some(g) = grads.get(var.as_tensor()) else { continue };
            // gradients carry their own graph; moments must not keep it alive
            let g = &g.detach();
            let m_prev = match self.first.get(name) {
                Some(m) => m.clone(),
                None => g.zeros_like()?,
            };
            let v_prev = match self.second.get(name) {
                Some(v) => v.clone(),
                None => g.zeros_like()?,
            };
            let m = ((m_prev * beta1)? + (g * (1.0 - beta1))?)?;
            let v = ((v_prev * beta2)? + (g.sqr()? * (1.0 - beta2))?)?;
            let denom = ((&v / bc2)?.sqrt()? + eps)?;
            let update = ((&m / bc1)? / denom)?;
            var.set(&(var.as_tensor().detach() - (update * lr)?)?)?;
            self.first.insert(name.to_string(), m);
            self.second.insert(name.to_string(), v);
        }
        Ok(())
    }

    pub fn write_into(&self, c: &mut TensorContainer) -> Result<()> {
        for (prefix, map) in [("opt.m.", &self.first), ("opt.v.", &self.second)] {
            for (name, t) in map {
                let data = t.to_dtype(candle_core::DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
                c.insert(format!("{prefix}{name}"), t.dims(), data)?;
            }
        }
        c.set_meta("opt_t", serde_json::Value::from(self.t));
        c.set_meta("opt_config", serde_json::to_value(self.config).expect("plain struct"));
        Ok(())
    }

    /// Restores moments for every parameter present in `c`.
    pub fn read_from(c: &TensorContainer, params: &ParamStore) -> Result<Self> {
        let config = c
            .meta()
            .get("opt_config")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .unwrap_or_default();
        let mut adam = Adam::new(config);
        adam.t = c.meta().get("opt_t").and_then(|v| v.as_u64()).unwrap_or(0);
        for (name, var) in params.iter() {
            for (prefix, map) in [("opt.m.", &mut adam.first), ("opt.v.", &mut adam.second)] {
                if let Some(t) = c.get(&format!("{prefix}{name}")) {
                    let t = c.require(&t.name, Some(var.dims()))?;
                    let value =
                        Tensor::from_vec(t.data.clone(), var.dims(), params.device())?.to_dtype(params.dtype())?;
                    map.insert(name.to_string(), value);
                }
            }
        }
        Ok(adam)
    }
}
