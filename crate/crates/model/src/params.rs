//! Named trainable parameters with seeded initialisation.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use kbnet_core::tns::TensorContainer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ModelError, Result};

/// Flat map from dotted parameter names to variables.
///
/// Names are hierarchical (`feat.block2.conv1.weight`); the first segment is the
/// sub-network namespace (`est`, `feat`, `align`, `recon`).
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
    seed: u64,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: Device) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
            device,
            seed,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn insert(&mut self, name: String, values: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if self.vars.contains_key(&name) {
            return Err(ModelError::Config(format!("parameter `{name}` declared twice")));
        }
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let handle = var.as_tensor().clone();
        self.vars.insert(name, var);
        Ok(handle)
    }

    /// Uniform in ±bound. Each parameter draws from its own stream keyed by name, so
    /// initial values do not depend on which other parameters exist.
    pub fn uniform(&mut self, name: impl Into<String>, shape: &[usize], bound: f64) -> Result<Tensor> {
        let name = name.into();
        let n: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ name_hash(&name));
        let values = (0..n)
            .map(|_| {
                if bound > 0.0 {
                    rng.random_range(-bound..bound)
                } else {
                    0.0
                }
            })
            .collect();
        self.insert(name, values, shape)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        self.insert(name.into(), vec![0.0; n], shape)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Top-level namespaces present, sorted.
    pub fn namespaces(&self) -> Vec<String> {
        let mut ns: Vec<String> = self.vars.keys().map(|k| namespace(k).to_string()).collect();
        ns.dedup();
        ns
    }

    /// Writes every parameter as f32 under its own name.
    pub fn write_into(&self, c: &mut TensorContainer, prefix: &str) -> Result<()> {
        for (name, var) in &self.vars {
            let data = var.as_tensor().to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
            c.insert(format!("{prefix}{name}"), var.dims(), data)?;
        }
        Ok(())
    }

    /// Overwrites every parameter from `c`; a missing name or a shape change is an error.
    pub fn read_from(&self, c: &TensorContainer, prefix: &str) -> Result<()> {
        for (name, var) in &self.vars {
            let t = c.require(&format!("{prefix}{name}"), Some(var.dims()))?;
            let value = Tensor::from_vec(t.data.clone(), var.dims(), &self.device)?.to_dtype(self.dtype)?;
            var.set(&value)?;
        }
        Ok(())
    }
}

/// FNV-1a.
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// First dotted segment of a parameter name.
pub fn namespace(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}
