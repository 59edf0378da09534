use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};

/// Named trainable tensors with seeded initialization, so a model is a pure
/// function of its seed.
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: &Device) -> Self {
        Self {
            vars: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            dtype,
            device: device.clone(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn insert(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::ModelConfig(format!("duplicate parameter '{name}'")));
        }
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        self.insert(name, shape, vec![0.0; shape.iter().product()])
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        self.insert(name, shape, vec![1.0; shape.iter().product()])
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Tensor> {
        let dist = Normal::new(0.0, std).map_err(|e| Error::ModelConfig(e.to_string()))?;
        let data = (0..shape.iter().product())
            .map(|_| dist.sample(&mut self.rng))
            .collect();
        self.insert(name, shape, data)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<Tensor> {
        let dist = Uniform::new_inclusive(-bound, bound).map_err(|e| Error::ModelConfig(e.to_string()))?;
        let data = (0..shape.iter().product())
            .map(|_| dist.sample(&mut self.rng))
            .collect();
        self.insert(name, shape, data)
    }

    pub fn from_fn(
        &mut self,
        name: &str,
        shape: &[usize],
        f: impl Fn(&[usize], &mut ChaCha8Rng) -> f64,
    ) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0; shape.len()];
        for _ in 0..n {
            data.push(f(&idx, &mut self.rng));
            for k in (0..shape.len()).rev() {
                idx[k] += 1;
                if idx[k] < shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        self.insert(name, shape, data)
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

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Overwrites one parameter in place.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .vars
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter '{name}'")))?;
        if var.dims() != value.dims() {
            return Err(Error::ShapeMismatch(format!(
                "parameter '{name}' has shape {:?}, got {:?}",
                var.dims(),
                value.dims()
            )));
        }
        var.set(&value.to_dtype(self.dtype)?.contiguous()?)?;
        Ok(())
    }

    /// Copies every parameter value from `other` (same names and shapes).
    pub fn copy_from(&self, other: &ParamStore) -> Result<()> {
        for (name, var) in &other.vars {
            self.set(name, &var.as_detached_tensor().copy()?)?;
        }
        Ok(())
    }
}

/// Joins a scope prefix and a local parameter name.
pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
