use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};

use super::checkpoint::Checkpoint;
use super::params::ParamStore;
use crate::error::Result;

/// AdamW with decoupled weight decay. Moments are kept by parameter name so
/// they can be checkpointed and restored for exact resumption.
pub struct AdamW {
    vars: Vec<(String, Var)>,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    pub step: usize,
    pub lr: f64,
    pub weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl AdamW {
    pub fn new(params: &ParamStore, lr: f64, weight_decay: f64) -> Self {
        Self {
            vars: params.iter().map(|(n, v)| (n.to_string(), v.clone())).collect(),
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            step: 0,
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn apply(&mut self, grads: &GradStore) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let scale_m = 1.0 / (1.0 - self.beta1.powi(t));
        let scale_v = 1.0 / (1.0 - self.beta2.powi(t));
        for (name, var) in &self.vars {
            let Some(g) = grads.get(var.as_tensor()) else { continue };
            let m = match self.m.get(name) {
                Some(m) => ((m * self.beta1)? + (g * (1.0 - self.beta1))?)?,
                None => (g * (1.0 - self.beta1))?,
            };
            let v = match self.v.get(name) {
                Some(v) => ((v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?,
                None => (g.sqr()? * (1.0 - self.beta2))?,
            };
            let update = ((&m * scale_m)? / ((&v * scale_v)?.sqrt()? + self.eps)?)?;
            let decayed = (var.as_tensor() * (1.0 - self.lr * self.weight_decay))?;
            var.set(&(decayed - (update * self.lr)?)?.detach())?;
            self.m.insert(name.clone(), m.detach());
            self.v.insert(name.clone(), v.detach());
        }
        Ok(())
    }

    pub fn save_into(&self, ck: &mut Checkpoint) -> Result<()> {
        for (name, m) in &self.m {
            ck.insert(format!("optim.m.{name}"), m)?;
        }
        for (name, v) in &self.v {
            ck.insert(format!("optim.v.{name}"), v)?;
        }
        Ok(())
    }

    pub fn restore_from(&mut self, ck: &Checkpoint, step: usize) -> Result<()> {
        self.step = step;
        for (name, var) in &self.vars {
            let dtype = var.dtype();
            if let Some(m) = ck.tensor(&format!("optim.m.{name}"), var.device())? {
                self.m.insert(name.clone(), m.to_dtype(dtype)?);
            }
            if let Some(v) = ck.tensor(&format!("optim.v.{name}"), var.device())? {
                self.v.insert(name.clone(), v.to_dtype(dtype)?);
            }
        }
        Ok(())
    }
}
