//! Adam optimizer over a ParamStore.

use std::path::Path;

use crate::error::Result;
use crate::tensor::{ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Self {
        let m = (0..store.len()).map(|i| vec![0.0; store.tensor(i).numel()]).collect();
        let v = (0..store.len()).map(|i| vec![0.0; store.tensor(i).numel()]).collect();
        AdamState { cfg, t: 0, m, v }
    }

    /// Apply one update from the accumulated gradients, then zero them.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
        for i in 0..store.len() {
            let tensor = store.tensor_mut(i);
            let Some(grad) = tensor.grad.clone() else { continue };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let data = tensor.data_mut();
            for j in 0..data.len() {
                m[j] = self.cfg.beta1 * m[j] + (1.0 - self.cfg.beta1) * grad[j];
                v[j] = self.cfg.beta2 * v[j] + (1.0 - self.cfg.beta2) * grad[j] * grad[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
            tensor.zero_grad();
        }
    }

    /// Moments as a params container (for checkpointing).
    pub fn save(&self, store: &ParamStore, path: &Path) -> Result<()> {
        let mut out = ParamStore::new();
        for (i, name) in store.names().enumerate() {
            let shape = store.tensor(i).shape().to_vec();
            out.add(format!("m.{name}"), Tensor::from_vec(shape.clone(), self.m[i].clone())?);
            out.add(format!("v.{name}"), Tensor::from_vec(shape, self.v[i].clone())?);
        }
        out.add("t", Tensor::from_vec(vec![1], vec![self.t as f64])?);
        out.save(path)
    }

    pub fn load(cfg: AdamConfig, store: &ParamStore, path: &Path) -> Result<Self> {
        let container = ParamStore::load(path)?;
        let mut state = AdamState::new(cfg, store);
        for (i, name) in store.names().enumerate() {
            state.m[i] = container
                .get(&format!("m.{name}"))
                .ok_or_else(|| crate::error::DifaugError::Other(format!("missing moment m.{name}")))?
                .data()
                .to_vec();
            state.v[i] = container
                .get(&format!("v.{name}"))
                .ok_or_else(|| crate::error::DifaugError::Other(format!("missing moment v.{name}")))?
                .data()
                .to_vec();
        }
        state.t = container
            .get("t")
            .ok_or_else(|| crate::error::DifaugError::Other("missing step counter".into()))?
            .data()[0] as u64;
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descends_a_quadratic() {
        // minimize (x-3)² by hand-fed gradients
        let mut store = ParamStore::new();
        store.add("x", Tensor::from_vec(vec![1], vec![0.0]).unwrap());
        let mut adam = AdamState::new(AdamConfig { lr: 0.1, ..Default::default() }, &store);
        for _ in 0..500 {
            let x = store.tensor(0).data()[0];
            store.tensor_mut(0).accumulate_grad(&[2.0 * (x - 3.0)]);
            adam.step(&mut store);
        }
        let x = store.tensor(0).data()[0];
        assert!((x - 3.0).abs() < 0.05, "x = {x}");
    }

    #[test]
    fn moments_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParamStore::new();
        store.add("w", Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap());
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        store.tensor_mut(0).accumulate_grad(&[0.3, -0.4]);
        adam.step(&mut store);
        let path = dir.path().join("opt.bin");
        adam.save(&store, &path).unwrap();
        let back = AdamState::load(AdamConfig::default(), &store, &path).unwrap();
        assert_eq!(back.t, 1);
        assert_eq!(back.m, adam.m);
        assert_eq!(back.v, adam.v);
    }
}
