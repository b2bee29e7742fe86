use super::params::ParamStore;
use crate::error::{bail_shape, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Adam with bias correction; one instance per network.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store
            .entries()
            .iter()
            .map(|e| vec![0.0; e.value.len()])
            .collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>]) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            bail_shape!(
                "optimizer tracks {} params, store has {}, got {} grads",
                self.m.len(),
                store.len(),
                grads.len()
            );
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((entry, g), m), v) in store
            .entries_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..entry.value.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                entry.value[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        store.push("w".into(), vec![2], vec![1.0, -1.0]).unwrap();
        let cfg = AdamConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-12,
        };
        let mut opt = Adam::new(cfg, &store);
        opt.step(&mut store, &[vec![3.0, -0.5]]).unwrap();
        let v = &store.entries()[0].value;
        assert!((v[0] - 0.9).abs() < 1e-9);
        assert!((v[1] + 0.9).abs() < 1e-9);
    }
}
