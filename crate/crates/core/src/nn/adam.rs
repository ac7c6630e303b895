use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || store.params().iter().map(|p| vec![0.0; p.numel()]).collect();
        Adam { config, step: 0, m: zeros(), v: zeros() }
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }

    pub fn update(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!("{} gradients for {} parameters", grads.len(), self.m.len())));
        }
        for (g, m) in grads.iter().zip(&self.m) {
            if g.numel() != m.len() {
                return Err(Error::ShapeMismatch(format!("gradient of {} values for a {}-value parameter", g.numel(), m.len())));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in store.params_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                *pi -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Init, ParamId, ParamLayout};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_store(x: f64) -> ParamStore {
        let mut layout = ParamLayout::new();
        layout.param("x", vec![1], Init::Zeros);
        let mut s = ParamStore::init(&layout, &mut ChaCha8Rng::seed_from_u64(0));
        s.param_mut(ParamId(0)).data_mut()[0] = x;
        s
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut s = scalar_store(3.0);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        adam.update(&mut s, &[Tensor::scalar(0.0)]).unwrap();
        assert_eq!(s.param(ParamId(0)).data()[0], 3.0);
        adam.update(&mut s, &[Tensor::scalar(1.0)]).unwrap();
        let (m1, v1) = (adam.moments().0[0][0], adam.moments().1[0][0]);
        adam.update(&mut s, &[Tensor::scalar(0.0)]).unwrap();
        assert!(adam.moments().0[0][0] < m1 && adam.moments().1[0][0] < v1);
    }

    #[test]
    fn first_step_closed_form() {
        let mut s = scalar_store(0.0);
        let cfg = AdamConfig { lr: 1e-3, ..AdamConfig::default() };
        let mut adam = Adam::new(cfg, &s);
        adam.update(&mut s, &[Tensor::scalar(1.0)]).unwrap();
        // m_hat = 1, v_hat = 1 → step = -lr / (1 + eps)
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((s.param(ParamId(0)).data()[0] - expected).abs() < 1e-18);
    }

    #[test]
    fn matches_scalar_trace() {
        let (lr, b1, b2, eps, g) = (0.01, 0.9, 0.999, 1e-8, 0.5);
        let mut s = scalar_store(1.0);
        let mut adam = Adam::new(AdamConfig { lr, beta1: b1, beta2: b2, eps }, &s);
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
            adam.update(&mut s, &[Tensor::scalar(g)]).unwrap();
        }
        assert!((s.param(ParamId(0)).data()[0] - x).abs() < 1e-12);
        assert_eq!(adam.step, 2);
    }

    #[test]
    fn rejects_misshaped_gradients() {
        let mut s = scalar_store(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        assert!(adam.update(&mut s, &[Tensor::zeros(vec![2])]).is_err());
        assert!(adam.update(&mut s, &[]).is_err());
    }
}
