//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::nn::{ParamSet, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 5e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// Biases and layer-norm parameters are not decayed.
pub fn decays(name: &str) -> bool {
    !(name.ends_with(".bias") || name.contains(".ln"))
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self { config, m: Vec::new(), v: Vec::new(), t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update with learning rate `lr` (callers handle warmup). Tensors for
    /// which `frozen(name)` holds are left untouched, moments included.
    pub fn step<T: Scalar, P: ParamSet<T>>(&mut self, params: &mut P, grads: &P, lr: f64, frozen: impl Fn(&str) -> bool) {
        let c = self.config;
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let grads = grads.tensors();
        let tensors = params.tensors_mut();
        if self.m.is_empty() {
            self.m = tensors.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
            self.v = self.m.clone();
        }
        for (k, ((name, p), (_, g))) in tensors.into_iter().zip(grads).enumerate() {
            if frozen(&name) {
                continue;
            }
            let wd = if decays(&name) { c.weight_decay } else { 0.0 };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.data.len() {
                let gi = g.data[i].f64();
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let x = p.data[i].f64();
                p.data[i] = T::c(x - lr * (mhat / (vhat.sqrt() + c.eps) + wd * x));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Dense, Tensor};

    struct One(Dense<f64>);

    impl ParamSet<f64> for One {
        fn tensors(&self) -> Vec<(String, &Tensor<f64>)> {
            let mut v = Vec::new();
            self.0.push_tensors("w", &mut v);
            v
        }
        fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<f64>)> {
            let mut v = Vec::new();
            self.0.push_tensors_mut("w", &mut v);
            v
        }
    }

    fn one(x: f64) -> One {
        One(Dense { weight: Tensor::filled(&[1, 1], x), bias: Tensor::filled(&[1], x) })
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = one(1.0);
        let g = one(0.5);
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() });
        opt.step(&mut p, &g, 0.1, |_| false);
        assert!((p.0.weight.data[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut p = one(1.0);
        let mut opt = AdamW::new(AdamWConfig::default());
        for _ in 0..5 {
            opt.step(&mut p, &one(3.0), 0.0, |_| false);
        }
        assert_eq!(p.0.weight.data[0], 1.0);
    }

    #[test]
    fn decay_skips_bias() {
        let mut p = one(1.0);
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.5, ..Default::default() });
        opt.step(&mut p, &one(0.0), 0.1, |_| false);
        assert!((p.0.weight.data[0] - 0.95).abs() < 1e-12);
        assert_eq!(p.0.bias.data[0], 1.0);
    }
}
