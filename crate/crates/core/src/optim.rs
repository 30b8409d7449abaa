//! Adam with externally visible moment state, so training checkpoints can
//! resume bit-exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::ParamSet;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: ParamSet<T>,
    pub v: ParamSet<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        let zeros = |prefix: &str| {
            let mut s = ParamSet::new();
            for p in params.iter() {
                s.push(format!("{prefix}.{}", p.name), Tensor::zeros(p.value.shape().to_vec()));
            }
            s
        };
        Self { config, step: 0, m: zeros("adam_m"), v: zeros("adam_v") }
    }

    /// One update; `grads` is aligned with `params`.
    pub fn update(&mut self, params: &mut ParamSet<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::contract("optimizer state does not match parameter set"));
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let step_size = T::lit(c.lr / bc1);
        let bc2_sqrt = T::lit(bc2.sqrt());
        let eps = T::lit(c.eps);
        let one = T::one();
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            assert_eq!(p.value.shape(), g.shape(), "gradient shape for {}", p.name);
            for (((w, &gi), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.value.data_mut())
                .zip(v.value.data_mut())
            {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                *w = *w - step_size * *mi / ((*vi).sqrt() / bc2_sqrt + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut ps = ParamSet::<f64>::new();
        ps.push("x", Tensor::from_f64(vec![2], &[3.0, -2.0]));
        let mut opt = Adam::new(AdamConfig { lr: 0.05, beta1: 0.9, ..Default::default() }, &ps);
        for _ in 0..2000 {
            let g = ps.get(0).value.map(|v| 2.0 * v);
            opt.update(&mut ps, &[g]).unwrap();
        }
        assert!(ps.get(0).value.data().iter().all(|v| v.abs() < 1e-2));
        assert_eq!(opt.step, 2000);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut ps = ParamSet::<f64>::new();
        ps.push("x", Tensor::from_f64(vec![1], &[1.0]));
        let mut opt = Adam::new(AdamConfig::default(), &ps);
        opt.update(&mut ps, &[Tensor::from_f64(vec![1], &[0.3])]).unwrap();
        assert!((ps.get(0).value.item() - (1.0 - 2e-4)).abs() < 1e-9);
    }
}
