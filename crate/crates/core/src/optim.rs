//! Adam with decoupled weight decay.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Params;
use crate::scalar::Real;

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
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Optimizer state: step count and first/second moments shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<P> {
    pub config: AdamWConfig,
    pub t: u64,
    pub m: P,
    pub v: P,
}

impl<P: Clone> AdamW<P> {
    pub fn new<T: Real>(config: AdamWConfig, params: &P) -> Self
    where
        P: Params<T>,
    {
        Self {
            config,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// One update at learning rate `lr`:
    /// `p <- p - lr * wd * p - lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step<T: Real>(&mut self, params: &mut P, grads: &P, lr: f64) -> Result<()>
    where
        P: Params<T>,
    {
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (ob1, ob2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let decay = T::lit(1.0 - lr * c.weight_decay);
        let step = T::lit(lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(c.eps);
        let mut p_list = params.named_mut();
        let g_list = grads.named();
        let mut m_list = self.m.named_mut();
        let mut v_list = self.v.named_mut();
        if p_list.len() != g_list.len() || p_list.len() != m_list.len() || p_list.len() != v_list.len() {
            return Err(Error::DimMismatch("optimizer state does not match parameters".into()));
        }
        for (((p, g), m), v) in p_list.iter_mut().zip(&g_list).zip(m_list.iter_mut()).zip(v_list.iter_mut()) {
            if p.1.shape() != g.1.shape() || p.1.shape() != m.1.shape() {
                return Err(Error::DimMismatch(format!("tensor {} shape mismatch", p.0)));
            }
            ndarray::Zip::from(&mut p.1)
                .and(&g.1)
                .and(&mut m.1)
                .and(&mut v.1)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + ob1 * g;
                    *v = b2 * *v + ob2 * g * g;
                    *p = *p * decay - step * *m / ((*v * inv_bc2).sqrt() + eps);
                });
        }
        Ok(())
    }
}

/// Learning rate at `step` of `total`: constant, or cosine decay to zero.
pub fn scheduled_lr(base: f64, step: u64, total: u64, cosine: bool) -> f64 {
    if !cosine || total == 0 {
        return base;
    }
    let frac = (step as f64 / total as f64).min(1.0);
    0.5 * base * (1.0 + (PI * frac).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use ndarray::array;

    #[test]
    fn first_step_moves_by_lr_along_gradient_sign() {
        let mut p = Linear {
            weight: array![[1.0f64, -2.0]],
            bias: array![0.5],
        };
        let g = Linear {
            weight: array![[0.3, -4.0]],
            bias: array![0.0],
        };
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut opt = AdamW::new(cfg, &p);
        opt.step(&mut p, &g, 0.1).unwrap();
        assert!((p.weight[[0, 0]] - 0.9).abs() < 1e-6);
        assert!((p.weight[[0, 1]] + 1.9).abs() < 1e-6);
        assert_eq!(p.bias[0], 0.5);
    }

    #[test]
    fn decay_is_decoupled_from_gradient() {
        let mut p = Linear {
            weight: array![[2.0f64]],
            bias: array![0.0],
        };
        let g = p.zeros_like();
        let mut opt = AdamW::new(
            AdamWConfig {
                weight_decay: 0.5,
                ..AdamWConfig::default()
            },
            &p,
        );
        opt.step(&mut p, &g, 0.1).unwrap();
        assert!((p.weight[[0, 0]] - 2.0 * 0.95).abs() < 1e-12);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(scheduled_lr(1.0, 5, 10, false), 1.0);
        assert!((scheduled_lr(1.0, 0, 10, true) - 1.0).abs() < 1e-12);
        assert!(scheduled_lr(1.0, 10, 10, true).abs() < 1e-12);
    }
}
