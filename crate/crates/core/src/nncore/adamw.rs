use serde::{Deserialize, Serialize};

use super::Real;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// Adam with decoupled weight decay.
///
/// Per step `t` and parameter `θ` with gradient `g`:
///
/// ```text
/// θ ← θ − lr·wd·θ
/// m ← β1·m + (1−β1)·g        v ← β2·v + (1−β2)·g²
/// θ ← θ − lr · (m / (1−β1^t)) / (√(v / (1−β2^t)) + ε)
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: AdamWConfig, param_sizes: &[usize]) -> Self {
        AdamW {
            config,
            step: 0,
            first_moment: param_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            second_moment: param_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::Dimension(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first_moment) {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::Dimension("parameter, gradient and moment sizes differ".into()));
            }
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let lr = T::lit(c.lr);
        let decay = T::one() - T::lit(c.lr * c.weight_decay);
        let bc1 = T::lit(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.step as i32));
        let eps = T::lit(c.eps);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] = p[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_without_decay_is_identity() {
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        let mut opt = AdamW::<f64>::new(cfg, &[3]);
        let mut p = vec![1.0, -2.0, 3.0];
        for _ in 0..5 {
            opt.step(&mut [&mut p], &[&[0.0; 3]]).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g = 1 and v̂ = g² = 1 after bias correction, so Δθ = −lr/(1+ε)
        let cfg = AdamWConfig { lr: 0.1, weight_decay: 0.0, ..Default::default() };
        let mut opt = AdamW::<f64>::new(cfg, &[1]);
        let mut p = vec![0.5];
        opt.step(&mut [&mut p], &[&[1.0]]).unwrap();
        assert!((p[0] - (0.5 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn decay_only_shrinks_geometrically() {
        let cfg = AdamWConfig { lr: 0.1, weight_decay: 0.01, ..Default::default() };
        let mut opt = AdamW::<f64>::new(cfg, &[2]);
        let mut p = vec![2.0, -4.0];
        opt.step(&mut [&mut p], &[&[0.0, 0.0]]).unwrap();
        assert!((p[0] - 2.0 * (1.0 - 0.001)).abs() < 1e-15);
        assert!((p[1] + 4.0 * (1.0 - 0.001)).abs() < 1e-15);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut opt = AdamW::<f32>::new(AdamWConfig::default(), &[2]);
        let mut p = vec![0.0f32; 3];
        assert!(opt.step(&mut [&mut p], &[&[0.0; 3]]).is_err());
    }
}
