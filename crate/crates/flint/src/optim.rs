//! AdamW (decoupled weight decay), cosine annealing, and gradient clipping.

use crate::model::params::{ParamKind, ParameterSet};
use crate::tensor::{Real, Tensor};

/// Cosine annealing: `lr_min + (lr_max - lr_min) * (1 + cos(pi*e/E)) / 2`.
pub fn lr_schedule(epoch: usize, total_epochs: usize, lr_max: f64, lr_min: f64) -> f64 {
    if total_epochs == 0 {
        return lr_max;
    }
    let phase = std::f64::consts::PI * epoch as f64 / total_epochs as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + phase.cos())
}

/// Scale gradients so their global L2 norm does not exceed `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm<F: Real>(grads: &mut [Tensor<F>], max_norm: f64) -> f64 {
    let norm: f64 = grads.iter().map(|g| g.sq_norm_f64()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = F::of(max_norm / norm);
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

pub struct AdamW<F> {
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
    t: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl<F: Real> AdamW<F> {
    pub fn new(params: &ParameterSet<F>, weight_decay: f64) -> Self {
        AdamW {
            m: params.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: params.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    /// One update. Decay applies to convolution weights only, never to
    /// biases or PReLU slopes.
    pub fn step(&mut self, params: &mut ParameterSet<F>, grads: &[Tensor<F>], lr: f64) {
        assert_eq!(grads.len(), params.params.len());
        self.t += 1;
        let b1 = F::of(self.beta1);
        let b2 = F::of(self.beta2);
        let one = F::one();
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let step_scale = F::of(lr / bc1);
        let inv_bc2 = F::of(1.0 / bc2);
        let eps = F::of(self.eps);
        for (i, p) in params.params.iter_mut().enumerate() {
            let g = &grads[i];
            let decay = if p.kind == ParamKind::Weight {
                F::of(lr * self.weight_decay)
            } else {
                F::zero()
            };
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let theta = p.value.data_mut();
            for j in 0..theta.len() {
                let gj = g.data()[j];
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                let vhat_sqrt = (v[j] * inv_bc2).sqrt();
                theta[j] = theta[j] - step_scale * m[j] / (vhat_sqrt + eps) - decay * theta[j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::{Mode, ModelConfig};
    use crate::model::params::build_model;

    #[test]
    fn schedule_endpoints_and_midpoint() {
        assert_eq!(lr_schedule(0, 120, 6e-4, 6e-6), 6e-4);
        let end = lr_schedule(120, 120, 6e-4, 6e-6);
        assert!((end - 6e-6).abs() < 1e-18);
        let mid = lr_schedule(60, 120, 6e-4, 6e-6);
        assert!((mid - (6e-4 + 6e-6) / 2.0).abs() < 1e-12, "cosine midpoint");
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut grads = vec![Tensor::<f64>::full(&[4], 3.0), Tensor::<f64>::full(&[2], 4.0)];
        // norm = sqrt(4*9 + 2*16) = sqrt(68)
        let pre = clip_global_norm(&mut grads, 1.0);
        assert!((pre - 68f64.sqrt()).abs() < 1e-12);
        let post: f64 = grads.iter().map(|g| g.sq_norm_f64()).sum::<f64>().sqrt();
        assert!((post - 1.0).abs() < 1e-9);
        // under the cap: untouched
        let mut grads = vec![Tensor::<f64>::full(&[2], 0.1)];
        clip_global_norm(&mut grads, 1.0);
        assert_eq!(grads[0].data(), &[0.1, 0.1]);
    }

    #[test]
    fn adamw_reduces_simple_quadratic() {
        // minimize sum(theta^2) on a real parameter set layout
        let config = ModelConfig {
            dims: 2,
            num_blocks: 2,
            block_channels: vec![2, 2],
            teacher_channels: 2,
            kernel_size: 3,
            mode: Mode::FlowSupervised,
            loss_weights: Default::default(),
        };
        let mut params = build_model::<f64>(&config, 1).unwrap();
        let mut opt = AdamW::new(&params, 0.0);
        let objective = |p: &ParameterSet<f64>| -> f64 {
            p.params.iter().map(|q| q.value.sq_norm_f64()).sum()
        };
        let before = objective(&params);
        for _ in 0..50 {
            let grads: Vec<Tensor<f64>> = params
                .params
                .iter()
                .map(|p| {
                    Tensor::from_vec(
                        p.value.shape(),
                        p.value.iter().map(|&x| 2.0 * x).collect(),
                    )
                })
                .collect();
            opt.step(&mut params, &grads, 1e-2);
        }
        assert!(objective(&params) < before * 0.5);
    }
}
