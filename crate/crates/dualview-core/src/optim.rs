//! AdamW with decoupled weight decay, warmup+cosine schedule, and global
//! gradient-norm clipping.

// trait-provided float intrinsics for no_std builds; unused whenever std
// is in the crate graph and its inherent methods shadow these
#[allow(unused_imports)]
use num_traits::Float as _;
use alloc::vec::Vec;

use crate::matrix::{Element, Matrix};
use crate::params::ParameterRegistry;

#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 2e-5,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state: step counter plus first/second moment per parameter.
#[derive(Debug, Clone)]
pub struct AdamWState<F: Element> {
    pub config: AdamWConfig,
    pub step: u64,
    first_moment: Vec<Matrix<F>>,
    second_moment: Vec<Matrix<F>>,
}

impl<F: Element> AdamWState<F> {
    pub fn new(config: AdamWConfig, registry: &ParameterRegistry<F>) -> Self {
        let first_moment = registry
            .iter()
            .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
            .collect();
        let second_moment = registry
            .iter()
            .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
            .collect();
        AdamWState {
            config,
            step: 0,
            first_moment,
            second_moment,
        }
    }

    /// One update over all parameters from their populated gradients.
    /// `lr` overrides the configured base rate (scheduler output).
    pub fn step(&mut self, registry: &mut ParameterRegistry<F>, lr: f64) {
        assert_eq!(
            registry.len(),
            self.first_moment.len(),
            "optimizer state does not match registry"
        );
        self.step += 1;
        let t = self.step as i32;
        let b1 = F::from_f64(self.config.beta1);
        let b2 = F::from_f64(self.config.beta2);
        let eps = F::from_f64(self.config.eps);
        let lr_f = F::from_f64(lr);
        let wd = F::from_f64(self.config.weight_decay);
        let bc1 = F::one() - b1.powi(t);
        let bc2 = F::one() - b2.powi(t);
        let one = F::one();

        for slot in 0..registry.len() {
            let decay = one - lr_f * wd;
            let grad = registry.grad(slot).clone();
            let m = &mut self.first_moment[slot];
            let v = &mut self.second_moment[slot];
            let value = registry.value_mut(slot);
            for i in 0..value.len() {
                let g = grad.data()[i];
                let mi = b1 * m.data()[i] + (one - b1) * g;
                let vi = b2 * v.data()[i] + (one - b2) * g * g;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                // decoupled decay: shrink the weight, then apply the moment step
                let theta = value.data()[i] * decay;
                value.data_mut()[i] = theta - lr_f * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScheduleError {
    ZeroTotalSteps,
}

impl core::fmt::Display for ScheduleError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "lr schedule requires total_steps > 0")
    }
}

/// Linear warmup over `warmup_fraction` of the run, then cosine annealing
/// to zero at `total_steps`.
pub fn lr_schedule(
    step: u64,
    total_steps: u64,
    base_lr: f64,
    warmup_fraction: f64,
) -> Result<f64, ScheduleError> {
    if total_steps == 0 {
        return Err(ScheduleError::ZeroTotalSteps);
    }
    let warmup = (warmup_fraction * total_steps as f64).round() as u64;
    let step = step.min(total_steps);
    if warmup > 0 && step < warmup {
        return Ok(base_lr * step as f64 / warmup as f64);
    }
    let span = (total_steps - warmup).max(1) as f64;
    let progress = (step - warmup) as f64 / span;
    Ok(base_lr * 0.5 * (1.0 + (core::f64::consts::PI * progress).cos()))
}

/// Scales all gradients so the global L2 norm does not exceed `max_norm`.
/// Returns the factor applied (1.0 when already within the bound).
pub fn clip_gradients<F: Element>(registry: &mut ParameterRegistry<F>, max_norm: f64) -> f64 {
    let norm = registry.grad_norm().to_f64();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        registry.scale_grads(F::from_f64(scale));
        scale
    } else {
        1.0
    }
}
