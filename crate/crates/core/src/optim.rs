use crate::error::{Error, Result};
use crate::real::Real;
use crate::weights::WeightsHandle;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: WeightsHandle<T>,
    v: WeightsHandle<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &WeightsHandle<T>) -> Self {
        Adam {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut WeightsHandle<T>, grads: &WeightsHandle<T>, lr: f64) -> Result<()> {
        if !params.same_layout(grads) || !params.same_layout(&self.m) {
            return Err(Error::domain("optimizer state does not match the parameters"));
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - num_traits::Float::powi(c.beta1, self.step as i32);
        let bc2 = 1.0 - num_traits::Float::powi(c.beta2, self.step as i32);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let step_size = T::lit(lr / bc1);
        let inv_sqrt_bc2 = T::lit(1.0 / num_traits::Float::sqrt(bc2));
        let eps = T::lit(c.eps);
        for i in 0..params.len() {
            let g = grads.at(i);
            let m = self.m.at_mut(i);
            m.iter_mut().zip(g).for_each(|(m, &g)| *m = b1 * *m + one_b1 * g);
            let v = self.v.at_mut(i);
            v.iter_mut().zip(g).for_each(|(v, &g)| *v = b2 * *v + one_b2 * g * g);
            let (m, v) = (self.m.at(i), self.v.at(i));
            for ((p, &m), &v) in params.at_mut(i).iter_mut().zip(m).zip(v) {
                *p -= step_size * m / (v.sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        Ok(())
    }
}

/// Piecewise-constant learning rate: `initial` before `switch_epoch`,
/// `final_lr` from it on (epochs counted from 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub initial: f64,
    pub final_lr: f64,
    pub switch_epoch: usize,
}

impl StepSchedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.switch_epoch {
            self.initial
        } else {
            self.final_lr
        }
    }
}
