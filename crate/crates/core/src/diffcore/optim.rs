//! Adaptive-moment optimizer with a step-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::scalar::{all_finite, Scalar};

/// Step-decay schedule: `base · factor^floor(epoch / period)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrSchedule {
    pub base: f64,
    pub factor: f64,
    pub period: usize,
}

impl LrSchedule {
    pub fn rate(&self, epoch: usize) -> f64 {
        let k = if self.period == 0 { 0 } else { epoch / self.period };
        self.base * self.factor.powi(k as i32)
    }
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            base: 1e-4,
            factor: 0.99,
            period: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub step: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(n_params: usize, schedule: LrSchedule) -> Self {
        Adam {
            step: 0,
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
            schedule,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected update. A non-finite gradient leaves both the
    /// parameters and the optimizer state untouched.
    pub fn step(&mut self, params: &mut [T], grad: &[T], epoch: usize) -> Result<()> {
        check_dim("optimizer parameters", self.m.len(), params.len())?;
        check_dim("optimizer gradient", self.m.len(), grad.len())?;
        if !all_finite(grad) {
            return Err(Error::NonFinite("optimizer gradient".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let lr = T::lit(self.schedule.rate(epoch));
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let one = T::one();
        let c1 = one - b1.powi(t);
        let c2 = one - b2.powi(t);
        let eps = T::lit(self.eps);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + eps);
        }
        Ok(())
    }
}
