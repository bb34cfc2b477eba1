use serde::{Deserialize, Serialize};

use super::tensor::{MomentState, ParamStore};
use crate::error::{Error, Result};

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamW {
    /// One update of every parameter in `store` from its accumulated gradient.
    ///
    /// The decay `θ ← θ·(1 − lr·wd)` is applied before, and independently of,
    /// the bias-corrected moment step.
    pub fn step(&self, store: &mut ParamStore, lr: f64) -> Result<()> {
        if let Some((name, _)) = store.iter().find(|(_, t)| t.grad.is_none()) {
            return Err(Error::data(format!("parameter `{name}` has no gradient")));
        }
        store.step += 1;
        let t = store.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let names: Vec<String> = store.names().cloned().collect();
        for name in names {
            let param = store.get_mut(&name).expect("name taken from the store");
            let grad = param.grad.take().expect("checked above");
            let numel = param.numel();
            let mut data = std::mem::take(&mut param.data);
            let state = store
                .moments
                .entry(name.clone())
                .or_insert_with(|| MomentState {
                    m: vec![0.0; numel],
                    v: vec![0.0; numel],
                });
            for i in 0..numel {
                let g = grad[i];
                state.m[i] = self.beta1 * state.m[i] + (1.0 - self.beta1) * g;
                state.v[i] = self.beta2 * state.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = state.m[i] / bc1;
                let v_hat = state.v[i] / bc2;
                data[i] *= 1.0 - lr * self.weight_decay;
                data[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            store.get_mut(&name).expect("name taken from the store").data = data;
        }
        Ok(())
    }
}

/// One-cycle learning-rate policy with cosine annealing in both phases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneCycleSchedule {
    pub max_lr: f64,
    pub total_steps: usize,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
}

impl OneCycleSchedule {
    pub fn new(max_lr: f64, total_steps: usize) -> Result<Self> {
        let s = OneCycleSchedule {
            max_lr,
            total_steps,
            pct_start: 0.3,
            div_factor: 25.0,
            final_div_factor: 1e4,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pct_start > 0.0 && self.pct_start < 1.0) {
            return Err(Error::config(format!(
                "pct_start must lie in (0,1), got {}",
                self.pct_start
            )));
        }
        if self.total_steps < 2 {
            return Err(Error::config(format!(
                "one-cycle schedule needs at least 2 steps, got {}",
                self.total_steps
            )));
        }
        if !(self.max_lr >= 0.0) || self.div_factor <= 0.0 || self.final_div_factor <= 0.0 {
            return Err(Error::config("learning rate and divisors must be positive"));
        }
        Ok(())
    }

    pub fn initial_lr(&self) -> f64 {
        self.max_lr / self.div_factor
    }

    pub fn final_lr(&self) -> f64 {
        self.max_lr / self.final_div_factor
    }

    /// Index of the step where the rate peaks at `max_lr`.
    pub fn peak_step(&self) -> usize {
        ((self.pct_start * self.total_steps as f64).floor() as usize).clamp(1, self.total_steps - 1)
    }

    pub fn lr(&self, step: usize) -> Result<f64> {
        if step >= self.total_steps {
            return Err(Error::config(format!(
                "step {step} outside schedule of {} steps",
                self.total_steps
            )));
        }
        let peak = self.peak_step();
        let last = self.total_steps - 1;
        if step <= peak {
            let pct = step as f64 / peak as f64;
            Ok(cosine(self.initial_lr(), self.max_lr, pct))
        } else {
            let pct = (step - peak) as f64 / (last - peak).max(1) as f64;
            Ok(cosine(self.max_lr, self.final_lr(), pct))
        }
    }
}

fn cosine(start: f64, end: f64, pct: f64) -> f64 {
    end + (start - end) / 2.0 * (1.0 + (std::f64::consts::PI * pct).cos())
}
