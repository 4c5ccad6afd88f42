//! Adam optimizer with bias correction, plus the warm-up learning-rate
//! schedule used by the training loop.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment estimates for one parameter tensor.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamSlot {
    pub m: Tensor,
    pub v: Tensor,
}

impl AdamSlot {
    pub fn zeros_like(param: &Tensor) -> Self {
        AdamSlot {
            m: Tensor::zeros(param.shape()),
            v: Tensor::zeros(param.shape()),
        }
    }
}

/// Optimizer state: one slot per parameter plus the shared step counter.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    pub slots: Vec<AdamSlot>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        AdamState {
            slots: params.iter().map(|p| AdamSlot::zeros_like(p)).collect(),
            t: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    /// One bias-corrected Adam update over parallel parameter/gradient lists.
    ///
    /// The step counter is shared: it increments once per call, not per
    /// tensor.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor], lr: f64) {
        assert_eq!(params.len(), self.slots.len());
        assert_eq!(grads.len(), self.slots.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((param, grad), slot) in params.iter_mut().zip(grads).zip(self.slots.iter_mut()) {
            assert_eq!(param.shape(), grad.shape(), "adam shape mismatch");
            let m = slot.m.data_mut();
            let v = slot.v.data_mut();
            let p = param.data_mut();
            let g = grad.data();
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Learning rate at `step` (1-based): linear warm-up to `base_lr` at
/// `step == warmup`, inverse-square-root decay afterwards.
pub fn lr_at_step(step: u64, base_lr: f64, warmup: u64) -> f64 {
    assert!(step >= 1, "steps are 1-based");
    let warmup = warmup.max(1);
    let s = step as f64;
    let w = warmup as f64;
    base_lr * (s / w).min((w / s).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_signed_lr() {
        let mut p = Tensor::vector(vec![1.0, -2.0, 0.5]);
        let g = Tensor::vector(vec![0.3, -0.7, 0.0]);
        let before = p.clone();
        let mut state = AdamState::new(&[&p]);
        let lr = 0.01;
        state.step(&mut [&mut p], &[&g], lr);
        for i in 0..3 {
            let delta = p.data()[i] - before.data()[i];
            let expected = -lr * g.data()[i] / (g.data()[i].abs() + ADAM_EPS);
            assert!(
                (delta - expected).abs() <= 1e-12,
                "component {i}: delta {delta} vs {expected}"
            );
        }
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = Tensor::vector(vec![1.0, 2.0]);
        let g = Tensor::zeros(&[2]);
        let before = p.clone();
        let mut state = AdamState::new(&[&p]);
        for _ in 0..10 {
            state.step(&mut [&mut p], &[&g], 0.1);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut p = Tensor::vector(vec![1.0, 2.0]);
        let g = Tensor::vector(vec![0.5, -0.25]);
        let before = p.clone();
        let mut state = AdamState::new(&[&p]);
        for _ in 0..5 {
            state.step(&mut [&mut p], &[&g], 0.0);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn two_steps_match_unrolled_recurrence() {
        let g0 = 0.4;
        let lr = 0.05;
        let mut p = Tensor::scalar(2.0);
        let g = Tensor::scalar(g0);
        let mut state = AdamState::new(&[&p]);
        state.step(&mut [&mut p], &[&g], lr);
        state.step(&mut [&mut p], &[&g], lr);

        // hand-unrolled recurrence with constant gradient
        let (b1, b2, eps) = (ADAM_BETA1, ADAM_BETA2, ADAM_EPS);
        let mut expect = 2.0;
        let mut m = 0.0;
        let mut v = 0.0;
        for t in 1..=2u32 {
            m = b1 * m + (1.0 - b1) * g0;
            v = b2 * v + (1.0 - b2) * g0 * g0;
            let m_hat = m / (1.0 - b1.powi(t as i32));
            let v_hat = v / (1.0 - b2.powi(t as i32));
            expect -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        assert!((p.item() - expect).abs() < 1e-15);
    }

    #[test]
    fn warmup_schedule_shape() {
        let base = 0.01;
        assert!((lr_at_step(8000, base, 8000) - base).abs() < 1e-15);
        assert!((lr_at_step(4000, base, 8000) - base / 2.0).abs() < 1e-15);
        // sqrt(8000/32000) = 0.5
        assert!((lr_at_step(32000, base, 8000) - base / 2.0).abs() < 1e-15);
        // monotone increasing through warm-up
        assert!(lr_at_step(1, base, 8000) < lr_at_step(2, base, 8000));
        // decaying afterwards
        assert!(lr_at_step(9000, base, 8000) < base);
    }
}
