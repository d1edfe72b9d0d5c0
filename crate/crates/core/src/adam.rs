//! Adam optimizer with bias correction.

use alloc::vec::Vec;

use crate::math;
use crate::param::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamConfig {
    pub fn with_lr(lr: f32) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second moments plus the shared step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step_count: u64,
}

impl AdamState {
    /// Fresh state with zero moments matching the store's parameters.
    /// A zero learning rate is a valid no-op configuration.
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        assert!(
            config.lr >= 0.0 && config.lr.is_finite(),
            "learning rate must be finite and non-negative"
        );
        let first: Vec<Tensor> = store
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.shape()))
            .collect();
        let second = first.clone();
        Self {
            config,
            first_moment: first,
            second_moment: second,
            step_count: 0,
        }
    }

    /// One Adam update from the gradients currently held in the store.
    /// Gradients are left untouched; the caller zeroes them.
    pub fn step(&mut self, store: &mut ParamStore) {
        assert_eq!(
            self.first_moment.len(),
            store.len(),
            "optimizer state does not match parameter store"
        );
        self.step_count += 1;
        let c = self.config;
        // incremental beta powers avoid powf and stay exact across resume
        let bc1 = 1.0 - pow_incremental(c.beta1, self.step_count);
        let bc2 = 1.0 - pow_incremental(c.beta2, self.step_count);
        for i in 0..store.len() {
            let p = store.get_mut(crate::param::ParamId(i));
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            let g = p.grad.data();
            let w = p.value.data_mut();
            for j in 0..g.len() {
                let gj = g[j];
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                w[j] -= c.lr * m_hat / (math::sqrtf(v_hat) + c.eps);
            }
        }
    }
}

/// beta^n by binary exponentiation; deterministic and libm-free.
fn pow_incremental(beta: f32, n: u64) -> f32 {
    let mut acc = 1.0f32;
    let mut base = beta;
    let mut k = n;
    while k > 0 {
        if k & 1 == 1 {
            acc *= base;
        }
        base *= base;
        k >>= 1;
    }
    acc
}
