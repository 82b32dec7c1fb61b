use crate::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 4e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 2e-5 }
    }
}

/// Bias-corrected Adam with decoupled weight decay. Moments live in the
/// [`ParamStore`]; the optimizer only keeps the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0 }
    }

    /// Applies the accumulated gradients to every trainable parameter.
    /// Decay shrinks the value by `1 - lr * weight_decay` before the update.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps, weight_decay } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
        for id in ids {
            let p = store.get_mut(id);
            let grad = p.grad.clone();
            let (m, v) = (p.m.data_mut(), p.v.data_mut());
            let mut step = vec![0.0; m.len()];
            for (i, &g) in grad.data().iter().enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                step[i] = lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
            }
            for (x, s) in p.value.data_mut().iter_mut().zip(step) {
                *x = *x * (1.0 - lr * weight_decay) - s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::full(&[3], 0.5), true).unwrap();
        store.get_mut(id).grad = Tensor::full(&[3], 1.0);
        let cfg = AdamConfig { lr: 1e-3, weight_decay: 0.0, ..Default::default() };
        Adam::new(cfg).step(&mut store);
        // m_hat = v_hat = 1, so the update is lr / (1 + eps)
        for &x in store.value(id).data() {
            assert!((x - (0.5 - 1e-3 / (1.0 + 1e-8))).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_grad_without_decay_is_a_no_op() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(vec![1.0, -2.0]), true).unwrap();
        let mut adam = Adam::new(AdamConfig { weight_decay: 0.0, ..Default::default() });
        for _ in 0..5 {
            adam.step(&mut store);
        }
        assert_eq!(store.value(id).data(), &[1.0, -2.0]);
    }

    #[test]
    fn decay_is_decoupled_from_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(vec![2.0]), true).unwrap();
        let frozen = store.add("running", Tensor::vector(vec![2.0]), false).unwrap();
        Adam::new(AdamConfig { lr: 0.1, weight_decay: 0.5, ..Default::default() }).step(&mut store);
        assert!((store.value(id).data()[0] - 2.0 * 0.95).abs() < 1e-15);
        assert_eq!(store.value(frozen).data()[0], 2.0);
    }

    #[test]
    fn quadratic_decreases_monotonically() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::vector(vec![3.0, -1.5, 0.7]), true).unwrap();
        let mut adam = Adam::new(AdamConfig { lr: 1e-3, weight_decay: 0.0, ..Default::default() });
        let f = |s: &ParamStore| s.value(id).data().iter().map(|x| x * x).sum::<f64>();
        let mut prev = f(&store);
        for _ in 0..100 {
            store.get_mut(id).grad = store.value(id).map(|x| 2.0 * x);
            adam.step(&mut store);
            let now = f(&store);
            assert!(now < prev);
            prev = now;
        }
    }
}
