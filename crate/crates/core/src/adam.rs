//! Adam with bias correction.

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Real> Default for AdamConfig<T> {
    fn default() -> Self {
        Self { learning_rate: T::of(1e-3), beta1: T::of(0.9), beta2: T::of(0.999), epsilon: T::of(1e-8) }
    }
}

/// Moment estimates for a fixed set of parameter groups, with one shared step counter.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig<T>,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    step: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig<T>, group_sizes: &[usize]) -> Self {
        Self {
            config,
            first: group_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            second: group_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// Panics if the group layout differs from the one given to [`Adam::new`].
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) {
        assert_eq!(params.len(), self.first.len(), "parameter groups");
        assert_eq!(grads.len(), self.first.len(), "gradient groups");
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let c1 = T::one() - beta1.powi(self.step);
        let c2 = T::one() - beta2.powi(self.step);
        for (g, p) in params.iter_mut().enumerate() {
            let (m, v, grad) = (&mut self.first[g], &mut self.second[g], grads[g]);
            assert_eq!(p.len(), m.len(), "group {g} length");
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (T::one() - beta1) * grad[i];
                v[i] = beta2 * v[i] + (T::one() - beta2) * grad[i] * grad[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
}
