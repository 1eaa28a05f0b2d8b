//! Parameter updates: Adam (the training default) and plain SGD.

use super::{Gradients, Mlp, Scalar};

/// Adam optimizer state: one pair of moment estimates per parameter, kept
/// congruent to the model's parameter storage, plus the step counter and
/// hyperparameters.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    m: Gradients<T>,
    v: Gradients<T>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(model: &Mlp<T>) -> Self {
        AdamState {
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update with bias correction:
    /// `m ← β1·m + (1−β1)·g`, `v ← β2·v + (1−β2)·g²`,
    /// `θ ← θ − lr · (m/(1−β1^t)) / (√(v/(1−β2^t)) + ε)`.
    pub fn step(&mut self, model: &mut Mlp<T>, grads: &Gradients<T>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64_lossy(self.beta1);
        let b2 = T::from_f64_lossy(self.beta2);
        let one_m_b1 = T::from_f64_lossy(1.0 - self.beta1);
        let one_m_b2 = T::from_f64_lossy(1.0 - self.beta2);
        let corr1 = T::from_f64_lossy(1.0 / (1.0 - self.beta1.powi(t)));
        let corr2 = T::from_f64_lossy(1.0 / (1.0 - self.beta2.powi(t)));
        let eps = T::from_f64_lossy(self.epsilon);
        let lr = T::from_f64_lossy(lr);

        let update = |theta: &mut [T], g: &[T], m: &mut [T], v: &mut [T]| {
            debug_assert!(theta.len() == g.len() && g.len() == m.len() && m.len() == v.len());
            for k in 0..theta.len() {
                let gk = g[k];
                m[k] = b1 * m[k] + one_m_b1 * gk;
                v[k] = b2 * v[k] + one_m_b2 * gk * gk;
                let m_hat = m[k] * corr1;
                let v_hat = v[k] * corr2;
                theta[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        };

        for (i, j) in model.junctions_mut().iter_mut().enumerate() {
            update(
                j.weights_mut(),
                &grads.junction_weights[i],
                &mut self.m.junction_weights[i],
                &mut self.v.junction_weights[i],
            );
        }
        for (i, b) in model.biases_mut().iter_mut().enumerate() {
            update(b, &grads.biases[i], &mut self.m.biases[i], &mut self.v.biases[i]);
        }
    }
}

/// Plain gradient descent, `θ ← θ − lr·g`. Used by the update-rule unit
/// tests and available as a reference step.
pub fn sgd_step<T: Scalar>(model: &mut Mlp<T>, grads: &Gradients<T>, lr: f64) {
    let lr = T::from_f64_lossy(lr);
    for (i, j) in model.junctions_mut().iter_mut().enumerate() {
        for (w, &g) in j.weights_mut().iter_mut().zip(&grads.junction_weights[i]) {
            *w -= lr * g;
        }
    }
    for (i, b) in model.biases_mut().iter_mut().enumerate() {
        for (w, &g) in b.iter_mut().zip(&grads.biases[i]) {
            *w -= lr * g;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::init_model;
    use crate::topology::NeuronalConfig;

    fn one_param_model() -> Mlp<f64> {
        let cfg = NeuronalConfig::full(vec![1, 1]).unwrap();
        init_model(&cfg, 0).unwrap()
    }

    fn grads_with(model: &Mlp<f64>, w_grad: f64, b_grad: f64) -> Gradients<f64> {
        let mut g = Gradients::zeros_like(model);
        g.junction_weights[0][0] = w_grad;
        g.biases[0][0] = b_grad;
        g
    }

    #[test]
    fn sgd_matches_update_rule() {
        let mut m = one_param_model();
        m.param_set(0, 1.0);
        let g = grads_with(&m, 0.5, 0.0);
        sgd_step(&mut m, &g, 0.1);
        assert!((m.param_get(0) - 0.95).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_a_bounded_signed_step() {
        // After bias correction the first update is lr * g / (|g| + eps):
        // magnitude just under lr, direction -sign(g), for any g scale.
        for &g0 in &[1e-6, 0.5, 3.0e4] {
            let mut m = one_param_model();
            m.param_set(0, 2.0);
            let g = grads_with(&m, g0, 0.0);
            let mut adam = AdamState::new(&m);
            adam.step(&mut m, &g, 0.01);
            let delta = m.param_get(0) - 2.0;
            assert!(delta < 0.0);
            assert!(delta.abs() <= 0.01 * (1.0 + 1e-6), "{delta}");
            assert!(delta.abs() > 0.009, "{delta}");
        }
    }

    #[test]
    fn adam_bias_correction_against_reference() {
        // Two steps with constant gradient, checked against the closed
        // form computed independently.
        let mut m = one_param_model();
        m.param_set(0, 0.0);
        let g = grads_with(&m, 2.0, 0.0);
        let mut adam = AdamState::new(&m);
        let (b1, b2, eps, lr) = (0.9, 0.999, 1e-8, 0.1);

        let mut theta = 0.0f64;
        let (mut mm, mut vv) = (0.0f64, 0.0f64);
        for t in 1..=2i32 {
            mm = b1 * mm + (1.0 - b1) * 2.0;
            vv = b2 * vv + (1.0 - b2) * 4.0;
            let mh = mm / (1.0 - b1.powi(t));
            let vh = vv / (1.0 - b2.powi(t));
            theta -= lr * mh / (vh.sqrt() + eps);
        }

        adam.step(&mut m, &g, lr);
        adam.step(&mut m, &g, lr);
        assert!((m.param_get(0) - theta).abs() < 1e-12);
        assert_eq!(adam.step_count(), 2);
    }
}
