use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParameterStore};
use super::{NumericsError, Result};

/// Moment estimates carried between Adam updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// Adam with optional global-norm gradient clipping.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    state: AdamState,
}

impl Adam {
    pub fn new(store: &ParameterStore) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(10.0),
            state: AdamState {
                step: 0,
                m: store.ids().map(|id| vec![0.0; store.value(id).len()]).collect(),
                v: store.ids().map(|id| vec![0.0; store.value(id).len()]).collect(),
            },
        }
    }

    pub fn without_clipping(mut self) -> Self {
        self.clip_norm = None;
        self
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    /// Restores moments saved alongside a checkpoint.
    pub fn restore(&mut self, state: AdamState) -> Result<()> {
        let compatible = state.m.len() == self.state.m.len()
            && state
                .m
                .iter()
                .zip(&self.state.m)
                .all(|(a, b)| a.len() == b.len())
            && state.v.len() == state.m.len();
        if !compatible {
            return Err(NumericsError::Checkpoint(
                "optimizer state does not match parameter layout".into(),
            ));
        }
        self.state = state;
        Ok(())
    }

    /// Applies one update. On non-finite gradients the store is left
    /// untouched and `NonFinite` is returned.
    pub fn apply_update(
        &mut self,
        store: &mut ParameterStore,
        lr: f64,
        grads: &Gradients,
    ) -> Result<()> {
        if !grads.is_finite() {
            return Err(NumericsError::NonFinite("gradients"));
        }
        let scale = match self.clip_norm {
            Some(max) => {
                let norm = grads.global_norm();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.state.step += 1;
        let t = self.state.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let g = grads.get(id).data();
            let m = &mut self.state.m[id.index()];
            let v = &mut self.state.v[id.index()];
            let w = store.value_mut(id).data_mut();
            for k in 0..w.len() {
                let gk = g[k] * scale;
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                w[k] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        store.bump_version();
        store.zero_grads();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn scalar_store(w: f64) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.add("w", Tensor::scalar(w));
        s
    }

    fn grads(s: &ParameterStore, g: f64) -> Gradients {
        let mut out = Gradients::zeros_like(s);
        out.slots[0].data_mut()[0] = g;
        out
    }

    /// Hand-written scalar Adam used as the reference trace.
    fn reference_adam(w0: f64, gs: &[f64], lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v, mut w) = (0.0, 0.0, w0);
        for (t, g) in gs.iter().enumerate() {
            let t = (t + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            w -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        w
    }

    #[test]
    fn zero_gradient_keeps_parameters_and_bumps_version() {
        let mut s = scalar_store(1.5);
        let mut adam = Adam::new(&s);
        let g = grads(&s, 0.0);
        adam.apply_update(&mut s, 1e-2, &g).unwrap();
        assert_eq!(s.flat_get(0), 1.5);
        assert_eq!(s.version(), 1);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut s = scalar_store(-0.25);
        let mut adam = Adam::new(&s);
        let g = grads(&s, 3.0);
        adam.apply_update(&mut s, 0.0, &g).unwrap();
        assert_eq!(s.flat_get(0), -0.25);
    }

    #[test]
    fn sequential_updates_follow_reference_and_differ_from_doubled() {
        let lr = 0.1;
        let mut s = scalar_store(1.0);
        let mut adam = Adam::new(&s).without_clipping();
        let g = grads(&s, 0.5);
        adam.apply_update(&mut s, lr, &g).unwrap();
        adam.apply_update(&mut s, lr, &g).unwrap();
        let two_steps = s.flat_get(0);
        assert!((two_steps - reference_adam(1.0, &[0.5, 0.5], lr)).abs() < 1e-12);

        let mut d = scalar_store(1.0);
        let mut adam_d = Adam::new(&d).without_clipping();
        let g2 = grads(&d, 1.0);
        adam_d.apply_update(&mut d, lr, &g2).unwrap();
        let doubled = d.flat_get(0);
        assert!((doubled - reference_adam(1.0, &[1.0], lr)).abs() < 1e-12);
        assert!((two_steps - doubled).abs() > 1e-3);
    }

    #[test]
    fn non_finite_gradient_aborts_without_change() {
        let mut s = scalar_store(2.0);
        let mut adam = Adam::new(&s);
        let g = grads(&s, f64::NAN);
        assert!(adam.apply_update(&mut s, 0.1, &g).is_err());
        assert_eq!(s.flat_get(0), 2.0);
        assert_eq!(s.version(), 0);
        assert_eq!(adam.state().step, 0);
    }

    #[test]
    fn clipping_bounds_the_effective_gradient() {
        let mut s = scalar_store(0.0);
        let mut adam = Adam::new(&s);
        adam.clip_norm = Some(1.0);
        let g = grads(&s, 100.0);
        adam.apply_update(&mut s, 0.1, &g).unwrap();
        // First Adam step moves by ~lr regardless, but moments see the clipped value.
        assert!((adam.state().m[0][0] - 0.1).abs() < 1e-12);
    }
}
