//! Minimal differentiable compute core: dense tensors, a reverse-mode tape,
//! named parameter storage, Adam and a finite-difference gradient checker.

mod graph;
mod optim;
mod params;
mod tensor;

pub use graph::{softmax_in_place, Backward, Graph, Var};
pub use optim::{Adam, AdamState};
pub use params::{Gradients, ParamId, ParameterStore};
pub use tensor::Tensor;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// Compares the analytic gradient returned by `f` with central differences.
///
/// `f` must be deterministic and return `(loss, gradients)` for the given
/// store. When `sample` is `Some((count, seed))` only `count` randomly chosen
/// flat parameters are perturbed. Returns the maximum of
/// `|a - n| / max(|a|, |n|, 1e-8)` over the checked coordinates.
pub fn grad_check<F>(
    store: &ParameterStore,
    eps: f64,
    sample_spec: Option<(usize, u64)>,
    f: F,
) -> Result<f64>
where
    F: Fn(&ParameterStore) -> Result<(f64, Gradients)>,
{
    let (_, analytic) = f(store)?;
    let analytic = analytic.flat();
    let total = store.flat_len();
    let indices: Vec<usize> = match sample_spec {
        Some((count, seed)) if count < total => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample(&mut rng, total, count).into_vec()
        }
        _ => (0..total).collect(),
    };
    let mut probe = store.clone();
    let mut worst = 0.0f64;
    for i in indices {
        let orig = probe.flat_get(i);
        probe.flat_set(i, orig + eps);
        let (plus, _) = f(&probe)?;
        probe.flat_set(i, orig - eps);
        let (minus, _) = f(&probe)?;
        probe.flat_set(i, orig);
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_check_square_at_three() {
        let mut s = ParameterStore::new();
        s.add("w", Tensor::scalar(3.0));
        // Analytic gradient 6, numeric 6 +- 1e-6.
        let err = grad_check(&s, 1e-5, None, |st| {
            let mut g = Graph::new(st);
            let w = g.param(st.id("w").unwrap());
            let sq = g.square(w);
            let back = g.backward(sq)?;
            Ok((g.scalar(sq), back.params))
        })
        .unwrap();
        assert!(err * 6.0 < 1e-6);
        let mut g = Graph::new(&s);
        let w = g.param(s.id("w").unwrap());
        let sq = g.square(w);
        let back = g.backward(sq).unwrap();
        assert_eq!(back.params.get(s.id("w").unwrap()).data()[0], 6.0);
    }

    #[test]
    fn grad_check_detects_wrong_gradient() {
        let mut s = ParameterStore::new();
        s.add("w", Tensor::scalar(3.0));
        let err = grad_check(&s, 1e-5, None, |st| {
            let w = st.flat_get(0);
            let mut grads = Gradients::zeros_like(st);
            grads.slots[0].data_mut()[0] = 5.0 * w; // wrong on purpose
            Ok((w * w, grads))
        })
        .unwrap();
        assert!(err > 0.1);
    }
}
