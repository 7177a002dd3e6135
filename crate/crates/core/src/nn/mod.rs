//! Hand-written dense, LSTM and bidirectional LSTM layers with exact
//! reverse-mode gradients, the MSE loss, Adam and a finite-difference
//! gradient checker. Everything is `f64`.

pub mod adam;
pub mod dense;
pub mod gradcheck;
pub mod loss;
pub mod lstm;
mod matrix;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use dense::{dense_forward, Activation, Dense};
pub use gradcheck::{max_relative_error, numeric_gradient, relative_error};
pub use loss::{mse_grad, mse_loss};
pub use lstm::{blstm_forward, lstm_forward, lstm_step, BlstmLayer, BlstmTrace, LstmCell, LstmTrace};
pub use matrix::{axpy, dot, Matrix};

use rand::Rng;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Uniform Glorot bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub(crate) fn fill_uniform(values: &mut [f64], bound: f64, rng: &mut impl Rng) {
    for v in values {
        *v = rng.random_range(-bound..=bound);
    }
}

/// A fixed, ordered collection of parameter tensors.
///
/// The visiting order defines the flat parameter layout used by Adam, the
/// gradient checker and checkpoints, so implementations must never reorder.
pub trait Params {
    fn visit(&self, f: &mut dyn FnMut(&[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |t| n += t.len());
        n
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |t| out.extend_from_slice(t));
        out
    }

    /// Overwrites every parameter from `flat`, which must have length
    /// `num_params()`.
    fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut offset = 0;
        self.visit_mut(&mut |t| {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        });
    }

    fn fill(&mut self, value: f64) {
        self.visit_mut(&mut |t| t.fill(value));
    }

    /// `self += other`, tensor by tensor. Shapes must agree.
    fn add_assign(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let flat = other.to_flat();
        let mut offset = 0;
        self.visit_mut(&mut |t| {
            let len = t.len();
            for (a, b) in t.iter_mut().zip(&flat[offset..offset + len]) {
                *a += b;
            }
            offset += len;
        });
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |t| ok &= t.iter().all(|v| v.is_finite()));
        ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable_and_bounded() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((sigmoid(2.0) - 0.880_797_077_977_882_3).abs() < 1e-15);
        assert!((sigmoid(-3.0) + sigmoid(3.0) - 1.0).abs() < 1e-15);
    }
}
