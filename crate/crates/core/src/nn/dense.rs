use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{fill_uniform, glorot_bound, sigmoid, Matrix, Params};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    ReLU,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::ReLU => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    /// ReLU uses 0 at the kink.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected layer `y = act(W x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Matrix,
    pub b: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Dense {
            w: Matrix::zeros(output, input),
            b: vec![0.0; output],
            activation,
        }
    }

    pub fn init(input: usize, output: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let mut d = Self::zeros(input, output, activation);
        fill_uniform(d.w.as_mut_slice(), glorot_bound(input, output), rng);
        d
    }

    pub fn input_size(&self) -> usize {
        self.w.cols()
    }

    pub fn output_size(&self) -> usize {
        self.w.rows()
    }

    pub fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.b.clone();
        self.w.matvec_add(x, &mut z);
        z
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.pre_activation(x);
        for v in &mut y {
            *v = self.activation.apply(*v);
        }
        y
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], y: &[f64], dy: &[f64], grads: &mut Dense) -> Vec<f64> {
        let dz: Vec<f64> = dy
            .iter()
            .zip(y)
            .map(|(&d, &yv)| d * self.activation.derivative_from_output(yv))
            .collect();
        grads.w.outer_add(&dz, x);
        for (gb, d) in grads.b.iter_mut().zip(&dz) {
            *gb += d;
        }
        let mut dx = vec![0.0; x.len()];
        self.w.matvec_t_add(&dz, &mut dx);
        dx
    }
}

impl Params for Dense {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(self.w.as_slice());
        f(&self.b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(self.w.as_mut_slice());
        f(&mut self.b);
    }
}

pub fn dense_forward(p: &Dense, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != p.input_size() || p.b.len() != p.output_size() {
        return Err(Error::Shape(format!(
            "dense layer {}->{} given input of width {}",
            p.input_size(),
            p.output_size(),
            x.len()
        )));
    }
    Ok(p.forward(x))
}
