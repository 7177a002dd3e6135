//! LSTM cell, unrolled recurrence and the bidirectional layer, with BPTT.
//!
//! Gate parameters are stored stacked in the order forget, input, output,
//! candidate: `w` is `4h × in`, `u` is `4h × h` and `b` has `4h` entries.
//!
//! ```text
//! f = σ(W_f x + U_f h + b_f)    i = σ(W_i x + U_i h + b_i)
//! o = σ(W_o x + U_o h + b_o)    g = tanh(W_g x + U_g h + b_g)
//! c' = f ⊙ c + i ⊙ g            h' = o ⊙ tanh(c')
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{fill_uniform, glorot_bound, sigmoid, Matrix, Params};
use crate::error::{Error, Result};

/// Initial forget-gate bias.
pub const FORGET_BIAS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Forget = 0,
    Input = 1,
    Output = 2,
    Candidate = 3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmCell {
    pub w: Matrix,
    pub u: Matrix,
    pub b: Vec<f64>,
}

impl LstmCell {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmCell {
            w: Matrix::zeros(4 * hidden, input),
            u: Matrix::zeros(4 * hidden, hidden),
            b: vec![0.0; 4 * hidden],
        }
    }

    /// Glorot-uniform `w` and `u` (bounds from the stacked shapes), forget
    /// bias `FORGET_BIAS`, other biases 0.
    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut cell = Self::zeros(input, hidden);
        let (wb, ub) = (glorot_bound(input, 4 * hidden), glorot_bound(hidden, 4 * hidden));
        for gate in 0..4 {
            fill_uniform(&mut cell.w.as_mut_slice()[gate * hidden * input..(gate + 1) * hidden * input], wb, rng);
            fill_uniform(&mut cell.u.as_mut_slice()[gate * hidden * hidden..(gate + 1) * hidden * hidden], ub, rng);
        }
        cell.b[..hidden].fill(FORGET_BIAS);
        cell
    }

    pub fn input_size(&self) -> usize {
        self.w.cols()
    }

    pub fn hidden_size(&self) -> usize {
        self.u.cols()
    }

    /// Rows of `w` belonging to one gate.
    pub fn gate_w(&self, gate: Gate) -> &[f64] {
        let (h, i) = (self.hidden_size(), self.input_size());
        let g = gate as usize;
        &self.w.as_slice()[g * h * i..(g + 1) * h * i]
    }

    pub fn gate_u(&self, gate: Gate) -> &[f64] {
        let h = self.hidden_size();
        let g = gate as usize;
        &self.u.as_slice()[g * h * h..(g + 1) * h * h]
    }

    pub fn gate_b(&self, gate: Gate) -> &[f64] {
        let h = self.hidden_size();
        let g = gate as usize;
        &self.b[g * h..(g + 1) * h]
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.input_size() {
            return Err(Error::Shape(format!(
                "LSTM expects input width {}, got {width}",
                self.input_size()
            )));
        }
        Ok(())
    }

    /// One step into caller-provided buffers. `gates` receives the activated
    /// gate values `[f, i, o, g]`.
    #[inline]
    fn step_into(
        &self,
        x: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
        gates: &mut [f64],
        c: &mut [f64],
        tanh_c: &mut [f64],
        h: &mut [f64],
    ) {
        let n = self.hidden_size();
        gates.copy_from_slice(&self.b);
        self.w.matvec_add(x, gates);
        self.u.matvec_add(h_prev, gates);
        for j in 0..n {
            let f = sigmoid(gates[j]);
            let i = sigmoid(gates[n + j]);
            let o = sigmoid(gates[2 * n + j]);
            let g = gates[3 * n + j].tanh();
            gates[j] = f;
            gates[n + j] = i;
            gates[2 * n + j] = o;
            gates[3 * n + j] = g;
            c[j] = f * c_prev[j] + i * g;
            tanh_c[j] = c[j].tanh();
            h[j] = o * tanh_c[j];
        }
    }

    /// Runs the recurrence from a zero state, caching what BPTT needs.
    pub fn forward_trace(&self, inputs: &Matrix) -> LstmTrace {
        let (t_len, n) = (inputs.rows(), self.hidden_size());
        let mut trace = LstmTrace {
            inputs: inputs.clone(),
            gates: Matrix::zeros(t_len, 4 * n),
            c: Matrix::zeros(t_len, n),
            tanh_c: Matrix::zeros(t_len, n),
            h: Matrix::zeros(t_len, n),
        };
        let zeros = vec![0.0; n];
        let mut h_prev = zeros.clone();
        let mut c_prev = zeros;
        let mut gates = vec![0.0; 4 * n];
        let (mut c, mut tc, mut h) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for t in 0..t_len {
            self.step_into(inputs.row(t), &h_prev, &c_prev, &mut gates, &mut c, &mut tc, &mut h);
            trace.gates.row_mut(t).copy_from_slice(&gates);
            trace.c.row_mut(t).copy_from_slice(&c);
            trace.tanh_c.row_mut(t).copy_from_slice(&tc);
            trace.h.row_mut(t).copy_from_slice(&h);
            std::mem::swap(&mut h_prev, &mut h);
            std::mem::swap(&mut c_prev, &mut c);
        }
        debug_assert!(trace.h.is_finite() && trace.c.is_finite());
        trace
    }

    /// Backpropagation through time. `dh` holds the loss gradient with respect
    /// to every emitted hidden state; parameter gradients are accumulated
    /// into `grads` and the gradient with respect to the inputs is returned.
    pub fn backward(&self, trace: &LstmTrace, dh: &Matrix, grads: &mut LstmCell) -> Matrix {
        let (t_len, n) = (trace.h.rows(), self.hidden_size());
        let mut dx = Matrix::zeros(t_len, self.input_size());
        let mut dh_next = vec![0.0; n];
        let mut dc_next = vec![0.0; n];
        let mut dz = vec![0.0; 4 * n];
        let zeros = vec![0.0; n];
        for t in (0..t_len).rev() {
            let gates = trace.gates.row(t);
            let tanh_c = trace.tanh_c.row(t);
            let c_prev = if t > 0 { trace.c.row(t - 1) } else { &zeros[..] };
            let h_prev = if t > 0 { trace.h.row(t - 1) } else { &zeros[..] };
            let dh_t = dh.row(t);
            for j in 0..n {
                let (f, i, o, g) = (gates[j], gates[n + j], gates[2 * n + j], gates[3 * n + j]);
                let dh_total = dh_t[j] + dh_next[j];
                let d_o = dh_total * tanh_c[j];
                let dc = dc_next[j] + dh_total * o * (1.0 - tanh_c[j] * tanh_c[j]);
                let d_f = dc * c_prev[j];
                let d_i = dc * g;
                let d_g = dc * i;
                dc_next[j] = dc * f;
                dz[j] = d_f * f * (1.0 - f);
                dz[n + j] = d_i * i * (1.0 - i);
                dz[2 * n + j] = d_o * o * (1.0 - o);
                dz[3 * n + j] = d_g * (1.0 - g * g);
            }
            grads.w.outer_add(&dz, trace.inputs.row(t));
            grads.u.outer_add(&dz, h_prev);
            for (gb, d) in grads.b.iter_mut().zip(&dz) {
                *gb += d;
            }
            self.w.matvec_t_add(&dz, dx.row_mut(t));
            dh_next.fill(0.0);
            self.u.matvec_t_add(&dz, &mut dh_next);
        }
        dx
    }
}

impl Params for LstmCell {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(self.w.as_slice());
        f(self.u.as_slice());
        f(&self.b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(self.w.as_mut_slice());
        f(self.u.as_mut_slice());
        f(&mut self.b);
    }
}

/// Activations cached by [`LstmCell::forward_trace`].
#[derive(Debug, Clone)]
pub struct LstmTrace {
    pub inputs: Matrix,
    pub gates: Matrix,
    pub c: Matrix,
    pub tanh_c: Matrix,
    pub h: Matrix,
}

pub fn lstm_step(cell: &LstmCell, x: &[f64], h: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = cell.hidden_size();
    cell.check_input(x.len())?;
    if h.len() != n || c.len() != n {
        return Err(Error::Shape(format!(
            "LSTM state must have width {n}, got h={} c={}",
            h.len(),
            c.len()
        )));
    }
    let mut gates = vec![0.0; 4 * n];
    let (mut c2, mut tc, mut h2) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    cell.step_into(x, h, c, &mut gates, &mut c2, &mut tc, &mut h2);
    Ok((h2, c2))
}

/// Hidden states for every step of `inputs` (one row per step), starting
/// from `h = c = 0`.
pub fn lstm_forward(cell: &LstmCell, inputs: &Matrix) -> Result<Matrix> {
    if inputs.rows() == 0 {
        return Err(Error::Shape("empty input sequence".into()));
    }
    cell.check_input(inputs.cols())?;
    Ok(cell.forward_trace(inputs).h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlstmLayer {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

impl BlstmLayer {
    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let forward = LstmCell::init(input, hidden, rng);
        let backward = LstmCell::init(input, hidden, rng);
        BlstmLayer { forward, backward }
    }

    pub fn hidden_size(&self) -> usize {
        self.forward.hidden_size()
    }

    pub fn forward_trace(&self, inputs: &Matrix) -> BlstmTrace {
        BlstmTrace {
            forward: self.forward.forward_trace(inputs),
            backward: self.backward.forward_trace(&reverse_rows(inputs)),
        }
    }

    /// Output at step `t` is `[h_fwd(t), h_bwd(t)]`, where the backward
    /// half has consumed steps `T-1 .. t`.
    pub fn output(trace: &BlstmTrace) -> Matrix {
        let (t_len, n) = (trace.forward.h.rows(), trace.forward.h.cols());
        let mut out = Matrix::zeros(t_len, 2 * n);
        for t in 0..t_len {
            let row = out.row_mut(t);
            row[..n].copy_from_slice(trace.forward.h.row(t));
            row[n..].copy_from_slice(trace.backward.h.row(t_len - 1 - t));
        }
        out
    }

    pub fn backward(&self, trace: &BlstmTrace, dout: &Matrix, grads: &mut BlstmLayer) -> Matrix {
        let (t_len, n) = (dout.rows(), self.hidden_size());
        let mut dh_f = Matrix::zeros(t_len, n);
        let mut dh_b = Matrix::zeros(t_len, n);
        for t in 0..t_len {
            let row = dout.row(t);
            dh_f.row_mut(t).copy_from_slice(&row[..n]);
            dh_b.row_mut(t_len - 1 - t).copy_from_slice(&row[n..]);
        }
        let mut dx = self.forward.backward(&trace.forward, &dh_f, &mut grads.forward);
        let dx_rev = self.backward.backward(&trace.backward, &dh_b, &mut grads.backward);
        for t in 0..t_len {
            for (a, b) in dx.row_mut(t).iter_mut().zip(dx_rev.row(t_len - 1 - t)) {
                *a += b;
            }
        }
        dx
    }
}

impl Params for BlstmLayer {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.forward.visit(f);
        self.backward.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.forward.visit_mut(f);
        self.backward.visit_mut(f);
    }
}

#[derive(Debug, Clone)]
pub struct BlstmTrace {
    pub forward: LstmTrace,
    /// Trace of the backward cell over the time-reversed input.
    pub backward: LstmTrace,
}

fn reverse_rows(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for t in 0..m.rows() {
        out.row_mut(t).copy_from_slice(m.row(m.rows() - 1 - t));
    }
    out
}

pub fn blstm_forward(layer: &BlstmLayer, inputs: &Matrix) -> Result<Matrix> {
    if inputs.rows() == 0 {
        return Err(Error::Shape("empty input sequence".into()));
    }
    layer.forward.check_input(inputs.cols())?;
    layer.backward.check_input(inputs.cols())?;
    if layer.forward.hidden_size() != layer.backward.hidden_size() {
        return Err(Error::Shape("BLSTM directions differ in hidden size".into()));
    }
    Ok(BlstmLayer::output(&layer.forward_trace(inputs)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Domain};

    fn ones_cell() -> LstmCell {
        let mut c = LstmCell::zeros(1, 1);
        c.fill(1.0);
        c
    }

    /// Scalar reference recurrence written out gate by gate.
    fn scalar_oracle(xs: &[f64], w: [f64; 4], u: [f64; 4], b: [f64; 4]) -> Vec<(f64, f64)> {
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let (mut h, mut c) = (0.0, 0.0);
        xs.iter()
            .map(|&x| {
                let f = s(w[0] * x + u[0] * h + b[0]);
                let i = s(w[1] * x + u[1] * h + b[1]);
                let o = s(w[2] * x + u[2] * h + b[2]);
                let g = (w[3] * x + u[3] * h + b[3]).tanh();
                c = f * c + i * g;
                h = o * c.tanh();
                (h, c)
            })
            .collect()
    }

    #[test]
    fn zero_fixed_point() {
        let cell = LstmCell::zeros(2, 3);
        let (h, c) = lstm_step(&cell, &[0.0, 0.0], &[0.0; 3], &[0.0; 3]).unwrap();
        assert_eq!(h, vec![0.0; 3]);
        assert_eq!(c, vec![0.0; 3]);
    }

    #[test]
    fn scalar_cell_values() {
        let (h, c) = lstm_step(&ones_cell(), &[1.0], &[0.0], &[0.0]).unwrap();
        // f = i = o = σ(2), g = tanh(2); values from a standalone evaluation
        assert!((c[0] - 0.849_112_675_620_868_5).abs() < 1e-12, "{}", c[0]);
        assert!((h[0] - 0.608_283_418_183_515_7).abs() < 1e-12, "{}", h[0]);
    }

    #[test]
    fn forget_saturation() {
        let mut cell = ones_cell();
        cell.b[Gate::Forget as usize] = 100.0;
        let (_, c) = lstm_step(&cell, &[1.0], &[0.0], &[10.0]).unwrap();
        let i = sigmoid(2.0);
        let g = 2.0f64.tanh();
        assert!((c[0] - (10.0 + i * g)).abs() < 1e-9);
    }

    #[test]
    fn dimension_errors() {
        let cell = LstmCell::zeros(2, 3);
        assert!(lstm_step(&cell, &[0.0], &[0.0; 3], &[0.0; 3]).is_err());
        assert!(lstm_step(&cell, &[0.0; 2], &[0.0; 2], &[0.0; 3]).is_err());
        assert!(lstm_forward(&cell, &Matrix::zeros(4, 3)).is_err());
        assert!(lstm_forward(&cell, &Matrix::zeros(0, 2)).is_err());
    }

    #[test]
    fn sequence_matches_scalar_oracle() {
        let mut cell = LstmCell::zeros(1, 1);
        let (w, u, b) = ([0.5, -0.3, 0.8, 1.1], [0.2, 0.7, -0.4, 0.9], [1.0, 0.1, -0.2, 0.05]);
        cell.w.as_mut_slice().copy_from_slice(&w);
        cell.u.as_mut_slice().copy_from_slice(&u);
        cell.b.copy_from_slice(&b);
        let xs = [0.3, -1.2, 2.0];
        let out = lstm_forward(&cell, &Matrix::from_vec(3, 1, xs.to_vec()).unwrap()).unwrap();
        for (t, (h, _)) in scalar_oracle(&xs, w, u, b).into_iter().enumerate() {
            assert!((out.get(t, 0) - h).abs() < 1e-14);
        }
        let one = lstm_forward(&cell, &Matrix::from_vec(1, 1, vec![0.3]).unwrap()).unwrap();
        let (h, _) = lstm_step(&cell, &[0.3], &[0.0], &[0.0]).unwrap();
        assert_eq!(one.row(0), &h[..]);
    }

    #[test]
    fn ones_cell_unrolled() {
        let xs = [1.0, 1.0, 1.0];
        let out = lstm_forward(&ones_cell(), &Matrix::from_vec(3, 1, xs.to_vec()).unwrap()).unwrap();
        for (t, (h, _)) in scalar_oracle(&xs, [1.0; 4], [1.0; 4], [1.0; 4]).into_iter().enumerate() {
            assert!((out.get(t, 0) - h).abs() < 1e-14);
        }
    }

    fn random_layer(seed: u64, input: usize, hidden: usize) -> BlstmLayer {
        let mut r = rng::stream(seed, Domain::Init, 99);
        let mut layer = BlstmLayer::init(input, hidden, &mut r);
        layer.visit_mut(&mut |t| fill_uniform(t, 0.8, &mut r));
        layer
    }

    #[test]
    fn palindrome_symmetry() {
        let mut layer = random_layer(1, 2, 3);
        layer.backward = layer.forward.clone();
        let x = Matrix::from_rows(&[vec![0.1, 0.5], vec![-0.7, 0.2], vec![0.1, 0.5]]).unwrap();
        let out = blstm_forward(&layer, &x).unwrap();
        for t in 0..3 {
            let row = out.row(t);
            let mirror = out.row(2 - t);
            assert_eq!(&row[..3], &mirror[3..]);
            assert_eq!(&row[3..], &mirror[..3]);
        }
    }

    #[test]
    fn blstm_single_step() {
        let layer = random_layer(2, 2, 3);
        let x = [0.4, -0.9];
        let out = blstm_forward(&layer, &Matrix::from_vec(1, 2, x.to_vec()).unwrap()).unwrap();
        let (hf, _) = lstm_step(&layer.forward, &x, &[0.0; 3], &[0.0; 3]).unwrap();
        let (hb, _) = lstm_step(&layer.backward, &x, &[0.0; 3], &[0.0; 3]).unwrap();
        assert_eq!(&out.row(0)[..3], &hf[..]);
        assert_eq!(&out.row(0)[3..], &hb[..]);
    }

    #[test]
    fn blstm_matches_two_pass_oracle() {
        let layer = random_layer(3, 2, 3);
        let xs: Vec<Vec<f64>> = vec![vec![0.3, 0.1], vec![-0.5, 0.9], vec![1.2, -0.4], vec![0.0, 0.7]];
        let out = blstm_forward(&layer, &Matrix::from_rows(&xs).unwrap()).unwrap();
        // two independent passes with lstm_step
        let mut fwd = Vec::new();
        let (mut h, mut c) = (vec![0.0; 3], vec![0.0; 3]);
        for x in &xs {
            (h, c) = lstm_step(&layer.forward, x, &h, &c).unwrap();
            fwd.push(h.clone());
        }
        let mut bwd = vec![Vec::new(); 4];
        let (mut h, mut c) = (vec![0.0; 3], vec![0.0; 3]);
        for t in (0..4).rev() {
            (h, c) = lstm_step(&layer.backward, &xs[t], &h, &c).unwrap();
            bwd[t] = h.clone();
        }
        for t in 0..4 {
            let expected: Vec<f64> = fwd[t].iter().chain(&bwd[t]).copied().collect();
            for (a, b) in out.row(t).iter().zip(&expected) {
                assert!((a - b).abs() < 1e-14);
            }
        }
        assert_eq!(out.shape(), (4, 6));
    }

    #[test]
    fn init_layout() {
        let mut r = rng::stream(0, Domain::Init, 0);
        let cell = LstmCell::init(3, 4, &mut r);
        assert_eq!(cell.gate_b(Gate::Forget), &[FORGET_BIAS; 4]);
        assert_eq!(cell.gate_b(Gate::Candidate), &[0.0; 4]);
        let bound = glorot_bound(3, 16);
        assert!(cell.gate_w(Gate::Output).iter().all(|v| v.abs() <= bound));
        assert!(cell.gate_u(Gate::Input).iter().all(|v| v.abs() <= glorot_bound(4, 16)));
        assert_eq!(cell.num_params(), 16 * 3 + 16 * 4 + 16);
    }
}
