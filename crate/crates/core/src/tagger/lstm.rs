//! Single-direction LSTM with hand-written backpropagation through time.
//!
//! Gate pre-activations are stacked `[input, forget, candidate, output]`,
//! each `hidden` rows tall.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{sigmoid, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub w_input: Matrix,
    pub w_hidden: Matrix,
    pub bias: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_input: Matrix::zeros(4 * hidden, input),
            w_hidden: Matrix::zeros(4 * hidden, hidden),
            bias: vec![0.0; 4 * hidden],
        }
    }

    /// Uniform Glorot initialization; forget-gate bias starts at 1.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input, hidden);
        let bound = (6.0 / (input + hidden) as f64).sqrt();
        for w in p.w_input.data.iter_mut().chain(p.w_hidden.data.iter_mut()) {
            *w = rng.gen_range(-bound..bound);
        }
        p.bias[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
        p
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.cols
    }

    pub fn input(&self) -> usize {
        self.w_input.cols
    }
}

/// Activations kept from the forward pass.
#[derive(Debug, Clone)]
pub struct LstmCache {
    /// Post-activation gates per step, `4h` each.
    gates: Vec<Vec<f64>>,
    cells: Vec<Vec<f64>>,
    cell_tanh: Vec<Vec<f64>>,
    pub hidden: Vec<Vec<f64>>,
}

pub fn forward(p: &LstmParams, inputs: &[&[f64]]) -> LstmCache {
    let h = p.hidden();
    let mut cache = LstmCache {
        gates: Vec::with_capacity(inputs.len()),
        cells: Vec::with_capacity(inputs.len()),
        cell_tanh: Vec::with_capacity(inputs.len()),
        hidden: Vec::with_capacity(inputs.len()),
    };
    let zero = vec![0.0; h];
    for (t, x) in inputs.iter().enumerate() {
        let (h_prev, c_prev) = if t == 0 { (&zero, &zero) } else { (&cache.hidden[t - 1], &cache.cells[t - 1]) };
        let mut z = p.bias.clone();
        p.w_input.matvec_acc(x, &mut z);
        p.w_hidden.matvec_acc(h_prev, &mut z);
        for (k, v) in z.iter_mut().enumerate() {
            *v = if (2 * h..3 * h).contains(&k) { v.tanh() } else { sigmoid(*v) };
        }
        let mut c = vec![0.0; h];
        let mut c_tanh = vec![0.0; h];
        let mut h_out = vec![0.0; h];
        for j in 0..h {
            let (i, f, g, o) = (z[j], z[h + j], z[2 * h + j], z[3 * h + j]);
            c[j] = f * c_prev[j] + i * g;
            c_tanh[j] = c[j].tanh();
            h_out[j] = o * c_tanh[j];
        }
        cache.gates.push(z);
        cache.cells.push(c);
        cache.cell_tanh.push(c_tanh);
        cache.hidden.push(h_out);
    }
    cache
}

/// Backpropagates `d_hidden` (one `h`-vector per step) through the sequence.
/// Parameter gradients accumulate into `grad`; returns the input gradients.
pub fn backward(
    p: &LstmParams,
    inputs: &[&[f64]],
    cache: &LstmCache,
    d_hidden: &[Vec<f64>],
    grad: &mut LstmParams,
) -> Vec<Vec<f64>> {
    let h = p.hidden();
    let len = inputs.len();
    let mut d_inputs = vec![vec![0.0; p.input()]; len];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let zero = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    for t in (0..len).rev() {
        let g = &cache.gates[t];
        let c_prev = if t == 0 { &zero } else { &cache.cells[t - 1] };
        let h_prev = if t == 0 { &zero } else { &cache.hidden[t - 1] };
        for j in 0..h {
            let (i, f, cand, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let ct = cache.cell_tanh[t][j];
            let dh = d_hidden[t][j] + dh_next[j];
            let dc = dh * o * (1.0 - ct * ct) + dc_next[j];
            dz[j] = dc * cand * i * (1.0 - i);
            dz[h + j] = dc * c_prev[j] * f * (1.0 - f);
            dz[2 * h + j] = dc * i * (1.0 - cand * cand);
            dz[3 * h + j] = dh * ct * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        grad.w_input.outer_acc(&dz, inputs[t]);
        grad.w_hidden.outer_acc(&dz, h_prev);
        for (b, d) in grad.bias.iter_mut().zip(&dz) {
            *b += d;
        }
        p.w_input.matvec_t_acc(&dz, &mut d_inputs[t]);
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        p.w_hidden.matvec_t_acc(&dz, &mut dh_next);
    }
    d_inputs
}
