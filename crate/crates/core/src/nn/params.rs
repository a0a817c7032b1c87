use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CellKind, ModelConfig};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// LSTM gate blocks, in the row order they occupy inside [`LstmCellParams::weights`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Forget = 0,
    Input = 1,
    Candidate = 2,
    Output = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Forget, Gate::Input, Gate::Candidate, Gate::Output];
}

/// The four gate matrices `w_f, w_i, w_c, w_o` (each `hidden x (hidden + input)`)
/// stacked row-wise into one `4*hidden x (hidden + input)` matrix, and the four
/// biases stacked the same way. Columns `0..hidden` multiply `h_{t-1}`, the rest `x_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCellParams {
    pub hidden: usize,
    pub input: usize,
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LstmCellParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        Self {
            hidden,
            input,
            weights: Matrix::zeros(4 * hidden, hidden + input),
            bias: vec![0.0; 4 * hidden],
        }
    }

    /// Row-major `hidden x (hidden + input)` block of one gate.
    pub fn gate_weights(&self, gate: Gate) -> &[f64] {
        let w = self.hidden * (self.hidden + self.input);
        &self.weights.as_slice()[gate as usize * w..(gate as usize + 1) * w]
    }

    pub fn gate_weights_mut(&mut self, gate: Gate) -> &mut [f64] {
        let w = self.hidden * (self.hidden + self.input);
        &mut self.weights.as_mut_slice()[gate as usize * w..(gate as usize + 1) * w]
    }

    pub fn gate_bias(&self, gate: Gate) -> &[f64] {
        &self.bias[gate as usize * self.hidden..(gate as usize + 1) * self.hidden]
    }

    pub fn gate_bias_mut(&mut self, gate: Gate) -> &mut [f64] {
        &mut self.bias[gate as usize * self.hidden..(gate as usize + 1) * self.hidden]
    }
}

/// `h_t = tanh(weights * [h_{t-1}, x_t] + bias)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnCellParams {
    pub hidden: usize,
    pub input: usize,
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl RnnCellParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        Self {
            hidden,
            input,
            weights: Matrix::zeros(hidden, hidden + input),
            bias: vec![0.0; hidden],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CellParams {
    Lstm(LstmCellParams),
    Rnn(RnnCellParams),
}

impl CellParams {
    pub fn kind(&self) -> CellKind {
        match self {
            CellParams::Lstm(_) => CellKind::Lstm,
            CellParams::Rnn(_) => CellKind::Rnn,
        }
    }

    pub fn weights(&self) -> &Matrix {
        match self {
            CellParams::Lstm(p) => &p.weights,
            CellParams::Rnn(p) => &p.weights,
        }
    }

    pub fn bias(&self) -> &[f64] {
        match self {
            CellParams::Lstm(p) => &p.bias,
            CellParams::Rnn(p) => &p.bias,
        }
    }

    fn parts_mut(&mut self) -> (&mut Matrix, &mut Vec<f64>) {
        match self {
            CellParams::Lstm(p) => (&mut p.weights, &mut p.bias),
            CellParams::Rnn(p) => (&mut p.weights, &mut p.bias),
        }
    }
}

/// Every trainable tensor of a stacked recurrent network plus its output head.
///
/// Gradients use the same type, so optimizers can walk parameters and gradients
/// in lockstep via [`NetworkParams::tensors`].
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub cells: Vec<CellParams>,
    /// `output_len x head_input_size`.
    pub head_weights: Matrix,
    pub head_bias: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        let h = config.hidden_size;
        let cells = (0..config.num_layers)
            .map(|l| {
                let input = config.layer_input_size(l);
                match config.cell_kind {
                    CellKind::Lstm => CellParams::Lstm(LstmCellParams::zeros(h, input)),
                    CellKind::Rnn => CellParams::Rnn(RnnCellParams::zeros(h, input)),
                }
            })
            .collect();
        Self {
            cells,
            head_weights: Matrix::zeros(config.output_len, config.head_input_size()),
            head_bias: vec![0.0; config.output_len],
        }
    }

    /// Parameter tensors in checkpoint order: per layer weights then bias, then head weights and bias.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.cells.len() + 2);
        for c in &self.cells {
            out.push(c.weights().as_slice());
            out.push(c.bias());
        }
        out.push(self.head_weights.as_slice());
        out.push(&self.head_bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.cells.len() + 2);
        for c in &mut self.cells {
            let (w, b) = c.parts_mut();
            out.push(w.as_mut_slice());
            out.push(b.as_mut_slice());
        }
        out.push(self.head_weights.as_mut_slice());
        out.push(&mut self.head_bias);
        out
    }

    pub fn tensor_shapes(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(2 * self.cells.len() + 2);
        for c in &self.cells {
            out.push(c.weights().shape());
            out.push((1, c.bias().len()));
        }
        out.push(self.head_weights.shape());
        out.push((1, self.head_bias.len()));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Fails unless every tensor has the shape `config` prescribes.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        if self.cells.iter().any(|c| c.kind() != config.cell_kind) {
            return Err(Error::arg(format!(
                "parameters do not match cell kind {}",
                config.cell_kind
            )));
        }
        let expected = config.tensor_shapes();
        let actual = self.tensor_shapes();
        if expected != actual {
            return Err(Error::arg(format!(
                "parameter shapes {actual:?} do not match config shapes {expected:?}"
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|x| x * x)
            .sum()
    }

    pub fn fill(&mut self, v: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x = v);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }
}

/// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero except the
/// LSTM forget-gate bias, which starts at 1. Same seed, same parameters.
pub fn init_params(config: &ModelConfig, rng_seed: u64) -> Result<NetworkParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut params = NetworkParams::zeros(config);
    for cell in &mut params.cells {
        let (w, _) = cell.parts_mut();
        let bound = 1.0 / (w.cols() as f64).sqrt();
        for x in w.as_mut_slice() {
            *x = rng.random_range(-bound..=bound);
        }
        if let CellParams::Lstm(p) = cell {
            p.gate_bias_mut(Gate::Forget).iter_mut().for_each(|b| *b = 1.0);
        }
    }
    let bound = 1.0 / (params.head_weights.cols() as f64).sqrt();
    for x in params.head_weights.as_mut_slice() {
        *x = rng.random_range(-bound..=bound);
    }
    Ok(params)
}
