//! Single-step, single-sample cell evaluation.
//!
//! The network runs batched kernels instead; these are the reference form of the
//! cell equations and are what the batched path is tested against.

use super::params::{Gate, LstmCellParams, RnnCellParams};
use crate::error::{Error, Result};
use crate::linalg::{dot, sigmoid};

/// Intermediates of one LSTM step.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmStepCache {
    /// `[h_{t-1}, x_t]`
    pub concat: Vec<f64>,
    pub forget: Vec<f64>,
    pub input: Vec<f64>,
    pub candidate: Vec<f64>,
    pub output: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub cell: Vec<f64>,
    pub tanh_cell: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RnnStepCache {
    pub concat: Vec<f64>,
    pub hidden: Vec<f64>,
}

fn concat(h_prev: &[f64], x_t: &[f64]) -> Vec<f64> {
    let mut a = Vec::with_capacity(h_prev.len() + x_t.len());
    a.extend_from_slice(h_prev);
    a.extend_from_slice(x_t);
    a
}

fn check(hidden: usize, input: usize, x_t: &[f64], h_prev: &[f64]) -> Result<()> {
    if x_t.len() != input || h_prev.len() != hidden {
        return Err(Error::arg(format!(
            "cell expects input {input} and hidden {hidden}, got {} and {}",
            x_t.len(),
            h_prev.len()
        )));
    }
    Ok(())
}

fn affine(weights: &[f64], bias: &[f64], a: &[f64], act: fn(f64) -> f64) -> Vec<f64> {
    weights
        .chunks_exact(a.len())
        .zip(bias)
        .map(|(row, b)| act(dot(row, a) + b))
        .collect()
}

/// One LSTM step: returns `(h_t, c_t, cache)`.
pub fn lstm_cell_forward(
    p: &LstmCellParams,
    x_t: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, LstmStepCache)> {
    check(p.hidden, p.input, x_t, h_prev)?;
    if c_prev.len() != p.hidden {
        return Err(Error::arg(format!(
            "cell state has {} entries, expected {}",
            c_prev.len(),
            p.hidden
        )));
    }
    let a = concat(h_prev, x_t);
    let gate = |g: Gate, act: fn(f64) -> f64| affine(p.gate_weights(g), p.gate_bias(g), &a, act);
    let forget = gate(Gate::Forget, sigmoid);
    let input = gate(Gate::Input, sigmoid);
    let candidate = gate(Gate::Candidate, f64::tanh);
    let output = gate(Gate::Output, sigmoid);
    let cell: Vec<f64> = (0..p.hidden)
        .map(|k| forget[k] * c_prev[k] + input[k] * candidate[k])
        .collect();
    let tanh_cell: Vec<f64> = cell.iter().map(|c| c.tanh()).collect();
    let h: Vec<f64> = output.iter().zip(&tanh_cell).map(|(o, t)| o * t).collect();
    let cache = LstmStepCache {
        concat: a,
        forget,
        input,
        candidate,
        output,
        c_prev: c_prev.to_vec(),
        cell: cell.clone(),
        tanh_cell,
    };
    Ok((h, cell, cache))
}

/// One vanilla RNN step: `h_t = tanh(w_h [h_{t-1}, x_t] + b_h)`.
pub fn rnn_cell_forward(
    p: &RnnCellParams,
    x_t: &[f64],
    h_prev: &[f64],
) -> Result<(Vec<f64>, RnnStepCache)> {
    check(p.hidden, p.input, x_t, h_prev)?;
    let a = concat(h_prev, x_t);
    let h = affine(p.weights.as_slice(), &p.bias, &a, f64::tanh);
    Ok((
        h.clone(),
        RnnStepCache {
            concat: a,
            hidden: h,
        },
    ))
}
