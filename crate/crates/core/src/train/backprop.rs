//! Backpropagation through time for the stacked network of [`crate::nn`].

use crate::error::{Error, Result};
use crate::linalg::{add_column_sums, gemm, Matrix, Op};
use crate::nn::{CellParams, ForwardCache, HeadMode, ModelConfig, NetworkParams};

/// Gradients of the loss with respect to every parameter, given the gradient of the
/// loss with respect to the sigmoid outputs (`batch x output_len`).
///
/// Dropout masks recorded in `cache` are reused, so forward + backward together are a
/// deterministic function of the parameters.
pub fn backward(
    params: &NetworkParams,
    config: &ModelConfig,
    cache: &ForwardCache,
    loss_gradient: &Matrix,
) -> Result<NetworkParams> {
    let n = cache.batch;
    let h = config.hidden_size;
    let steps = config.input_len;
    if loss_gradient.shape() != (n, config.output_len)
        || cache.layers.len() != params.cells.len()
        || cache.layers.iter().any(|l| l.hidden.len() != steps)
    {
        return Err(Error::Internal(
            "forward cache does not match parameters or loss gradient".into(),
        ));
    }
    let mut grads = NetworkParams::zeros(config);

    // head: out = sigmoid(u W^T + b)
    let mut dz = loss_gradient.clone();
    for b in 0..n {
        for (g, p) in dz.row_mut(b).iter_mut().zip(cache.output.row(b)) {
            *g *= p * (1.0 - p);
        }
    }
    gemm(1.0, &dz, Op::T, &cache.head_input, Op::N, 0.0, &mut grads.head_weights);
    add_column_sums(&dz, &mut grads.head_bias);
    let mut du = Matrix::zeros(n, config.head_input_size());
    gemm(1.0, &dz, Op::N, &params.head_weights, Op::N, 0.0, &mut du);
    if let Some(m) = &cache.masks {
        du.as_mut_slice()
            .iter_mut()
            .zip(m.head.as_slice())
            .for_each(|(g, k)| *g *= k);
    }

    // gradient flowing into each top-layer h_t from outside the recurrence
    let mut dh_ext: Vec<Matrix> = vec![Matrix::zeros(n, h); steps];
    for b in 0..n {
        let row = du.row(b);
        match config.head {
            HeadMode::AllStates => {
                for (t, d) in dh_ext.iter_mut().enumerate() {
                    d.row_mut(b).copy_from_slice(&row[t * h..(t + 1) * h]);
                }
            }
            HeadMode::LastState => dh_ext[steps - 1].row_mut(b).copy_from_slice(row),
        }
    }

    for l in (0..params.cells.len()).rev() {
        let cell = &params.cells[l];
        let layer = &cache.layers[l];
        let w = cell.weights();
        let mut dh_below: Vec<Matrix> = if l > 0 {
            vec![Matrix::zeros(n, h); steps]
        } else {
            Vec::new()
        };
        let (gw, gb) = match &mut grads.cells[l] {
            CellParams::Lstm(p) => (&mut p.weights, &mut p.bias),
            CellParams::Rnn(p) => (&mut p.weights, &mut p.bias),
        };
        let mut dh_next = Matrix::zeros(n, h);
        let mut dc_next = Matrix::zeros(n, h);
        let mut dzs = Matrix::zeros(n, w.rows());
        let mut da = Matrix::zeros(n, w.cols());
        let zeros = Matrix::zeros(n, h);
        for t in (0..steps).rev() {
            match cell {
                CellParams::Lstm(_) => {
                    let gates = &layer.gates[t];
                    let tc = &layer.tanh_cells[t];
                    let c_prev = if t > 0 { &layer.cells[t - 1] } else { &zeros };
                    for b in 0..n {
                        let gr = gates.row(b);
                        let tr = tc.row(b);
                        let cp = c_prev.row(b);
                        let ext = dh_ext[t].row(b);
                        let dzr = dzs.row_mut(b);
                        for k in 0..h {
                            let (f, i, g, o) = (gr[k], gr[h + k], gr[2 * h + k], gr[3 * h + k]);
                            let dh = ext[k] + dh_next.get(b, k);
                            let dc = dc_next.get(b, k) + dh * o * (1.0 - tr[k] * tr[k]);
                            dzr[k] = dc * cp[k] * f * (1.0 - f);
                            dzr[h + k] = dc * g * i * (1.0 - i);
                            dzr[2 * h + k] = dc * i * (1.0 - g * g);
                            dzr[3 * h + k] = dh * tr[k] * o * (1.0 - o);
                            dc_next.set(b, k, dc * f);
                        }
                    }
                }
                CellParams::Rnn(_) => {
                    let hid = &layer.hidden[t];
                    for b in 0..n {
                        let hr = hid.row(b);
                        let ext = dh_ext[t].row(b);
                        let dzr = dzs.row_mut(b);
                        for k in 0..h {
                            let dh = ext[k] + dh_next.get(b, k);
                            dzr[k] = dh * (1.0 - hr[k] * hr[k]);
                        }
                    }
                }
            }
            gemm(1.0, &dzs, Op::T, &layer.inputs[t], Op::N, 1.0, gw);
            add_column_sums(&dzs, gb);
            gemm(1.0, &dzs, Op::N, w, Op::N, 0.0, &mut da);
            for b in 0..n {
                let row = da.row(b);
                dh_next.row_mut(b).copy_from_slice(&row[..h]);
                if l > 0 {
                    let below = dh_below[t].row_mut(b);
                    below.copy_from_slice(&row[h..]);
                    if let Some(m) = &cache.masks {
                        for (g, k) in below.iter_mut().zip(m.between[l - 1][t].row(b)) {
                            *g *= k;
                        }
                    }
                }
            }
        }
        if l > 0 {
            dh_ext = dh_below;
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{forward_with_masks, init_params, SequenceBatch};

    #[test]
    fn zero_loss_gradient_gives_zero_gradients() {
        let config = ModelConfig {
            num_layers: 2,
            hidden_size: 3,
            input_len: 4,
            output_len: 5,
            ..Default::default()
        };
        let params = init_params(&config, 1).unwrap();
        let x = Matrix::from_vec(4, 5, (0..20).map(|i| i as f64 / 20.0).collect()).unwrap();
        let batch = SequenceBatch::from_sequences(&[&x]).unwrap();
        let cache = forward_with_masks(&params, &config, &batch, None).unwrap();
        let grads = backward(&params, &config, &cache, &Matrix::zeros(1, 5)).unwrap();
        assert_eq!(grads.squared_norm(), 0.0);
    }

    #[test]
    fn mismatched_gradient_shape_is_internal_error() {
        let config = ModelConfig {
            num_layers: 1,
            hidden_size: 2,
            input_len: 3,
            output_len: 4,
            ..Default::default()
        };
        let params = init_params(&config, 1).unwrap();
        let x = Matrix::zeros(3, 5);
        let batch = SequenceBatch::from_sequences(&[&x]).unwrap();
        let cache = forward_with_masks(&params, &config, &batch, None).unwrap();
        let err = backward(&params, &config, &cache, &Matrix::zeros(1, 5)).unwrap_err();
        assert!(matches!(err, Error::Internal(_)));
    }
}
