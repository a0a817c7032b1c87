use rand::Rng;

use super::params::{CellParams, NetworkParams};
use super::{HeadMode, ModelConfig};
use crate::error::{Error, Result};
use crate::linalg::{gemm, sigmoid, Matrix, Op};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, masks drawn from the caller's random source.
    Train,
    /// Deterministic, no dropout.
    Eval,
}

/// A batch of equal-length sequences stored time-major: `steps[t]` is `batch x features`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    steps: Vec<Matrix>,
}

impl SequenceBatch {
    /// Interleaves sequences given as `time x features` matrices.
    pub fn from_sequences(seqs: &[&Matrix]) -> Result<Self> {
        let first = seqs
            .first()
            .ok_or_else(|| Error::arg("empty sequence batch"))?;
        let (len, features) = first.shape();
        if seqs.iter().any(|s| s.shape() != (len, features)) {
            return Err(Error::arg("sequences in a batch must share one shape"));
        }
        let steps = (0..len)
            .map(|t| {
                let mut m = Matrix::zeros(seqs.len(), features);
                for (b, s) in seqs.iter().enumerate() {
                    m.row_mut(b).copy_from_slice(s.row(t));
                }
                m
            })
            .collect();
        Ok(Self { steps })
    }

    pub fn batch_size(&self) -> usize {
        self.steps.first().map_or(0, Matrix::rows)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn features(&self) -> usize {
        self.steps.first().map_or(0, Matrix::cols)
    }

    pub fn step(&self, t: usize) -> &Matrix {
        &self.steps[t]
    }

    pub fn is_finite(&self) -> bool {
        self.steps.iter().all(Matrix::is_finite)
    }
}

/// Inverted-dropout masks: entries are 0 or `1 / (1 - rate)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMasks {
    /// `between[l][t]` scales layer `l`'s output before it enters layer `l + 1`.
    pub between: Vec<Vec<Matrix>>,
    /// Applied to the head input (`batch x head_input_size`).
    pub head: Matrix,
}

/// Draws masks for one training pass; `None` when the rate is zero.
pub fn sample_dropout_masks<R: Rng + ?Sized>(
    config: &ModelConfig,
    batch: usize,
    rng: &mut R,
) -> Option<DropoutMasks> {
    let rate = config.dropout_rate;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    let mut draw = |rows: usize, cols: usize| {
        let data = (0..rows * cols)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        Matrix::from_vec(rows, cols, data).expect("mask shape")
    };
    let between = (0..config.num_layers - 1)
        .map(|_| {
            (0..config.input_len)
                .map(|_| draw(batch, config.hidden_size))
                .collect()
        })
        .collect();
    let head = draw(batch, config.head_input_size());
    Some(DropoutMasks { between, head })
}

/// Per-timestep activations of one recurrent layer.
#[derive(Clone, Debug, Default)]
pub struct LayerCache {
    /// `[h_{t-1}, x_t]`, `batch x (hidden + input)`.
    pub inputs: Vec<Matrix>,
    /// LSTM only: activated gates `[f, i, c~, o]`, `batch x 4*hidden`.
    pub gates: Vec<Matrix>,
    /// LSTM only: `c_t`.
    pub cells: Vec<Matrix>,
    /// LSTM only: `tanh(c_t)`.
    pub tanh_cells: Vec<Matrix>,
    pub hidden: Vec<Matrix>,
}

/// Everything backpropagation needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub batch: usize,
    pub layers: Vec<LayerCache>,
    pub masks: Option<DropoutMasks>,
    pub head_input: Matrix,
    /// Sigmoid outputs, `batch x output_len`.
    pub output: Matrix,
}

impl ForwardCache {
    pub fn predictions(&self) -> &Matrix {
        &self.output
    }
}

fn check_inputs(params: &NetworkParams, config: &ModelConfig, batch: &SequenceBatch) -> Result<()> {
    params.check_shapes(config)?;
    if batch.len() != config.input_len || batch.features() != config.feature_count {
        return Err(Error::arg(format!(
            "input is {}x{}, model expects {}x{}",
            batch.len(),
            batch.features(),
            config.input_len,
            config.feature_count
        )));
    }
    if batch.batch_size() == 0 {
        return Err(Error::arg("empty batch"));
    }
    Ok(())
}

fn check_masks(masks: &DropoutMasks, config: &ModelConfig, batch: usize) -> Result<()> {
    let ok = masks.between.len() == config.num_layers - 1
        && masks.between.iter().all(|per_t| {
            per_t.len() == config.input_len
                && per_t.iter().all(|m| m.shape() == (batch, config.hidden_size))
        })
        && masks.head.shape() == (batch, config.head_input_size());
    if ok {
        Ok(())
    } else {
        Err(Error::arg("dropout masks do not match the model and batch"))
    }
}

fn run_layer(cell: &CellParams, xs: &[Matrix], batch: usize) -> LayerCache {
    let w = cell.weights();
    let bias = cell.bias();
    let width = w.cols();
    let gates_width = w.rows();
    let mut cache = LayerCache::default();
    let hidden = match cell {
        CellParams::Lstm(p) => p.hidden,
        CellParams::Rnn(p) => p.hidden,
    };
    let mut h_prev = Matrix::zeros(batch, hidden);
    let mut c_prev = Matrix::zeros(batch, hidden);
    for x in xs {
        let mut a = Matrix::zeros(batch, width);
        for b in 0..batch {
            let row = a.row_mut(b);
            row[..hidden].copy_from_slice(h_prev.row(b));
            row[hidden..].copy_from_slice(x.row(b));
        }
        let mut z = Matrix::zeros(batch, gates_width);
        gemm(1.0, &a, Op::N, w, Op::T, 0.0, &mut z);
        match cell {
            CellParams::Lstm(_) => {
                let mut c = Matrix::zeros(batch, hidden);
                let mut tc = Matrix::zeros(batch, hidden);
                let mut h = Matrix::zeros(batch, hidden);
                for b in 0..batch {
                    let zr = z.row_mut(b);
                    for (v, bb) in zr.iter_mut().zip(bias) {
                        *v += bb;
                    }
                    let (sig1, rest) = zr.split_at_mut(2 * hidden);
                    let (cand, out) = rest.split_at_mut(hidden);
                    sig1.iter_mut().for_each(|v| *v = sigmoid(*v));
                    cand.iter_mut().for_each(|v| *v = v.tanh());
                    out.iter_mut().for_each(|v| *v = sigmoid(*v));
                    let zr = z.row(b);
                    let cp = c_prev.row(b);
                    let cr = c.row_mut(b);
                    for k in 0..hidden {
                        cr[k] = zr[k] * cp[k] + zr[hidden + k] * zr[2 * hidden + k];
                    }
                    let tr = tc.row_mut(b);
                    for k in 0..hidden {
                        tr[k] = c.row(b)[k].tanh();
                    }
                    let hr = h.row_mut(b);
                    for k in 0..hidden {
                        hr[k] = zr[3 * hidden + k] * tc.row(b)[k];
                    }
                }
                cache.gates.push(z);
                cache.cells.push(c.clone());
                cache.tanh_cells.push(tc);
                cache.hidden.push(h.clone());
                c_prev = c;
                h_prev = h;
            }
            CellParams::Rnn(_) => {
                for b in 0..batch {
                    for (v, bb) in z.row_mut(b).iter_mut().zip(bias) {
                        *v = (*v + bb).tanh();
                    }
                }
                cache.hidden.push(z.clone());
                h_prev = z;
            }
        }
        cache.inputs.push(a);
    }
    cache
}

/// Runs the stack over a batch with the given dropout masks (`None` = no dropout).
///
/// With fixed masks the map from parameters to outputs is deterministic and
/// differentiable, which is what gradient checking relies on.
pub fn forward_with_masks(
    params: &NetworkParams,
    config: &ModelConfig,
    batch: &SequenceBatch,
    masks: Option<DropoutMasks>,
) -> Result<ForwardCache> {
    check_inputs(params, config, batch)?;
    let n = batch.batch_size();
    if let Some(m) = &masks {
        check_masks(m, config, n)?;
    }
    let h = config.hidden_size;
    let mut layers = Vec::with_capacity(config.num_layers);
    let mut xs: Vec<Matrix> = batch.steps.clone();
    for (l, cell) in params.cells.iter().enumerate() {
        let cache = run_layer(cell, &xs, n);
        if l + 1 < config.num_layers {
            xs = cache.hidden.clone();
            if let Some(m) = &masks {
                for (x, mask) in xs.iter_mut().zip(&m.between[l]) {
                    x.as_mut_slice()
                        .iter_mut()
                        .zip(mask.as_slice())
                        .for_each(|(v, k)| *v *= k);
                }
            }
        }
        layers.push(cache);
    }

    let top = &layers.last().expect("at least one layer").hidden;
    let mut head_input = Matrix::zeros(n, config.head_input_size());
    for b in 0..n {
        let row = head_input.row_mut(b);
        match config.head {
            HeadMode::AllStates => {
                for (t, ht) in top.iter().enumerate() {
                    row[t * h..(t + 1) * h].copy_from_slice(ht.row(b));
                }
            }
            HeadMode::LastState => row.copy_from_slice(top[top.len() - 1].row(b)),
        }
    }
    if let Some(m) = &masks {
        head_input
            .as_mut_slice()
            .iter_mut()
            .zip(m.head.as_slice())
            .for_each(|(v, k)| *v *= k);
    }
    let mut output = Matrix::zeros(n, config.output_len);
    gemm(1.0, &head_input, Op::N, &params.head_weights, Op::T, 0.0, &mut output);
    for b in 0..n {
        for (v, bb) in output.row_mut(b).iter_mut().zip(&params.head_bias) {
            *v = sigmoid(*v + bb);
        }
    }
    Ok(ForwardCache {
        batch: n,
        layers,
        masks,
        head_input,
        output,
    })
}

/// Batched forward pass; in [`Mode::Train`] fresh dropout masks are drawn from `rng`.
pub fn forward_batch<R: Rng + ?Sized>(
    params: &NetworkParams,
    config: &ModelConfig,
    batch: &SequenceBatch,
    mode: Mode,
    rng: &mut R,
) -> Result<ForwardCache> {
    let masks = match mode {
        Mode::Train => sample_dropout_masks(config, batch.batch_size(), rng),
        Mode::Eval => None,
    };
    forward_with_masks(params, config, batch, masks)
}

/// Forward pass for one `input_len x feature_count` window; returns the
/// `output_len` sigmoid predictions and the cache.
pub fn network_forward<R: Rng + ?Sized>(
    params: &NetworkParams,
    config: &ModelConfig,
    input: &Matrix,
    mode: Mode,
    rng: &mut R,
) -> Result<(Vec<f64>, ForwardCache)> {
    let batch = SequenceBatch::from_sequences(&[input])?;
    let cache = forward_batch(params, config, &batch, mode, rng)?;
    Ok((cache.output.row(0).to_vec(), cache))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, lstm_cell_forward, rnn_cell_forward, CellKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn window(config: &ModelConfig, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..config.input_len * config.feature_count)
            .map(|_| rng.random::<f64>())
            .collect();
        Matrix::from_vec(config.input_len, config.feature_count, data).unwrap()
    }

    /// Unbatched reference built from the single-step cell functions.
    fn reference_forward(params: &NetworkParams, config: &ModelConfig, input: &Matrix) -> Vec<f64> {
        let mut xs: Vec<Vec<f64>> = (0..input.rows()).map(|t| input.row(t).to_vec()).collect();
        for cell in &params.cells {
            let mut h = vec![0.0; config.hidden_size];
            let mut c = vec![0.0; config.hidden_size];
            let mut outs = Vec::new();
            for x in &xs {
                match cell {
                    CellParams::Lstm(p) => {
                        let (h2, c2, _) = lstm_cell_forward(p, x, &h, &c).unwrap();
                        h = h2;
                        c = c2;
                    }
                    CellParams::Rnn(p) => h = rnn_cell_forward(p, x, &h).unwrap().0,
                }
                outs.push(h.clone());
            }
            xs = outs;
        }
        let u: Vec<f64> = match config.head {
            HeadMode::AllStates => xs.concat(),
            HeadMode::LastState => xs.last().unwrap().clone(),
        };
        (0..config.output_len)
            .map(|o| {
                let z: f64 = params.head_weights.row(o).iter().zip(&u).map(|(w, x)| w * x).sum();
                sigmoid(z + params.head_bias[o])
            })
            .collect()
    }

    #[test]
    fn batched_forward_matches_reference_cells() {
        for kind in [CellKind::Lstm, CellKind::Rnn] {
            for head in [HeadMode::AllStates, HeadMode::LastState] {
                let config = ModelConfig {
                    cell_kind: kind,
                    num_layers: 2,
                    hidden_size: 4,
                    head,
                    ..Default::default()
                };
                let params = init_params(&config, 11).unwrap();
                let inputs = [window(&config, 1), window(&config, 2), window(&config, 3)];
                let batch = SequenceBatch::from_sequences(&inputs.iter().collect::<Vec<_>>()).unwrap();
                let cache = forward_with_masks(&params, &config, &batch, None).unwrap();
                for (b, input) in inputs.iter().enumerate() {
                    let expected = reference_forward(&params, &config, input);
                    for (x, y) in cache.output.row(b).iter().zip(&expected) {
                        assert!((x - y).abs() < 1e-12, "{kind:?} {head:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn eval_is_deterministic_and_bounded() {
        let config = ModelConfig::default();
        let params = init_params(&config, 5).unwrap();
        let input = window(&config, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, _) = network_forward(&params, &config, &input, Mode::Eval, &mut rng).unwrap();
        let (b, _) = network_forward(&params, &config, &input, Mode::Eval, &mut rng).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 100);
        assert!(a.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn train_mode_applies_dropout() {
        let config = ModelConfig::default();
        let params = init_params(&config, 5).unwrap();
        let input = window(&config, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (eval, _) = network_forward(&params, &config, &input, Mode::Eval, &mut rng).unwrap();
        let (train, cache) = network_forward(&params, &config, &input, Mode::Train, &mut rng).unwrap();
        assert_ne!(eval, train);
        let masks = cache.masks.unwrap();
        assert_eq!(masks.between.len(), 1);
        assert_eq!(masks.between[0].len(), 67);
        assert_eq!(masks.head.shape(), (1, 67 * 30));
    }

    #[test]
    fn two_layer_topology_feeds_upward() {
        // zeroing layer 1's input weights cuts the path from layer 0 to the head
        let config = ModelConfig {
            num_layers: 2,
            hidden_size: 30,
            ..Default::default()
        };
        let mut params = init_params(&config, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = window(&config, 1);
        let b = window(&config, 2);
        let (ya, _) = network_forward(&params, &config, &a, Mode::Eval, &mut rng).unwrap();
        let (yb, _) = network_forward(&params, &config, &b, Mode::Eval, &mut rng).unwrap();
        assert_ne!(ya, yb);
        if let CellParams::Lstm(p) = &mut params.cells[1] {
            for r in 0..p.weights.rows() {
                for c in p.hidden..p.weights.cols() {
                    p.weights.set(r, c, 0.0);
                }
            }
        }
        let (ya, _) = network_forward(&params, &config, &a, Mode::Eval, &mut rng).unwrap();
        let (yb, _) = network_forward(&params, &config, &b, Mode::Eval, &mut rng).unwrap();
        assert_eq!(ya, yb);
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let config = ModelConfig::default();
        let params = init_params(&config, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bad = Matrix::zeros(66, 5);
        assert!(network_forward(&params, &config, &bad, Mode::Eval, &mut rng).is_err());
        let bad = Matrix::zeros(67, 4);
        assert!(network_forward(&params, &config, &bad, Mode::Eval, &mut rng).is_err());
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        let config = ModelConfig {
            num_layers: 2,
            hidden_size: 4,
            input_len: 1,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 20_000;
        let mut sum = 0.0;
        let mut count = 0usize;
        for _ in 0..draws {
            let m = sample_dropout_masks(&config, 1, &mut rng).unwrap();
            for v in m.between[0][0].as_slice() {
                sum += v;
                count += 1;
            }
        }
        let mean = sum / count as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean mask value {mean}");
    }
}
