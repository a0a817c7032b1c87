//! Central-difference verification of the analytic BPTT gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{backward, batch_mse};
use crate::error::Result;
use crate::linalg::Matrix;
use crate::nn::{CellKind, forward_with_masks, init_params, sample_dropout_masks, DropoutMasks, ModelConfig, NetworkParams, SequenceBatch};

pub const PERTURBATION: f64 = 1e-5;

/// Denominator floor for the relative error. Central differences at this step carry
/// about 1e-12 absolute error (truncation), so smaller gradients are compared in
/// absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-7;

const BATCH: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub parameters_checked: usize,
    pub trials: usize,
    /// `(trial, tensor, index)` of the worst entry.
    pub worst: (usize, usize, usize),
    /// Analytic and numeric values at `worst`.
    pub worst_values: (f64, f64),
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// A loss problem with every random choice frozen: inputs, targets and dropout masks.
pub struct FrozenProblem {
    pub config: ModelConfig,
    pub batch: SequenceBatch,
    pub targets: Matrix,
    pub masks: Option<DropoutMasks>,
}

impl FrozenProblem {
    pub fn random(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seqs: Vec<Matrix> = (0..BATCH)
            .map(|_| {
                let data = (0..config.input_len * config.feature_count)
                    .map(|_| rng.random::<f64>())
                    .collect();
                Matrix::from_vec(config.input_len, config.feature_count, data)
            })
            .collect::<Result<_>>()?;
        let batch = SequenceBatch::from_sequences(&seqs.iter().collect::<Vec<_>>())?;
        let targets = Matrix::from_vec(
            BATCH,
            config.output_len,
            (0..BATCH * config.output_len).map(|_| rng.random::<f64>()).collect(),
        )?;
        let masks = sample_dropout_masks(config, BATCH, &mut rng);
        Ok(Self {
            config: config.clone(),
            batch,
            targets,
            masks,
        })
    }

    pub fn loss(&self, params: &NetworkParams) -> Result<f64> {
        let cache = forward_with_masks(params, &self.config, &self.batch, self.masks.clone())?;
        Ok(batch_mse(&cache.output, &self.targets, (0, self.config.output_len))?.0)
    }

    pub fn analytic_gradient(&self, params: &NetworkParams) -> Result<NetworkParams> {
        let cache = forward_with_masks(params, &self.config, &self.batch, self.masks.clone())?;
        let (_, dloss) = batch_mse(&cache.output, &self.targets, (0, self.config.output_len))?;
        backward(params, &self.config, &cache, &dloss)
    }

    /// Central differences, one parameter at a time.
    pub fn numeric_gradient(&self, params: &NetworkParams) -> Result<NetworkParams> {
        let mut probe = params.clone();
        let mut grads = NetworkParams::zeros(&self.config);
        let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        for (ti, &len) in sizes.iter().enumerate() {
            for k in 0..len {
                let original = params.tensors()[ti][k];
                probe.tensors_mut()[ti][k] = original + PERTURBATION;
                let plus = self.loss(&probe)?;
                probe.tensors_mut()[ti][k] = original - PERTURBATION;
                let minus = self.loss(&probe)?;
                probe.tensors_mut()[ti][k] = original;
                grads.tensors_mut()[ti][k] = (plus - minus) / (2.0 * PERTURBATION);
            }
        }
        Ok(grads)
    }
}

/// Parameters from `init_params` with every bias jittered, so no gradient vanishes by symmetry.
fn trial_params(config: &ModelConfig, seed: u64) -> Result<NetworkParams> {
    let mut params = init_params(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut tensors = params.tensors_mut();
    let count = tensors.len();
    for (i, t) in tensors.iter_mut().enumerate() {
        // biases sit at odd positions, the head bias last
        if i % 2 == 1 || i == count - 1 {
            t.iter_mut().for_each(|b| *b += rng.random_range(-0.5..0.5));
        }
    }
    Ok(params)
}

/// Compares analytic and central-difference gradients over `trial_count` random
/// draws of parameters, inputs, targets and (when `dropout_rate > 0`) frozen masks.
pub fn grad_check(config: &ModelConfig, trial_count: usize) -> Result<GradCheckReport> {
    config.validate()?;
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        parameters_checked: 0,
        trials: trial_count,
        worst: (0, 0, 0),
        worst_values: (0.0, 0.0),
    };
    for trial in 0..trial_count {
        let seed = config.seed.wrapping_mul(1_000_003).wrapping_add(trial as u64);
        let params = trial_params(config, seed)?;
        let problem = FrozenProblem::random(config, seed)?;
        let analytic = problem.analytic_gradient(&params)?;
        let numeric = problem.numeric_gradient(&params)?;
        for (ti, (a, n)) in analytic.tensors().iter().zip(numeric.tensors()).enumerate() {
            for (k, (&x, &y)) in a.iter().zip(n).enumerate() {
                let err = relative_error(x, y);
                if err > report.max_relative_error || err.is_nan() {
                    report.max_relative_error = err;
                    report.worst = (trial, ti, k);
                    report.worst_values = (x, y);
                }
                report.parameters_checked += 1;
            }
        }
    }
    Ok(report)
}

/// Small network for finite differences: 5 steps, 6 outputs, no dropout.
pub fn reduced_config(kind: CellKind, layers: usize, hidden: usize) -> ModelConfig {
    ModelConfig {
        cell_kind: kind,
        num_layers: layers,
        hidden_size: hidden,
        input_len: 5,
        output_len: 6,
        dropout_rate: 0.0,
        seed: 17,
        ..Default::default()
    }
}

/// Both cell kinds at 1-2 layers and 2-3 hidden units.
pub fn standard_grid() -> Vec<ModelConfig> {
    let mut out = Vec::new();
    for kind in [CellKind::Lstm, CellKind::Rnn] {
        for layers in [1, 2] {
            for hidden in [2, 3] {
                out.push(reduced_config(kind, layers, hidden));
            }
        }
    }
    out
}
