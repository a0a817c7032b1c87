//! Long-lag recall benchmark: one value must be carried across many distractor steps.
//!
//! Channel 0 carries uniform noise except at `seq_len - 1 - lag`, where it holds the
//! value to recall; channel 1 marks that step. The target is the marked value, read
//! from the last hidden state.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataio::WindowPair;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{CellKind, HeadMode, ModelConfig};
use crate::train::{self, stack_windows, TrainOptions};

#[derive(Clone, Debug, PartialEq)]
pub struct LongLagSpec {
    pub seq_len: usize,
    pub lag: usize,
    pub hidden_size: usize,
    pub train_count: usize,
    pub validation_count: usize,
    pub iterations: usize,
    pub learning_rate: f64,
}

impl Default for LongLagSpec {
    fn default() -> Self {
        Self {
            seq_len: 67,
            lag: 50,
            hidden_size: 8,
            train_count: 128,
            validation_count: 256,
            iterations: 3000,
            learning_rate: 0.005,
        }
    }
}

impl LongLagSpec {
    pub fn model_config(&self, cell_kind: CellKind, seed: u64) -> ModelConfig {
        ModelConfig {
            cell_kind,
            num_layers: 1,
            hidden_size: self.hidden_size,
            dropout_rate: 0.0,
            input_len: self.seq_len,
            output_len: 1,
            feature_count: 2,
            head: HeadMode::LastState,
            seed,
        }
    }
}

/// `count` sequences of the recall task drawn from `rng`.
pub fn long_lag_windows<R: Rng + ?Sized>(spec: &LongLagSpec, count: usize, rng: &mut R) -> Result<Vec<WindowPair>> {
    if spec.lag >= spec.seq_len {
        return Err(Error::arg(format!(
            "lag {} does not fit in a sequence of {}",
            spec.lag, spec.seq_len
        )));
    }
    let marked = spec.seq_len - 1 - spec.lag;
    let start = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
    (0..count)
        .map(|k| {
            let mut input = Matrix::zeros(spec.seq_len, 2);
            let value: f64 = rng.random();
            for t in 0..spec.seq_len {
                input.set(t, 0, if t == marked { value } else { rng.random() });
            }
            input.set(marked, 1, 1.0);
            Ok(WindowPair {
                region_id: format!("seq{k}"),
                start_date: start,
                input,
                target: vec![value],
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LongLagOutcome {
    pub seed: u64,
    pub lstm_validation_mse: f64,
    pub rnn_validation_mse: f64,
}

impl LongLagOutcome {
    pub fn lstm_wins(&self) -> bool {
        self.lstm_validation_mse < self.rnn_validation_mse
    }
}

fn validation_mse(config: &ModelConfig, spec: &LongLagSpec, train_set: &[WindowPair], val: &[WindowPair]) -> Result<f64> {
    let options = TrainOptions {
        iterations: spec.iterations,
        learning_rate: spec.learning_rate,
        ..TrainOptions::default()
    };
    let report = train::train(config, train_set, &options)?;
    let (batch, targets) = stack_windows(val)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cache = crate::nn::forward_batch(&report.final_params, config, &batch, crate::nn::Mode::Eval, &mut rng)?;
    let (loss, _) = train::batch_mse(&cache.output, &targets, (0, 1))?;
    Ok(loss)
}

/// Trains an LSTM and an RNN per seed on the same data and scores both on held-out sequences.
pub fn run_long_lag(spec: &LongLagSpec, seeds: &[u64]) -> Result<Vec<LongLagOutcome>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(7);
            let train_set = long_lag_windows(spec, spec.train_count, &mut rng)?;
            let val = long_lag_windows(spec, spec.validation_count, &mut rng)?;
            let lstm = validation_mse(&spec.model_config(CellKind::Lstm, seed), spec, &train_set, &val)?;
            let rnn = validation_mse(&spec.model_config(CellKind::Rnn, seed), spec, &train_set, &val)?;
            Ok(LongLagOutcome {
                seed,
                lstm_validation_mse: lstm,
                rnn_validation_mse: rnn,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marked_step_holds_target() {
        let spec = LongLagSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = long_lag_windows(&spec, 4, &mut rng).unwrap();
        for p in &w {
            assert_eq!(p.input.shape(), (67, 2));
            assert_eq!(p.input.get(16, 0), p.target[0]);
            let marks: f64 = p.input.column(1).iter().sum();
            assert_eq!(marks, 1.0);
            assert_eq!(p.input.get(16, 1), 1.0);
        }
    }

    #[test]
    fn lag_must_fit() {
        let spec = LongLagSpec {
            lag: 67,
            ..LongLagSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(long_lag_windows(&spec, 1, &mut rng).is_err());
    }
}
