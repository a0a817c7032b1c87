//! Loss, backpropagation through time, Adam and the full-batch training loop.

mod adam;
mod backprop;
pub mod gradcheck;
mod loss;

pub use adam::{AdamState, DEFAULT_LEARNING_RATE};
pub use backprop::backward;
pub use gradcheck::{grad_check, GradCheckReport};
pub use gradcheck::{reduced_config, standard_grid};
pub use loss::{batch_mse, mse_loss, LossRange};

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::WindowPair;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{self, checkpoint, forward_batch, init_params, Mode, ModelConfig, NetworkParams, SequenceBatch};

pub const DEFAULT_ITERATIONS: usize = 10_000;
pub const DEFAULT_CLIP_NORM: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub loss_range: LossRange,
    /// Train only the linear head, keeping the recurrent weights at their initial values.
    pub freeze_recurrent: bool,
    /// Write a checkpoint every `n` iterations to `checkpoint_path`.
    pub checkpoint_every: Option<usize>,
    pub checkpoint_path: Option<PathBuf>,
    pub head_bias_init: HeadBiasInit,
}

/// Starting value of the head bias for a fresh run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadBiasInit {
    Zero,
    /// Logit of each output day's mean training target. With a zero bias, Adam
    /// drives the sigmoid into saturation within a few dozen steps whenever the
    /// top-layer states barely vary across windows, and training never recovers.
    #[default]
    TargetMean,
}

/// Sets `params.head_bias[d]` to the logit of the mean of `targets[.., d]`.
pub fn init_head_bias_from_targets(params: &mut NetworkParams, targets: &Matrix) -> Result<()> {
    if targets.cols() != params.head_bias.len() || targets.rows() == 0 {
        return Err(Error::arg(format!(
            "targets are {}x{}, head has {} outputs",
            targets.rows(),
            targets.cols(),
            params.head_bias.len()
        )));
    }
    for (d, b) in params.head_bias.iter_mut().enumerate() {
        let mean = targets.column(d).iter().sum::<f64>() / targets.rows() as f64;
        let p = mean.clamp(1e-4, 1.0 - 1e-4);
        *b = (p / (1.0 - p)).ln();
    }
    Ok(())
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
            learning_rate: DEFAULT_LEARNING_RATE,
            clip_norm: Some(DEFAULT_CLIP_NORM),
            loss_range: LossRange::Full,
            freeze_recurrent: false,
            checkpoint_every: None,
            checkpoint_path: None,
            head_bias_init: HeadBiasInit::TargetMean,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Mean batch MSE at each iteration, measured before that iteration's update.
    pub loss_history: Vec<f64>,
    pub final_params: NetworkParams,
    pub seed: u64,
    pub wall_time: f64,
    /// Iterations whose gradient was rescaled by clipping.
    pub clipped_steps: usize,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.loss_history.last().copied()
    }
}

/// Stacks windows into a time-major input batch and a `batch x output_len` target matrix.
pub fn stack_windows(windows: &[WindowPair]) -> Result<(SequenceBatch, Matrix)> {
    let inputs: Vec<&Matrix> = windows.iter().map(|w| &w.input).collect();
    let batch = SequenceBatch::from_sequences(&inputs)?;
    let targets: Vec<&[f64]> = windows.iter().map(|w| w.target.as_slice()).collect();
    let targets = Matrix::from_rows(&targets)?;
    Ok((batch, targets))
}

/// Rescales `grads` to norm `max_norm` when larger; returns whether it did.
pub fn clip_global_norm(grads: &mut NetworkParams, max_norm: f64) -> bool {
    let norm = grads.squared_norm().sqrt();
    if norm > max_norm {
        grads.scale(max_norm / norm);
        true
    } else {
        false
    }
}

/// Random source for training-time dropout, independent of the initialization stream.
pub fn dropout_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Full-batch training from freshly initialized parameters (`config.seed`).
pub fn train(config: &ModelConfig, windows: &[WindowPair], options: &TrainOptions) -> Result<TrainReport> {
    let mut params = init_params(config, config.seed)?;
    if options.head_bias_init == HeadBiasInit::TargetMean && !windows.is_empty() {
        let (_, targets) = stack_windows(windows)?;
        init_head_bias_from_targets(&mut params, &targets)?;
    }
    train_from(config, params, windows, options)
}

/// Full-batch training: every iteration is one forward and backward pass over all
/// windows followed by one Adam step.
pub fn train_from(
    config: &ModelConfig,
    mut params: NetworkParams,
    windows: &[WindowPair],
    options: &TrainOptions,
) -> Result<TrainReport> {
    config.validate()?;
    if windows.is_empty() {
        return Err(Error::arg("training needs at least one window"));
    }
    if windows.iter().any(|w| w.target.len() != config.output_len) {
        return Err(Error::arg(format!(
            "every target must have {} values",
            config.output_len
        )));
    }
    let (batch, targets) = stack_windows(windows)?;
    let range = options.loss_range.bounds(config.input_len, config.output_len);
    let mut adam = AdamState::new(&params, options.learning_rate);
    let mut rng = dropout_rng(config.seed);
    let mut loss_history = Vec::with_capacity(options.iterations);
    let mut clipped_steps = 0;
    let started = Instant::now();
    for iteration in 0..options.iterations {
        let cache = forward_batch(&params, config, &batch, Mode::Train, &mut rng)?;
        let (loss, dloss) = batch_mse(&cache.output, &targets, range)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { iteration, loss });
        }
        loss_history.push(loss);
        let mut grads = backward(&params, config, &cache, &dloss)?;
        if options.freeze_recurrent {
            for cell in &mut grads.cells {
                *cell = match cell {
                    nn::CellParams::Lstm(p) => nn::CellParams::Lstm(nn::LstmCellParams::zeros(p.hidden, p.input)),
                    nn::CellParams::Rnn(p) => nn::CellParams::Rnn(nn::RnnCellParams::zeros(p.hidden, p.input)),
                };
            }
        }
        if let Some(max_norm) = options.clip_norm {
            if clip_global_norm(&mut grads, max_norm) {
                clipped_steps += 1;
                debug!("iteration {iteration}: gradient clipped to norm {max_norm}");
            }
        }
        adam.step(&mut params, &grads)?;
        if let (Some(every), Some(path)) = (options.checkpoint_every, &options.checkpoint_path) {
            if every > 0 && (iteration + 1) % every == 0 {
                checkpoint::save(path, config, &params)?;
            }
        }
        if (iteration + 1) % 1000 == 0 {
            info!("seed {} iteration {}: loss {loss:.6e}", config.seed, iteration + 1);
        }
    }
    if !params.is_finite() {
        return Err(Error::NonFinite {
            iteration: options.iterations,
            loss: f64::NAN,
        });
    }
    Ok(TrainReport {
        loss_history,
        final_params: params,
        seed: config.seed,
        wall_time: started.elapsed().as_secs_f64(),
        clipped_steps,
    })
}

/// Two-column CSV: `iteration,mse`.
pub fn write_loss_csv<W: Write>(out: W, loss_history: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "mse"])?;
    for (i, l) in loss_history.iter().enumerate() {
        w.write_record([(i + 1).to_string(), format!("{l:e}")])?;
    }
    w.flush().map_err(|e| Error::io("<loss csv>", e))?;
    Ok(())
}

pub fn save_loss_csv(path: &Path, loss_history: &[f64]) -> Result<()> {
    let mut buf = Vec::new();
    write_loss_csv(&mut buf, loss_history)?;
    checkpoint::write_atomic(path, &buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn window(input: Matrix, target: Vec<f64>) -> WindowPair {
        WindowPair {
            region_id: "synthetic".into(),
            start_date: NaiveDate::from_ymd_opt(2020, 1, 22).unwrap(),
            input,
            target,
        }
    }

    fn small(hidden: usize) -> ModelConfig {
        ModelConfig {
            num_layers: 1,
            hidden_size: hidden,
            input_len: 10,
            output_len: 15,
            feature_count: 2,
            ..Default::default()
        }
    }

    #[test]
    fn zero_target_is_learned() {
        let config = ModelConfig {
            num_layers: 1,
            hidden_size: 4,
            ..Default::default()
        };
        let w = window(Matrix::zeros(67, 5), vec![0.0; 100]);
        let options = TrainOptions {
            iterations: 2000,
            ..Default::default()
        };
        let report = train(&config, &[w], &options).unwrap();
        assert_eq!(report.loss_history.len(), 2000);
        assert!(report.final_loss().unwrap() < 1e-4, "{:?}", report.final_loss());
    }

    #[test]
    fn zero_head_bias_saturates_on_wide_heads() {
        use crate::dataio::{build_dataset, default_start_date, CountMode, WindowSpec};
        let regions = crate::synthetic::logistic_corpus(12, default_start_date(), 101, 42);
        let ids: Vec<String> = regions.iter().map(|r| r.region_id.clone()).collect();
        let ds = build_dataset(&regions, &ids, &[], &WindowSpec::default(), CountMode::Daily).unwrap();
        let config = ModelConfig::default();
        let run = |head_bias_init| {
            let options = TrainOptions {
                iterations: 150,
                head_bias_init,
                ..Default::default()
            };
            train(&config, &ds.train, &options).unwrap().loss_history
        };
        let zero = run(HeadBiasInit::Zero);
        // stuck: the last 50 losses agree to 5 digits
        let tail = &zero[100..];
        assert!(tail.iter().all(|l| (l - tail[0]).abs() < 1e-5 * tail[0]), "{:?}", &tail[..3]);
        let fitted = run(HeadBiasInit::TargetMean);
        assert!(*fitted.last().unwrap() < 0.5 * tail[0]);
    }

    #[test]
    fn target_mean_bias_is_logit_of_column_means() {
        let config = small(2);
        let mut params = init_params(&config, 1).unwrap();
        let targets = Matrix::from_rows(&[&[0.2; 15][..], &[0.6; 15][..]]).unwrap();
        init_head_bias_from_targets(&mut params, &targets).unwrap();
        assert!(params.head_bias.iter().all(|b| (b - (0.4f64 / 0.6).ln()).abs() < 1e-12));
        assert!(init_head_bias_from_targets(&mut params, &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn linear_ramp_loss_drops_tenfold() {
        let config = ModelConfig {
            hidden_size: 10,
            ..small(10)
        };
        let windows: Vec<_> = (0..4)
            .map(|k| {
                let slope = 0.01 * (k + 1) as f64;
                let series: Vec<f64> = (0..15).map(|t| slope * t as f64 + 0.05).collect();
                let input = Matrix::from_vec(
                    10,
                    2,
                    (0..10).flat_map(|t| [series[t], 0.5]).collect(),
                )
                .unwrap();
                window(input, series)
            })
            .collect();
        let options = TrainOptions {
            iterations: 1500,
            ..Default::default()
        };
        let report = train(&config, &windows, &options).unwrap();
        let first = report.loss_history[0];
        let last = report.final_loss().unwrap();
        assert!(last < first / 10.0, "loss {first} -> {last}");
    }

    #[test]
    fn training_is_bit_reproducible() {
        let config = small(3);
        let input = Matrix::from_vec(10, 2, (0..20).map(|i| (i as f64 * 0.37).sin().abs()).collect()).unwrap();
        let w = window(input, (0..15).map(|t| t as f64 / 15.0).collect());
        let options = TrainOptions {
            iterations: 50,
            ..Default::default()
        };
        let a = train(&config, std::slice::from_ref(&w), &options).unwrap();
        let b = train(&config, std::slice::from_ref(&w), &options).unwrap();
        assert_eq!(a.loss_history, b.loss_history);
        assert_eq!(a.final_params, b.final_params);
    }

    #[test]
    fn nan_input_aborts_with_iteration() {
        let config = small(2);
        let mut input = Matrix::zeros(10, 2);
        input.set(3, 1, f64::NAN);
        let w = window(input, vec![0.5; 15]);
        let options = TrainOptions {
            iterations: 10,
            ..Default::default()
        };
        match train(&config, &[w], &options) {
            Err(Error::NonFinite { iteration, .. }) => assert_eq!(iteration, 0),
            other => panic!("expected non-finite abort, got {other:?}"),
        }
    }

    #[test]
    fn head_only_training_is_monotone() {
        // frozen recurrent weights + no dropout: a convex logistic-regression-like problem
        let config = ModelConfig {
            dropout_rate: 0.0,
            ..small(3)
        };
        let windows: Vec<_> = (0..3)
            .map(|k| {
                let input = Matrix::from_vec(10, 2, (0..20).map(|i| ((i + 7 * k) as f64 * 0.21).cos().abs()).collect()).unwrap();
                window(input, (0..15).map(|t| ((t + k) % 5) as f64 / 5.0 + 0.05).collect())
            })
            .collect();
        let options = TrainOptions {
            iterations: 1500,
            freeze_recurrent: true,
            ..Default::default()
        };
        let init = init_params(&config, config.seed).unwrap();
        let report = train(&config, &windows, &options).unwrap();
        assert_eq!(report.final_params.cells, init.cells);
        let h = &report.loss_history;
        for start in (0..h.len() - 500).step_by(100) {
            assert!(h[start + 500] <= h[start] + 1e-6, "loss rose over {start}..{}", start + 500);
        }
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let config = small(2);
        let mut g = init_params(&config, 1).unwrap();
        g.scale(100.0);
        assert!(clip_global_norm(&mut g, 5.0));
        assert!((g.squared_norm().sqrt() - 5.0).abs() < 1e-9);
        assert!(!clip_global_norm(&mut g, 10.0));
    }

    #[test]
    fn loss_csv_has_two_columns() {
        let mut buf = Vec::new();
        write_loss_csv(&mut buf, &[0.5, 0.25]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iteration,mse\n1,5e-1\n2,2.5e-1\n");
    }

    #[test]
    fn periodic_checkpoints_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let config = small(2);
        let w = window(Matrix::zeros(10, 2), vec![0.5; 15]);
        let options = TrainOptions {
            iterations: 4,
            checkpoint_every: Some(2),
            checkpoint_path: Some(path.clone()),
            ..Default::default()
        };
        let report = train(&config, &[w], &options).unwrap();
        let (_, saved) = checkpoint::load(&path).unwrap();
        assert_eq!(saved, report.final_params);
    }
}
