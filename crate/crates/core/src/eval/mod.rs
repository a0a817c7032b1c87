//! Scoring: RMSE on accumulated curves, multi-seed trial envelopes, architecture sweeps.

pub mod long_lag;

use std::fmt;
use std::io::Write;

use chrono::NaiveDate;
use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::forecast::{accumulate, predict_daily_batch};
use crate::nn::{CellKind, ModelConfig, NetworkParams};
use crate::train::{self, TrainOptions};

pub const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
pub const HIDDEN_GRID: [usize; 4] = [1, 5, 10, 30];
pub const LAYER_GRID: [usize; 4] = [1, 2, 3, 4];

/// Root mean squared error.
pub fn rmse(prediction: &[f64], actual: &[f64]) -> Result<f64> {
    if prediction.len() != actual.len() {
        return Err(Error::arg(format!(
            "prediction has {} values, actual {}",
            prediction.len(),
            actual.len()
        )));
    }
    if prediction.is_empty() {
        return Err(Error::arg("rmse of empty sequences"));
    }
    let sum: f64 = prediction
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    Ok((sum / prediction.len() as f64).sqrt())
}

/// Which days of the accumulated curves enter the RMSE.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RmseWindow {
    #[default]
    Full,
    /// Only days after the input window.
    Extrapolated,
}

/// Independently seeded predictions for one region and their envelope.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialSet {
    pub region_id: String,
    pub start_date: NaiveDate,
    pub seeds: Vec<u64>,
    /// Unscaled daily predictions, one per trial.
    pub per_trial_predictions: Vec<Vec<f64>>,
    pub per_trial_accumulated: Vec<Vec<f64>>,
    /// Pointwise mean, min and max of the accumulated curves.
    pub mean_curve: Vec<f64>,
    pub min_curve: Vec<f64>,
    pub max_curve: Vec<f64>,
    /// Empty for forecasts, which have no ground truth.
    pub actual_accumulated: Vec<f64>,
    pub per_trial_rmse: Vec<f64>,
    /// NaN when unscored.
    pub mean_rmse: f64,
}

impl TrialSet {
    /// `trials` holds `(seed, daily prediction)` pairs; `rmse_range` selects the
    /// days of the accumulated curves that are scored.
    pub fn from_predictions(
        region_id: &str,
        start_date: NaiveDate,
        actual_daily: &[f64],
        trials: Vec<(u64, Vec<f64>)>,
        rmse_range: (usize, usize),
    ) -> Result<Self> {
        let mut set = Self::unscored(region_id, start_date, trials)?;
        let len = set.mean_curve.len();
        if actual_daily.len() != len {
            return Err(Error::arg(
                "trial predictions and actual series differ in length",
            ));
        }
        let (lo, hi) = rmse_range;
        if lo >= hi || hi > len {
            return Err(Error::arg(format!("bad rmse range {lo}..{hi}")));
        }
        let actual_accumulated = accumulate(actual_daily);
        set.per_trial_rmse = set
            .per_trial_accumulated
            .iter()
            .map(|c| rmse(&c[lo..hi], &actual_accumulated[lo..hi]))
            .collect::<Result<Vec<_>>>()?;
        set.mean_rmse = set.per_trial_rmse.iter().sum::<f64>() / set.per_trial_rmse.len() as f64;
        set.actual_accumulated = actual_accumulated;
        Ok(set)
    }

    /// Envelope of `(seed, daily prediction)` trials without scoring.
    pub fn unscored(region_id: &str, start_date: NaiveDate, trials: Vec<(u64, Vec<f64>)>) -> Result<Self> {
        let first = trials
            .first()
            .ok_or_else(|| Error::arg("a trial set needs at least one trial"))?;
        let len = first.1.len();
        if len == 0 || trials.iter().any(|(_, p)| p.len() != len) {
            return Err(Error::arg("trial predictions must be non-empty and of equal length"));
        }
        let (seeds, per_trial_predictions): (Vec<u64>, Vec<Vec<f64>>) = trials.into_iter().unzip();
        let per_trial_accumulated: Vec<Vec<f64>> =
            per_trial_predictions.iter().map(|p| accumulate(p)).collect();
        let n = per_trial_accumulated.len() as f64;
        let mut mean_curve = vec![0.0; len];
        let mut min_curve = vec![f64::INFINITY; len];
        let mut max_curve = vec![f64::NEG_INFINITY; len];
        for curve in &per_trial_accumulated {
            for d in 0..len {
                mean_curve[d] += curve[d];
                min_curve[d] = min_curve[d].min(curve[d]);
                max_curve[d] = max_curve[d].max(curve[d]);
            }
        }
        for (m, (lo_v, hi_v)) in mean_curve.iter_mut().zip(min_curve.iter().zip(&max_curve)) {
            // clamp so rounding in the mean never leaves the envelope
            *m = (*m / n).clamp(*lo_v, *hi_v);
        }
        Ok(Self {
            region_id: region_id.to_string(),
            start_date,
            seeds,
            per_trial_predictions,
            per_trial_accumulated,
            mean_curve,
            min_curve,
            max_curve,
            actual_accumulated: Vec::new(),
            per_trial_rmse: Vec::new(),
            mean_rmse: f64::NAN,
        })
    }

    pub fn trial_count(&self) -> usize {
        self.seeds.len()
    }
}

/// Best / normal / worst cases by final accumulated value.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseClassification {
    /// Trial index with the lowest final value.
    pub best: usize,
    /// Trial index with the highest final value.
    pub worst: usize,
    pub best_curve: Vec<f64>,
    pub worst_curve: Vec<f64>,
    /// The mean curve.
    pub normal_curve: Vec<f64>,
}

pub fn classify_cases(t: &TrialSet) -> Result<CaseClassification> {
    if t.trial_count() < 2 {
        return Err(Error::arg("classification needs at least two trials"));
    }
    let finals: Vec<f64> = t
        .per_trial_accumulated
        .iter()
        .map(|c| *c.last().unwrap_or(&0.0))
        .collect();
    // first index wins ties, so equal finals give best == worst
    let best = (0..finals.len())
        .reduce(|a, b| if finals[b] < finals[a] { b } else { a })
        .expect("non-empty");
    let worst = (0..finals.len())
        .reduce(|a, b| if finals[b] > finals[a] { b } else { a })
        .expect("non-empty");
    Ok(CaseClassification {
        best,
        worst,
        best_curve: t.per_trial_accumulated[best].clone(),
        worst_curve: t.per_trial_accumulated[worst].clone(),
        normal_curve: t.mean_curve.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub seeds: Vec<u64>,
    pub train: TrainOptions,
    pub rmse_window: RmseWindow,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            seeds: DEFAULT_SEEDS.to_vec(),
            train: TrainOptions::default(),
            rmse_window: RmseWindow::Full,
        }
    }
}

fn rmse_range(config: &ModelConfig, window: RmseWindow) -> (usize, usize) {
    match window {
        RmseWindow::Full => (0, config.output_len),
        RmseWindow::Extrapolated => (config.input_len.min(config.output_len - 1), config.output_len),
    }
}

/// Scores already trained models (`(seed, params)`) on every validation region.
pub fn evaluate_models(
    config: &ModelConfig,
    models: &[(u64, NetworkParams)],
    dataset: &Dataset,
    window: RmseWindow,
) -> Result<Vec<TrialSet>> {
    if dataset.validation.is_empty() {
        return Ok(Vec::new());
    }
    let inputs: Vec<_> = dataset.validation.iter().map(|v| &v.window.input).collect();
    let mut per_model = Vec::with_capacity(models.len());
    for (seed, params) in models {
        per_model.push((*seed, predict_daily_batch(params, config, &dataset.scaler, &inputs)?));
    }
    dataset
        .validation
        .iter()
        .enumerate()
        .map(|(r, region)| {
            let trials = per_model
                .iter()
                .map(|(seed, preds)| (*seed, preds[r].clone()))
                .collect();
            TrialSet::from_predictions(
                &region.window.region_id,
                region.window.start_date,
                &region.actual_daily,
                trials,
                rmse_range(config, window),
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub seed: u64,
    pub final_loss: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct TrialRun {
    pub sets: Vec<TrialSet>,
    pub outcomes: Vec<TrialOutcome>,
    pub models: Vec<(u64, NetworkParams)>,
}

/// Trains one model per seed (concurrently), then scores every validation region.
/// Trials that diverge are reported and dropped; at least `min(3, seeds)` must survive.
pub fn run_trials(config: &ModelConfig, dataset: &Dataset, options: &EvalOptions) -> Result<TrialRun> {
    if options.seeds.is_empty() {
        return Err(Error::arg("run_trials needs at least one seed"));
    }
    let mut distinct = options.seeds.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() != options.seeds.len() {
        warn!("trial seeds repeat; repeated trials are identical");
    }
    let results: Vec<(u64, Result<train::TrainReport>)> = options
        .seeds
        .par_iter()
        .map(|&seed| {
            let cfg = ModelConfig {
                seed,
                ..config.clone()
            };
            (seed, train::train(&cfg, &dataset.train, &options.train))
        })
        .collect();
    let mut outcomes = Vec::with_capacity(results.len());
    let mut models = Vec::new();
    for (seed, result) in results {
        match result {
            Ok(report) => {
                outcomes.push(TrialOutcome {
                    seed,
                    final_loss: report.final_loss(),
                    error: None,
                });
                models.push((seed, report.final_params));
            }
            Err(e) => {
                warn!("trial with seed {seed} failed: {e}");
                outcomes.push(TrialOutcome {
                    seed,
                    final_loss: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    let required = options.seeds.len().min(3);
    if models.len() < required {
        return Err(Error::Internal(format!(
            "only {} of {} trials survived, need {required}",
            models.len(),
            options.seeds.len()
        )));
    }
    let sets = evaluate_models(config, &models, dataset, options.rmse_window)?;
    Ok(TrialRun {
        sets,
        outcomes,
        models,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Hidden,
    Layers,
    Cell,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Hidden => "hidden",
            SweepAxis::Layers => "layers",
            SweepAxis::Cell => "cell",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hidden" => Ok(SweepAxis::Hidden),
            "layers" => Ok(SweepAxis::Layers),
            "cell" => Ok(SweepAxis::Cell),
            other => Err(Error::arg(format!("unknown sweep axis '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub label: String,
    /// Mean over trials and validation regions.
    pub mean_rmse: f64,
    /// Per-trial RMSE averaged over validation regions, in seed order.
    pub trial_rmse: Vec<f64>,
    pub parameter_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([self.axis.name(), "mean_rmse", "parameters"])?;
        for r in &self.rows {
            w.write_record([r.label.clone(), r.mean_rmse.to_string(), r.parameter_count.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<sweep csv>", e))?;
        Ok(())
    }
}

impl fmt::Display for SweepTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>8} | {:>12} | {:>10}", self.axis.name(), "mean RMSE", "parameters")?;
        writeln!(f, "{:->8}-+-{:->12}-+-{:->10}", "", "", "")?;
        for r in &self.rows {
            writeln!(f, "{:>8} | {:>12.2} | {:>10}", r.label, r.mean_rmse, r.parameter_count)?;
        }
        Ok(())
    }
}

fn score(config: &ModelConfig, dataset: &Dataset, options: &EvalOptions, label: String) -> Result<SweepRow> {
    let run = run_trials(config, dataset, options)?;
    if run.sets.is_empty() {
        return Err(Error::arg("sweeps need at least one validation region"));
    }
    let trials = run.models.len();
    let trial_rmse: Vec<f64> = (0..trials)
        .map(|k| run.sets.iter().map(|s| s.per_trial_rmse[k]).sum::<f64>() / run.sets.len() as f64)
        .collect();
    let mean_rmse = run.sets.iter().map(|s| s.mean_rmse).sum::<f64>() / run.sets.len() as f64;
    Ok(SweepRow {
        label,
        mean_rmse,
        trial_rmse,
        parameter_count: config.parameter_count(),
    })
}

fn sorted_unique(values: &[usize]) -> Result<Vec<usize>> {
    if values.is_empty() {
        return Err(Error::arg("sweep grid is empty"));
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    v.dedup();
    if v.len() != values.len() {
        warn!("duplicate sweep values removed: {values:?} -> {v:?}");
    }
    Ok(v)
}

/// Mean RMSE per hidden size with `fixed_layers` layers, sorted by hidden size.
pub fn sweep_hidden_states(
    values: &[usize],
    fixed_layers: usize,
    base: &ModelConfig,
    dataset: &Dataset,
    options: &EvalOptions,
) -> Result<SweepTable> {
    let rows = sorted_unique(values)?
        .into_iter()
        .map(|hidden| {
            let cfg = ModelConfig {
                hidden_size: hidden,
                num_layers: fixed_layers,
                ..base.clone()
            };
            score(&cfg, dataset, options, hidden.to_string())
        })
        .collect::<Result<_>>()?;
    Ok(SweepTable {
        axis: SweepAxis::Hidden,
        rows,
    })
}

/// Mean RMSE per layer count with `fixed_hidden` units per layer, sorted by depth.
pub fn sweep_layers(
    values: &[usize],
    fixed_hidden: usize,
    base: &ModelConfig,
    dataset: &Dataset,
    options: &EvalOptions,
) -> Result<SweepTable> {
    let rows = sorted_unique(values)?
        .into_iter()
        .map(|layers| {
            let cfg = ModelConfig {
                hidden_size: fixed_hidden,
                num_layers: layers,
                ..base.clone()
            };
            score(&cfg, dataset, options, layers.to_string())
        })
        .collect::<Result<_>>()?;
    Ok(SweepTable {
        axis: SweepAxis::Layers,
        rows,
    })
}

/// RNN vs LSTM with otherwise identical configs. The two configs must differ in
/// cell kind and nothing else; their differing parameter counts are reported.
pub fn compare_cells(
    pair: (&ModelConfig, &ModelConfig),
    dataset: &Dataset,
    options: &EvalOptions,
) -> Result<SweepTable> {
    let (a, b) = pair;
    if a.cell_kind == b.cell_kind {
        return Err(Error::arg("compare_cells needs one LSTM and one RNN config"));
    }
    if (ModelConfig { cell_kind: b.cell_kind, ..a.clone() }) != *b {
        return Err(Error::arg(
            "compared configs must be identical except for the cell kind",
        ));
    }
    let mut pair = [a, b];
    pair.sort_by_key(|c| match c.cell_kind {
        CellKind::Rnn => 0,
        CellKind::Lstm => 1,
    });
    log::info!(
        "cell comparison: rnn has {} parameters, lstm {}",
        pair[0].parameter_count(),
        pair[1].parameter_count()
    );
    let rows = pair
        .iter()
        .map(|cfg| score(cfg, dataset, options, cfg.cell_kind.to_string()))
        .collect::<Result<_>>()?;
    Ok(SweepTable {
        axis: SweepAxis::Cell,
        rows,
    })
}
