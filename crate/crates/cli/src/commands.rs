//! Subcommand bodies. Every command reads the data and checkpoints it needs before
//! writing anything, and every output file is written atomically.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use covid_lstm::dataio::{build_dataset, load_regions, select_regions, Dataset, RegionSeries};
use covid_lstm::eval::{compare_cells, evaluate_models, sweep_hidden_states, sweep_layers, SweepAxis, TrialSet};
use covid_lstm::forecast::{emit_outputs, forecast_region, DatedSeries, ForecastOptions, RegionReport};
use covid_lstm::nn::checkpoint;
use covid_lstm::train::{self, grad_check, standard_grid, write_loss_csv};
use covid_lstm::{CellKind, ModelConfig, NetworkParams};
use log::{info, warn};
use rayon::prelude::*;

use crate::config::{ConfigError, RunConfig};

/// Gradient checks pass below this relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    checkpoint::write_atomic(path, bytes)?;
    Ok(())
}

/// File-name-safe form of a region id.
pub fn slug(region: &str) -> String {
    region
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

fn load_data(cfg: &RunConfig) -> Result<(Vec<RegionSeries>, Dataset)> {
    let regions = load_regions(&cfg.data_paths(), &cfg.data.schema)?;
    let dataset = build_dataset(
        &regions,
        &cfg.regions.train,
        &cfg.regions.validation,
        &cfg.window_spec(),
        cfg.data.count_mode,
    )?;
    info!(
        "{} training windows, {} validation regions",
        dataset.train.len(),
        dataset.validation.len()
    );
    Ok((regions, dataset))
}

/// Checkpoints for every configured seed, or `explicit` paths when given.
fn load_models(cfg: &RunConfig, explicit: &[PathBuf]) -> Result<Vec<(u64, NetworkParams)>> {
    let paths: Vec<PathBuf> = if explicit.is_empty() {
        cfg.eval.seeds.iter().map(|&s| cfg.checkpoint_path(s)).collect()
    } else {
        explicit.to_vec()
    };
    paths
        .iter()
        .map(|p| {
            let (stored, params) = checkpoint::load_compatible(p, &cfg.model)
                .with_context(|| format!("loading checkpoint {}", p.display()))?;
            Ok((stored.seed, params))
        })
        .collect()
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let (_, dataset) = load_data(cfg)?;
    let options = cfg.training.clone();
    let reports: Vec<_> = cfg
        .eval
        .seeds
        .par_iter()
        .map(|&seed| {
            let model = ModelConfig {
                seed,
                ..cfg.model.clone()
            };
            let mut options = options.clone();
            if options.checkpoint_every.is_some() {
                options.checkpoint_path = Some(cfg.checkpoint_path(seed).with_extension("partial.ckpt"));
            }
            train::train(&model, &dataset.train, &options).map(|r| (model, r))
        })
        .collect::<covid_lstm::Result<_>>()?;
    let mut summary = String::from("seed,final_mse,clipped_steps\n");
    for (model, report) in &reports {
        write_file(
            &cfg.checkpoint_path(model.seed),
            &checkpoint::to_bytes(model, &report.final_params)?,
        )?;
        let mut loss = Vec::new();
        write_loss_csv(&mut loss, &report.loss_history)?;
        write_file(
            &cfg.output_dir.join("loss").join(format!("seed_{}.csv", model.seed)),
            &loss,
        )?;
        let final_mse = report.final_loss().map_or(String::new(), |l| format!("{l:e}"));
        writeln!(summary, "{},{final_mse},{}", model.seed, report.clipped_steps)?;
        info!(
            "seed {}: final mse {final_mse} in {:.1}s",
            model.seed, report.wall_time
        );
    }
    write_file(&cfg.output_dir.join("train_summary.csv"), summary.as_bytes())?;
    println!(
        "trained {} model(s); checkpoints in {}",
        reports.len(),
        cfg.output_dir.join("checkpoints").display()
    );
    Ok(())
}

fn rmse_table(sets: &[TrialSet]) -> Result<String> {
    let mut s = String::from("region,trial,rmse\n");
    for set in sets {
        for (seed, r) in set.seeds.iter().zip(&set.per_trial_rmse) {
            writeln!(s, "{},{seed},{r}", set.region_id)?;
        }
        writeln!(s, "{},mean,{}", set.region_id, set.mean_rmse)?;
    }
    Ok(s)
}

pub fn validate(cfg: &RunConfig, checkpoints: &[PathBuf]) -> Result<Vec<TrialSet>> {
    if cfg.regions.validation.is_empty() {
        warn!("validation region list is empty; nothing to do");
        return Ok(Vec::new());
    }
    let models = load_models(cfg, checkpoints)?;
    let (_, dataset) = load_data(cfg)?;
    let sets = evaluate_models(&cfg.model, &models, &dataset, cfg.eval.rmse_window)?;
    let dir = cfg.output_dir.join("validation");
    for set in &sets {
        let actual = DatedSeries::new(set.start_date, set.actual_accumulated.clone());
        let report = RegionReport {
            region_id: &set.region_id,
            trials: set,
            actual: &actual,
            continuation: None,
        };
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        emit_outputs(&report, &dir.join(slug(&set.region_id)))?;
        println!("{:<24} mean RMSE {:>12.2}", set.region_id, set.mean_rmse);
    }
    write_file(&dir.join("rmse.csv"), rmse_table(&sets)?.as_bytes())?;
    Ok(sets)
}

pub fn sweep(cfg: &RunConfig, axis: SweepAxis) -> Result<()> {
    let (_, dataset) = load_data(cfg)?;
    let options = cfg.eval_options();
    let s = &cfg.sweep;
    let table = match axis {
        SweepAxis::Hidden => sweep_hidden_states(&s.hidden, s.fixed_layers, &cfg.model, &dataset, &options)?,
        SweepAxis::Layers => sweep_layers(&s.layers, s.fixed_hidden, &cfg.model, &dataset, &options)?,
        SweepAxis::Cell => {
            let base = ModelConfig {
                num_layers: s.cell_layers,
                ..cfg.model.clone()
            };
            let lstm = ModelConfig {
                cell_kind: CellKind::Lstm,
                ..base.clone()
            };
            let rnn = ModelConfig {
                cell_kind: CellKind::Rnn,
                ..base
            };
            compare_cells((&rnn, &lstm), &dataset, &options)?
        }
    };
    let mut csv = Vec::new();
    table.write_csv(&mut csv)?;
    let path = cfg.output_dir.join(format!("sweep_{}.csv", axis.name()));
    write_file(&path, &csv)?;
    print!("{table}");
    println!("written to {}", path.display());
    Ok(())
}

pub fn forecast(cfg: &RunConfig, checkpoints: &[PathBuf]) -> Result<()> {
    let models = load_models(cfg, checkpoints)?;
    let (regions, dataset) = load_data(cfg)?;
    let selectors = if cfg.forecast.regions.is_empty() {
        &cfg.regions.validation
    } else {
        &cfg.forecast.regions
    };
    let targets = select_regions(&regions, selectors);
    if targets.is_empty() {
        bail!(ConfigError("no region selected for forecasting".into()));
    }
    let options = ForecastOptions {
        anchor_date: cfg.forecast.anchor_date,
        horizon: cfg.forecast.horizon,
        rule: cfg.forecast.rule,
        source: cfg.forecast.source,
        mode: cfg.data.count_mode,
    };
    let forecasts = targets
        .iter()
        .map(|series| forecast_region(&models, &cfg.model, &dataset.scaler, series, &options))
        .collect::<covid_lstm::Result<Vec<_>>>()?;
    let dir = cfg.output_dir.join("forecast");
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for f in &forecasts {
        emit_outputs(&f.report(), &dir.join(slug(&f.trials.region_id)))?;
        let c = &f.continuation;
        println!(
            "{:<24} {} -> {}: {:.0} -> {:.0}",
            f.trials.region_id,
            c.anchor_date,
            c.dates().last().unwrap_or(c.anchor_date),
            c.accumulated[0],
            c.accumulated.last().copied().unwrap_or(0.0)
        );
    }
    Ok(())
}

/// Returns whether every configuration passed.
pub fn gradcheck(trials: usize) -> Result<bool> {
    let grid = standard_grid();
    let reports = grid
        .par_iter()
        .map(|c| grad_check(c, trials))
        .collect::<covid_lstm::Result<Vec<_>>>()?;
    let mut ok = true;
    println!("{:>5} {:>7} {:>7} {:>14} {:>8}", "cell", "layers", "hidden", "max rel err", "status");
    for (c, r) in grid.iter().zip(&reports) {
        let pass = r.max_relative_error < GRADCHECK_TOLERANCE;
        ok &= pass;
        println!(
            "{:>5} {:>7} {:>7} {:>14.3e} {:>8}",
            c.cell_kind.name(),
            c.num_layers,
            c.hidden_size,
            r.max_relative_error,
            if pass { "ok" } else { "FAIL" }
        );
    }
    Ok(ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs_are_file_safe() {
        assert_eq!(slug("Korea, South"), "korea__south");
        assert_eq!(slug("China/Hubei"), "china_hubei");
    }
}
