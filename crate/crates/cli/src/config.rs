//! Run configuration: a TOML document whose values command-line flags override.

use std::path::{Path, PathBuf};

use anyhow::bail;
use chrono::NaiveDate;
use covid_lstm::dataio::{default_start_date, CountMode, CsvSchema, DataPaths, WindowSpec};
use covid_lstm::eval::{EvalOptions, RmseWindow, DEFAULT_SEEDS, HIDDEN_GRID, LAYER_GRID};
use covid_lstm::forecast::{AugmentRule, ContinuationSource};
use covid_lstm::nn::CellKind;
use covid_lstm::train::TrainOptions;
use covid_lstm::ModelConfig;
use serde::{Deserialize, Serialize};

/// Training regions. Starred entries of the original list (China, Australia,
/// France, Netherlands, Denmark) are country selectors that pull in every province.
pub const DEFAULT_TRAIN_REGIONS: [&str; 46] = [
    "China", "Germany", "Australia", "Brazil", "US", "Belgium", "Spain", "Italy", "France",
    "Malaysia", "Vietnam", "Iran", "United Arab Emirates", "Singapore", "Thailand",
    "Korea, South", "Japan", "Netherlands", "Russia", "Chile", "India", "Greece", "Mexico",
    "Mongolia", "Philippines", "New Zealand", "South Africa", "Botswana", "Uruguay",
    "Paraguay", "Madagascar", "Peru", "Portugal", "Denmark", "Hungary", "Kenya", "Ireland",
    "Israel", "Norway", "Mauritius", "Rwanda", "Iceland", "Kazakhstan", "Switzerland",
    "Cyprus", "Zimbabwe",
];

pub const DEFAULT_VALIDATION_REGIONS: [&str; 4] = ["Indonesia", "Sweden", "Saudi Arabia", "Argentina"];

/// Thread-count override for the trial and sweep pool.
pub const THREADS_ENV: &str = "COVID_LSTM_THREADS";

/// A configuration or input problem; maps to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub confirmed: PathBuf,
    pub deaths: PathBuf,
    pub recovered: PathBuf,
    pub start_date: NaiveDate,
    pub count_mode: CountMode,
    pub schema: CsvSchema,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            confirmed: "data/time_series_covid19_confirmed_global.csv".into(),
            deaths: "data/time_series_covid19_deaths_global.csv".into(),
            recovered: "data/time_series_covid19_recovered_global.csv".into(),
            start_date: default_start_date(),
            count_mode: CountMode::Daily,
            schema: CsvSchema::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionsSection {
    pub train: Vec<String>,
    pub validation: Vec<String>,
}

impl Default for RegionsSection {
    fn default() -> Self {
        Self {
            train: DEFAULT_TRAIN_REGIONS.iter().map(|s| s.to_string()).collect(),
            validation: DEFAULT_VALIDATION_REGIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub seeds: Vec<u64>,
    pub rmse_window: RmseWindow,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            seeds: DEFAULT_SEEDS.to_vec(),
            rmse_window: RmseWindow::Full,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub hidden: Vec<usize>,
    pub layers: Vec<usize>,
    /// Depth used while sweeping hidden sizes.
    pub fixed_layers: usize,
    /// Width used while sweeping depth.
    pub fixed_hidden: usize,
    /// Depth of both networks in the cell comparison.
    pub cell_layers: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            hidden: HIDDEN_GRID.to_vec(),
            layers: LAYER_GRID.to_vec(),
            fixed_layers: 4,
            fixed_hidden: 30,
            cell_layers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastSection {
    pub anchor_date: NaiveDate,
    pub horizon: usize,
    pub rule: AugmentRule,
    pub source: ContinuationSource,
    /// Regions to forecast; empty means the validation regions.
    pub regions: Vec<String>,
}

impl Default for ForecastSection {
    fn default() -> Self {
        Self {
            anchor_date: NaiveDate::from_ymd_opt(2020, 5, 1).expect("valid date"),
            horizon: 32,
            rule: AugmentRule::Additive,
            source: ContinuationSource::Mean,
            regions: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub data: DataSection,
    pub regions: RegionsSection,
    pub model: ModelConfig,
    pub training: TrainOptions,
    pub eval: EvalSection,
    pub sweep: SweepSection,
    pub forecast: ForecastSection,
}

/// Flag values that override the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub out: Option<PathBuf>,
    pub iterations: Option<usize>,
    pub hidden: Option<usize>,
    pub layers: Option<usize>,
    pub cell: Option<CellKind>,
    pub anchor_date: Option<NaiveDate>,
}

impl RunConfig {
    /// Reads `path`, or the defaults when no file is given. Relative paths in the
    /// file resolve against the working directory.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            let mut cfg = RunConfig::default();
            cfg.output_dir = "out".into();
            return Ok(cfg);
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| ConfigError(format!("invalid config {}: {e}", path.display())))?;
        if cfg.output_dir.as_os_str().is_empty() {
            cfg.output_dir = "out".into();
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
        if let Some(n) = o.iterations {
            self.training.iterations = n;
        }
        if let Some(h) = o.hidden {
            self.model.hidden_size = h;
        }
        if let Some(l) = o.layers {
            self.model.num_layers = l;
        }
        if let Some(c) = o.cell {
            self.model.cell_kind = c;
        }
        if let Some(d) = o.anchor_date {
            self.forecast.anchor_date = d;
        }
        if o.seed.is_some() || o.trials.is_some() {
            let base = o.seed.or(self.eval.seeds.first().copied()).unwrap_or(1);
            let n = o.trials.unwrap_or(self.eval.seeds.len().max(1)) as u64;
            self.eval.seeds = (base..base + n).collect();
        }
    }

    /// Checks invariants that do not need the data files.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.model
            .validate()
            .map_err(|e| ConfigError(format!("model: {e}")))?;
        if self.eval.seeds.is_empty() {
            bail!(ConfigError("at least one trial seed is required".into()));
        }
        if let Some(r) = self
            .regions
            .train
            .iter()
            .find(|r| self.regions.validation.contains(r))
        {
            bail!(ConfigError(format!(
                "region '{r}' is listed for both training and validation"
            )));
        }
        for p in [&self.data.confirmed, &self.data.deaths, &self.data.recovered] {
            if !p.is_file() {
                bail!(ConfigError(format!("data file not found: {}", p.display())));
            }
        }
        Ok(())
    }

    pub fn data_paths(&self) -> DataPaths {
        DataPaths {
            confirmed: self.data.confirmed.clone(),
            deaths: self.data.deaths.clone(),
            recovered: self.data.recovered.clone(),
        }
    }

    pub fn window_spec(&self) -> WindowSpec {
        WindowSpec {
            start: self.data.start_date,
            input_days: self.model.input_len,
            output_days: self.model.output_len,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            seeds: self.eval.seeds.clone(),
            train: self.training.clone(),
            rmse_window: self.eval.rmse_window,
        }
    }

    pub fn checkpoint_path(&self, seed: u64) -> PathBuf {
        self.output_dir.join("checkpoints").join(format!("seed_{seed}.ckpt"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_config() -> &'static str {
        include_str!("../../../config/default.toml")
    }

    #[test]
    fn example_config_matches_defaults() {
        let cfg: RunConfig = toml::from_str(example_config()).unwrap();
        let mut expected = RunConfig::default();
        expected.output_dir = "out".into();
        assert_eq!(cfg, expected);
    }

    #[test]
    fn seed_and_trials_flags_define_seed_range() {
        let mut cfg = RunConfig::default();
        cfg.apply(&Overrides {
            seed: Some(7),
            ..Default::default()
        });
        assert_eq!(cfg.eval.seeds, vec![7, 8, 9, 10, 11]);
        cfg.apply(&Overrides {
            trials: Some(2),
            ..Default::default()
        });
        assert_eq!(cfg.eval.seeds, vec![7, 8]);
    }

    #[test]
    fn overlapping_regions_rejected() {
        let mut cfg = RunConfig::default();
        cfg.regions.validation.push("Italy".into());
        let err = cfg.validate().unwrap_err();
        assert!(err.downcast_ref::<ConfigError>().is_some());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("[model]\nhiden_size = 3\n").is_err());
    }

    #[test]
    fn default_training_list_has_every_named_region_once() {
        let mut v = DEFAULT_TRAIN_REGIONS.to_vec();
        v.sort_unstable();
        v.dedup();
        assert_eq!(v.len(), DEFAULT_TRAIN_REGIONS.len());
    }
}
