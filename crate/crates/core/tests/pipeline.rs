use chrono::NaiveDate;
use covid_lstm::dataio::{build_dataset, load_regions, CountMode, CsvSchema, WindowSpec};
use covid_lstm::eval::{evaluate_models, RmseWindow};
use covid_lstm::forecast::{forecast_region, AugmentRule, ContinuationSource, ForecastOptions};
use covid_lstm::nn::checkpoint;
use covid_lstm::synthetic::{logistic_corpus, write_jhu_tables};
use covid_lstm::train::{train, TrainOptions};
use covid_lstm::ModelConfig;

fn start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 22).unwrap()
}

#[test]
fn csv_to_forecast() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = logistic_corpus(8, start(), 101, 5);
    let paths = write_jhu_tables(&corpus, dir.path()).unwrap();
    let regions = load_regions(&paths, &CsvSchema::default()).unwrap();
    assert_eq!(regions.len(), 8);
    for (loaded, written) in regions.iter().zip(&corpus) {
        assert_eq!(loaded.region_id, written.region_id);
        assert_eq!(loaded.confirmed, written.confirmed);
    }

    let names: Vec<String> = regions.iter().map(|r| r.region_id.clone()).collect();
    let spec = WindowSpec::default();
    let dataset = build_dataset(&regions, &names[..6], &names[6..], &spec, CountMode::Daily).unwrap();
    assert_eq!(dataset.train.len(), 6);
    assert_eq!(dataset.validation.len(), 2);

    let config = ModelConfig {
        num_layers: 1,
        hidden_size: 4,
        ..ModelConfig::default()
    };
    let options = TrainOptions {
        iterations: 30,
        ..TrainOptions::default()
    };
    let models: Vec<_> = [1u64, 2]
        .iter()
        .map(|&seed| {
            let cfg = ModelConfig { seed, ..config.clone() };
            let report = train(&cfg, &dataset.train, &options).unwrap();
            assert!(report.final_loss().unwrap().is_finite());
            (seed, report.final_params)
        })
        .collect();

    let ckpt = dir.path().join("seed_1.ckpt");
    checkpoint::save(&ckpt, &config, &models[0].1).unwrap();
    let (back_cfg, back_params) = checkpoint::load_compatible(&ckpt, &config).unwrap();
    assert_eq!(back_cfg, config);
    assert_eq!(back_params, models[0].1);

    let sets = evaluate_models(&config, &models, &dataset, RmseWindow::Full).unwrap();
    assert_eq!(sets.len(), 2);
    for set in &sets {
        assert_eq!(set.trial_count(), 2);
        assert!(set.mean_rmse.is_finite() && set.mean_rmse >= 0.0);
        assert!(set.mean_curve.windows(2).all(|w| w[1] >= w[0]));
    }

    let anchor = start() + chrono::Duration::days(100);
    let fc = forecast_region(
        &models,
        &config,
        &dataset.scaler,
        &regions[6],
        &ForecastOptions {
            anchor_date: anchor,
            horizon: 32,
            rule: AugmentRule::Additive,
            source: ContinuationSource::Mean,
            mode: CountMode::Daily,
        },
    )
    .unwrap();
    assert_eq!(fc.continuation.accumulated.len(), 33);
    let total: f64 = regions[6].confirmed.last().copied().unwrap();
    assert_eq!(fc.continuation.accumulated[0], total);
    assert!(fc.continuation.accumulated.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = ModelConfig {
        num_layers: 1,
        hidden_size: 3,
        ..ModelConfig::default()
    };
    let params = covid_lstm::nn::init_params(&config, 4).unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&path, &config, &params).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&path, &bytes).unwrap();
    assert!(checkpoint::load(&path).is_err());

    let wider = ModelConfig { hidden_size: 4, ..config.clone() };
    checkpoint::save(&path, &config, &params).unwrap();
    assert!(checkpoint::load_compatible(&path, &wider).is_err());
}
