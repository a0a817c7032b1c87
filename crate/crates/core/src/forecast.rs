//! Turning model outputs into growth curves: accumulation, future prediction,
//! the cut-and-augment continuation, and CSV / SVG emission.

use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::dataio::{CountMode, Feature, FeatureScaler, RegionFeatures, RegionSeries};
use crate::error::{Error, Result};
use crate::eval::{classify_cases, TrialSet};
use crate::linalg::Matrix;
use crate::nn::{checkpoint, forward_batch, Mode, ModelConfig, NetworkParams, SequenceBatch};
use crate::plot::{Band, Chart, Line};

/// Running prefix sum.
pub fn accumulate(daily: &[f64]) -> Vec<f64> {
    daily
        .iter()
        .scan(0.0, |acc, d| {
            *acc += d;
            Some(*acc)
        })
        .collect()
}

/// A series of daily values anchored on a calendar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatedSeries {
    pub start: NaiveDate,
    pub values: Vec<f64>,
}

impl DatedSeries {
    pub fn new(start: NaiveDate, values: Vec<f64>) -> Self {
        Self { start, values }
    }

    pub fn date(&self, i: usize) -> NaiveDate {
        self.start + Duration::days(i as i64)
    }

    pub fn end(&self) -> Option<NaiveDate> {
        (!self.values.is_empty()).then(|| self.date(self.values.len() - 1))
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let offset = (date - self.start).num_days();
        (offset >= 0 && (offset as usize) < self.values.len()).then_some(offset as usize)
    }
}

/// Unscaled daily confirmed predictions (floored at 0) for windows that are already scaled.
pub fn predict_daily_batch(
    params: &NetworkParams,
    config: &ModelConfig,
    scaler: &FeatureScaler,
    scaled_inputs: &[&Matrix],
) -> Result<Vec<Vec<f64>>> {
    let batch = SequenceBatch::from_sequences(scaled_inputs)?;
    // eval mode never draws from the random source
    let mut unused = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let cache = forward_batch(params, config, &batch, Mode::Eval, &mut unused)?;
    let confirmed = Feature::Confirmed as usize;
    Ok((0..cache.output.rows())
        .map(|b| {
            cache
                .output
                .row(b)
                .iter()
                .map(|&p| scaler.inverse_value(confirmed, p).max(0.0))
                .collect()
        })
        .collect())
}

/// Predicts `output_len` days of daily confirmed cases from the last `input_len`
/// rows of an unscaled feature matrix, which is scaled with the training scaler.
pub fn predict_future(
    params: &NetworkParams,
    config: &ModelConfig,
    scaler: &FeatureScaler,
    recent_input: &Matrix,
) -> Result<Vec<f64>> {
    if recent_input.rows() < config.input_len {
        return Err(Error::arg(format!(
            "prediction needs {} days of history, got {}",
            config.input_len,
            recent_input.rows()
        )));
    }
    let window = recent_input.slice_rows(recent_input.rows() - config.input_len, recent_input.rows());
    let scaled = scaler.transform(&window)?;
    Ok(predict_daily_batch(params, config, scaler, &[&scaled])?.remove(0))
}

/// How the cut prediction is brought to the level of the actual curve.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentRule {
    /// Add a constant so the curves meet; daily increments are unchanged.
    #[default]
    Additive,
    /// Scale the cumulative prediction so the curves meet; daily increments scale too.
    Multiplicative,
}

/// A prediction continued from the last observed cumulative total.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Continuation {
    /// Last day with actual data.
    pub anchor_date: NaiveDate,
    /// Predicted daily increments for the days after the anchor.
    pub raw_segment: Vec<f64>,
    /// The same increments after augmentation.
    pub shifted_segment: Vec<f64>,
    /// Cumulative continuation from the anchor (index 0, equal to the actual total) onward.
    pub accumulated: Vec<f64>,
    /// Additive offset, or the scale factor under [`AugmentRule::Multiplicative`].
    pub adjustment: f64,
    pub rule: AugmentRule,
}

impl Continuation {
    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        (0..self.accumulated.len()).map(|i| self.anchor_date + Duration::days(i as i64))
    }
}

/// Cuts the cumulative prediction at the last actual date and shifts the remainder so
/// it starts from the actual final total. `horizon` limits the number of days kept
/// after the anchor.
pub fn cut_and_augment(
    prediction_accum: &DatedSeries,
    actual_accum: &DatedSeries,
    rule: AugmentRule,
    horizon: Option<usize>,
) -> Result<Continuation> {
    let anchor_date = actual_accum
        .end()
        .ok_or_else(|| Error::arg("actual curve is empty"))?;
    let cut = prediction_accum.index_of(anchor_date).ok_or_else(|| {
        Error::arg(format!(
            "prediction calendar does not cover the last actual date {anchor_date}"
        ))
    })?;
    let actual_final = *actual_accum.values.last().expect("non-empty");
    let at_cut = prediction_accum.values[cut];
    let available = prediction_accum.values.len() - cut - 1;
    let days = horizon.map_or(available, |h| h.min(available));
    let tail = &prediction_accum.values[cut..=cut + days];
    let (adjustment, accumulated): (f64, Vec<f64>) = match rule {
        AugmentRule::Additive => {
            let offset = actual_final - at_cut;
            (offset, tail.iter().map(|v| v + offset).collect())
        }
        AugmentRule::Multiplicative => {
            if at_cut <= 0.0 {
                return Err(Error::arg(
                    "multiplicative augmentation needs a positive prediction at the cut",
                ));
            }
            let scale = actual_final / at_cut;
            (scale, tail.iter().map(|v| v * scale).collect())
        }
    };
    let mut accumulated = accumulated;
    // exact join, free of rounding in the offset arithmetic
    accumulated[0] = actual_final;
    let diff = |v: &[f64]| v.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>();
    Ok(Continuation {
        anchor_date,
        raw_segment: diff(tail),
        shifted_segment: diff(&accumulated),
        accumulated,
        adjustment,
        rule,
    })
}

/// Which prediction is continued past the anchor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContinuationSource {
    #[default]
    Mean,
    /// Trial with the lowest final total.
    Best,
    /// Trial with the highest final total.
    Worst,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForecastOptions {
    pub anchor_date: NaiveDate,
    /// Days continued past the anchor.
    pub horizon: usize,
    pub rule: AugmentRule,
    pub source: ContinuationSource,
    pub mode: CountMode,
}

/// A region's forecast: trial envelope from the window ending at the anchor, the
/// observed cumulative curve up to the anchor, and the continuation.
#[derive(Clone, Debug)]
pub struct RegionForecast {
    pub trials: TrialSet,
    pub actual: DatedSeries,
    pub continuation: Continuation,
}

impl RegionForecast {
    pub fn report(&self) -> RegionReport<'_> {
        RegionReport {
            region_id: &self.trials.region_id,
            trials: &self.trials,
            actual: &self.actual,
            continuation: Some(&self.continuation),
        }
    }
}

/// Predicts from the `input_len` days ending at the anchor with every model and
/// continues the chosen prediction from the observed total.
pub fn forecast_region(
    models: &[(u64, NetworkParams)],
    config: &ModelConfig,
    scaler: &FeatureScaler,
    series: &RegionSeries,
    options: &ForecastOptions,
) -> Result<RegionForecast> {
    let anchor = options.anchor_date;
    let region_err = |message: String| Error::Region {
        region: series.region_id.clone(),
        message,
    };
    let end = series
        .index_of(anchor)
        .ok_or_else(|| region_err(format!("no data for anchor date {anchor}")))?;
    if end + 1 < config.input_len {
        let first = series.dates.first().copied().unwrap_or(anchor);
        return Err(region_err(format!(
            "forecasting from {anchor} needs {} days of history ending at the anchor (from {}), data starts {first}",
            config.input_len,
            anchor - Duration::days(config.input_len as i64 - 1)
        )));
    }
    let features = RegionFeatures::from_series(series, options.mode).features;
    let history = features.slice_rows(0, end + 1);
    let trials = models
        .iter()
        .map(|(seed, params)| Ok((*seed, predict_future(params, config, scaler, &history)?)))
        .collect::<Result<Vec<_>>>()?;
    let window_start = anchor - Duration::days(config.input_len as i64 - 1);
    let set = TrialSet::unscored(&series.region_id, window_start, trials)?;
    let curve = match options.source {
        ContinuationSource::Mean => set.mean_curve.clone(),
        ContinuationSource::Best => classify_cases(&set)?.best_curve,
        ContinuationSource::Worst => classify_cases(&set)?.worst_curve,
    };
    let actual = DatedSeries::new(series.dates[0], series.confirmed[..=end].to_vec());
    let continuation = cut_and_augment(
        &DatedSeries::new(window_start, curve),
        &actual,
        options.rule,
        Some(options.horizon),
    )?;
    if continuation.accumulated.len() < options.horizon + 1 {
        return Err(region_err(format!(
            "model output reaches only {} days past the anchor, {} requested",
            continuation.accumulated.len() - 1,
            options.horizon
        )));
    }
    Ok(RegionForecast {
        trials: set,
        actual,
        continuation,
    })
}

/// Everything plotted and tabulated for one region.
#[derive(Clone, Debug)]
pub struct RegionReport<'a> {
    pub region_id: &'a str,
    pub trials: &'a TrialSet,
    /// Actual cumulative curve.
    pub actual: &'a DatedSeries,
    pub continuation: Option<&'a Continuation>,
}

/// Long format `region,trial,day,daily_pred,accum_pred`: one row per trial and day,
/// then `mean`, `min` and `max` envelope rows.
pub fn write_trial_csv<W: Write>(out: W, set: &TrialSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["region", "trial", "day", "daily_pred", "accum_pred"])?;
    for (k, daily) in set.per_trial_predictions.iter().enumerate() {
        let accum = &set.per_trial_accumulated[k];
        for (d, (x, a)) in daily.iter().zip(accum).enumerate() {
            w.write_record([
                set.region_id.clone(),
                (k + 1).to_string(),
                (d + 1).to_string(),
                x.to_string(),
                a.to_string(),
            ])?;
        }
    }
    for (name, curve) in [
        ("mean", &set.mean_curve),
        ("min", &set.min_curve),
        ("max", &set.max_curve),
    ] {
        let daily = crate::dataio::to_daily(curve).daily;
        for (d, (x, a)) in daily.iter().zip(curve).enumerate() {
            w.write_record([
                set.region_id.clone(),
                name.to_string(),
                (d + 1).to_string(),
                x.to_string(),
                a.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<trial csv>", e))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub region: String,
    pub date: NaiveDate,
    pub series: String,
    pub kind: String,
    pub value: f64,
}

/// Rows of the `region,date,series,kind,value` table for one region.
pub fn series_rows(report: &RegionReport<'_>) -> Vec<SeriesRow> {
    let mut rows = Vec::new();
    let mut push = |series: &str, kind: &str, start: NaiveDate, values: &[f64]| {
        for (i, v) in values.iter().enumerate() {
            rows.push(SeriesRow {
                region: report.region_id.to_string(),
                date: start + Duration::days(i as i64),
                series: series.to_string(),
                kind: kind.to_string(),
                value: *v,
            });
        }
    };
    let actual = report.actual;
    push("actual", "daily", actual.start, &crate::dataio::to_daily(&actual.values).daily);
    push("actual", "cumulative", actual.start, &actual.values);
    let set = report.trials;
    for (name, curve) in [("mean", &set.mean_curve), ("min", &set.min_curve), ("max", &set.max_curve)] {
        push(name, "daily", set.start_date, &crate::dataio::to_daily(curve).daily);
        push(name, "cumulative", set.start_date, curve);
    }
    if let Some(c) = report.continuation {
        // increments start the day after the anchor; the cumulative curve at the anchor
        push("continuation", "daily", c.anchor_date + Duration::days(1), &c.shifted_segment);
        push("continuation", "cumulative", c.anchor_date, &c.accumulated);
    }
    rows
}

pub fn write_series_csv<W: Write>(out: W, rows: &[SeriesRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["region", "date", "series", "kind", "value"])?;
    for r in rows {
        w.write_record([
            r.region.clone(),
            r.date.format("%Y-%m-%d").to_string(),
            r.series.clone(),
            r.kind.clone(),
            r.value.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<series csv>", e))?;
    Ok(())
}

pub fn read_series_csv(path: &Path) -> Result<Vec<SeriesRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

fn day_number(start: NaiveDate, d: NaiveDate) -> f64 {
    (d - start).num_days() as f64
}

/// Cumulative chart: actual curve, mean prediction, min-max envelope and continuation.
pub fn region_chart(report: &RegionReport<'_>) -> Chart {
    let set = report.trials;
    let origin = report.actual.start.min(set.start_date);
    let at = |start: NaiveDate, i: usize| day_number(origin, start + Duration::days(i as i64));
    let mut lines = vec![
        Line {
            name: "actual".into(),
            color: "#d62728".into(),
            dashed: false,
            points: report
                .actual
                .values
                .iter()
                .enumerate()
                .map(|(i, v)| (at(report.actual.start, i), *v))
                .collect(),
        },
        Line {
            name: "mean prediction".into(),
            color: "#1f77b4".into(),
            dashed: false,
            points: set
                .mean_curve
                .iter()
                .enumerate()
                .map(|(i, v)| (at(set.start_date, i), *v))
                .collect(),
        },
    ];
    if let Some(c) = report.continuation {
        lines.push(Line {
            name: "continuation".into(),
            color: "#2ca02c".into(),
            dashed: true,
            points: c
                .accumulated
                .iter()
                .enumerate()
                .map(|(i, v)| (at(c.anchor_date, i), *v))
                .collect(),
        });
    }
    let band = Band {
        name: "min-max of trials".into(),
        color: "#1f77b4".into(),
        points: set
            .min_curve
            .iter()
            .zip(&set.max_curve)
            .enumerate()
            .map(|(i, (lo, hi))| (at(set.start_date, i), *lo, *hi))
            .collect(),
    };
    let last = lines
        .iter()
        .flat_map(|l| l.points.last().map(|p| p.0))
        .fold(0.0f64, f64::max) as i64;
    let x_ticks = (0..=last)
        .step_by(14)
        .map(|d| (d as f64, (origin + Duration::days(d)).format("%Y-%m-%d").to_string()))
        .collect();
    Chart {
        title: format!("{} - cumulative confirmed cases", report.region_id),
        x_label: "date".into(),
        y_label: "cumulative confirmed cases".into(),
        lines,
        bands: vec![band],
        x_ticks,
    }
}

/// Writes `<prefix>_trials.csv`, `<prefix>_series.csv` and `<prefix>.svg`; returns their paths.
pub fn emit_outputs(report: &RegionReport<'_>, path_prefix: &Path) -> Result<Vec<PathBuf>> {
    let with_suffix = |suffix: &str| {
        let mut s = path_prefix.as_os_str().to_owned();
        s.push(suffix);
        PathBuf::from(s)
    };
    let trials_path = with_suffix("_trials.csv");
    let series_path = with_suffix("_series.csv");
    let svg_path = with_suffix(".svg");

    let mut buf = Vec::new();
    write_trial_csv(&mut buf, report.trials)?;
    checkpoint::write_atomic(&trials_path, &buf)?;
    let mut buf = Vec::new();
    write_series_csv(&mut buf, &series_rows(report))?;
    checkpoint::write_atomic(&series_path, &buf)?;
    checkpoint::write_atomic(&svg_path, region_chart(report).to_svg().as_bytes())?;
    Ok(vec![trials_path, series_path, svg_path])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::to_daily;
    use proptest::prelude::*;

    fn date(m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, m, d).unwrap()
    }

    #[test]
    fn accumulate_examples() {
        assert_eq!(accumulate(&[1.0, 2.0, 3.0]), vec![1.0, 3.0, 6.0]);
        assert!(accumulate(&[]).is_empty());
        let c = [0.0, 2.0, 2.0, 7.0];
        assert_eq!(accumulate(&to_daily(&c).daily), c.to_vec());
    }

    proptest! {
        #[test]
        fn accumulate_inverts_differencing(steps in prop::collection::vec(0u32..1000, 1..60)) {
            let c: Vec<f64> = accumulate(&steps.iter().map(|&s| s as f64).collect::<Vec<_>>());
            prop_assert_eq!(accumulate(&to_daily(&c).daily), c);
        }
    }

    #[test]
    fn aligned_prediction_needs_no_offset() {
        let pred = DatedSeries::new(date(4, 1), vec![10.0, 20.0, 35.0, 50.0]);
        let actual = DatedSeries::new(date(3, 31), vec![5.0, 8.0, 20.0]);
        let c = cut_and_augment(&pred, &actual, AugmentRule::Additive, None).unwrap();
        assert_eq!(c.anchor_date, date(4, 2));
        assert_eq!(c.adjustment, 0.0);
        assert_eq!(c.accumulated, vec![20.0, 35.0, 50.0]);
        assert_eq!(c.raw_segment, vec![15.0, 15.0]);
        assert_eq!(c.shifted_segment, c.raw_segment);
    }

    #[test]
    fn additive_offset_shifts_every_value() {
        let pred = DatedSeries::new(date(4, 1), vec![8_000.0, 9_000.0, 9_400.0, 9_700.0]);
        let actual = DatedSeries::new(date(4, 1), vec![9_500.0, 10_000.0]);
        let c = cut_and_augment(&pred, &actual, AugmentRule::Additive, None).unwrap();
        assert_eq!(c.adjustment, 1_000.0);
        assert_eq!(c.accumulated, vec![10_000.0, 10_400.0, 10_700.0]);
        assert_eq!(c.shifted_segment, vec![400.0, 300.0]);
    }

    #[test]
    fn multiplicative_rule_scales() {
        let pred = DatedSeries::new(date(4, 1), vec![50.0, 100.0, 150.0]);
        let actual = DatedSeries::new(date(4, 2), vec![200.0]);
        let c = cut_and_augment(&pred, &actual, AugmentRule::Multiplicative, None).unwrap();
        assert_eq!(c.adjustment, 2.0);
        assert_eq!(c.accumulated, vec![200.0, 300.0]);
        assert_eq!(c.shifted_segment, vec![100.0]);
        assert_eq!(c.raw_segment, vec![50.0]);
    }

    #[test]
    fn horizon_truncates() {
        let pred = DatedSeries::new(date(4, 1), (0..10).map(|i| i as f64).collect());
        let actual = DatedSeries::new(date(4, 1), vec![3.0]);
        let c = cut_and_augment(&pred, &actual, AugmentRule::Additive, Some(4)).unwrap();
        assert_eq!(c.accumulated.len(), 5);
        assert_eq!(c.dates().last().unwrap(), date(4, 5));
    }

    #[test]
    fn disjoint_calendars_are_rejected() {
        let pred = DatedSeries::new(date(5, 1), vec![1.0, 2.0]);
        let actual = DatedSeries::new(date(4, 1), vec![1.0, 2.0]);
        assert!(cut_and_augment(&pred, &actual, AugmentRule::Additive, None).is_err());
        assert!(cut_and_augment(&pred, &DatedSeries::new(date(4, 1), vec![]), AugmentRule::Additive, None).is_err());
    }

    proptest! {
        #[test]
        fn continuation_joins_and_preserves_increments(
            daily in prop::collection::vec(0.0f64..500.0, 5..40),
            actual_final in 0.0f64..1e6,
            cut in 0usize..4,
        ) {
            let pred = DatedSeries::new(date(3, 1), accumulate(&daily));
            let actual = DatedSeries::new(date(3, 1) - Duration::days(10), vec![actual_final; 11 + cut]);
            let c = cut_and_augment(&pred, &actual, AugmentRule::Additive, None).unwrap();
            prop_assert!((c.accumulated[0] - actual_final).abs() <= 1e-9);
            prop_assert!(c.accumulated.windows(2).all(|w| w[1] >= w[0]));
            let diffs: Vec<f64> = c.accumulated.windows(2).map(|w| w[1] - w[0]).collect();
            prop_assert_eq!(&diffs, &c.shifted_segment);
            for (s, r) in c.shifted_segment.iter().zip(&c.raw_segment) {
                prop_assert!((s - r).abs() <= 1e-9 * (1.0 + actual_final));
            }
            prop_assert!(c.shifted_segment.iter().all(|&d| d >= 0.0));
        }
    }

    fn forecast_fixture() -> (Vec<(u64, NetworkParams)>, ModelConfig, FeatureScaler, RegionSeries) {
        let config = ModelConfig {
            num_layers: 1,
            hidden_size: 3,
            ..ModelConfig::default()
        };
        let series = crate::synthetic::logistic_corpus(1, date(1, 22), 101, 5).remove(0);
        let features = RegionFeatures::from_series(&series, CountMode::Daily).features;
        let scaler = crate::dataio::fit_scaler(&[features]).unwrap();
        let models = (1..=3)
            .map(|s| (s, crate::nn::init_params(&config, s).unwrap()))
            .collect();
        (models, config, scaler, series)
    }

    #[test]
    fn forecast_reaches_horizon_from_anchor() {
        let (models, config, scaler, series) = forecast_fixture();
        let options = ForecastOptions {
            anchor_date: date(5, 1),
            horizon: 32,
            rule: AugmentRule::Additive,
            source: ContinuationSource::Mean,
            mode: CountMode::Daily,
        };
        let f = forecast_region(&models, &config, &scaler, &series, &options).unwrap();
        let dates: Vec<_> = f.continuation.dates().collect();
        assert_eq!(dates.len(), 33);
        assert_eq!(*dates.last().unwrap(), date(6, 2));
        assert_eq!(f.continuation.accumulated[0], *series.confirmed.last().unwrap());
        assert_eq!(f.trials.start_date, date(5, 1) - Duration::days(66));
        assert!(f.trials.mean_rmse.is_nan());

        let worst = ForecastOptions {
            source: ContinuationSource::Worst,
            ..options
        };
        assert!(forecast_region(&models, &config, &scaler, &series, &worst).is_ok());
    }

    #[test]
    fn forecast_needs_a_full_input_window() {
        let (models, config, scaler, series) = forecast_fixture();
        let options = ForecastOptions {
            anchor_date: date(1, 22) + Duration::days(65),
            horizon: 32,
            rule: AugmentRule::Additive,
            source: ContinuationSource::Mean,
            mode: CountMode::Daily,
        };
        let err = forecast_region(&models, &config, &scaler, &series, &options).unwrap_err();
        assert!(err.to_string().contains("67 days"), "{err}");
        let ok = ForecastOptions {
            anchor_date: date(1, 22) + Duration::days(66),
            ..options
        };
        assert!(forecast_region(&models, &config, &scaler, &series, &ok).is_ok());
    }
}
