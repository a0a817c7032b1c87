//! Ingestion of JHU-style wide CSVs and preparation of scaled training windows.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const FEATURE_COUNT: usize = 5;
pub const INPUT_DAYS: usize = 67;
pub const OUTPUT_DAYS: usize = 100;

/// Column order of an assembled feature matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feature {
    Confirmed = 0,
    Deaths = 1,
    Recovered = 2,
    Latitude = 3,
    Longitude = 4,
}

pub fn default_start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 22).expect("valid date")
}

/// One region's cumulative counts together with its coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionSeries {
    pub region_id: String,
    pub latitude: f64,
    pub longitude: f64,
    pub dates: Vec<NaiveDate>,
    pub confirmed: Vec<f64>,
    pub deaths: Vec<f64>,
    pub recovered: Vec<f64>,
}

impl RegionSeries {
    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| Error::Region {
            region: self.region_id.clone(),
            message,
        };
        let n = self.dates.len();
        for (name, v) in [
            ("confirmed", &self.confirmed),
            ("deaths", &self.deaths),
            ("recovered", &self.recovered),
        ] {
            if v.len() != n {
                return Err(bad(format!("{name} has {} values for {n} dates", v.len())));
            }
            if let Some(x) = v.iter().find(|x| !x.is_finite() || **x < 0.0) {
                return Err(bad(format!("{name} contains invalid count {x}")));
            }
        }
        check_daily_steps(&self.dates).map_err(bad)?;
        check_coordinates(self.latitude, self.longitude).map_err(bad)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Index of `date` in this series, if covered.
    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let first = *self.dates.first()?;
        let offset = (date - first).num_days();
        (offset >= 0 && (offset as usize) < self.dates.len()).then_some(offset as usize)
    }
}

fn check_daily_steps(dates: &[NaiveDate]) -> std::result::Result<(), String> {
    for w in dates.windows(2) {
        if (w[1] - w[0]).num_days() != 1 {
            return Err(format!("dates {} and {} are not one day apart", w[0], w[1]));
        }
    }
    Ok(())
}

fn check_coordinates(lat: f64, long: f64) -> std::result::Result<(), String> {
    if !(-90.0..=90.0).contains(&lat) {
        return Err(format!("latitude {lat} outside [-90, 90]"));
    }
    if !(-180.0..=180.0).contains(&long) {
        return Err(format!("longitude {long} outside [-180, 180]"));
    }
    Ok(())
}

/// Names of the metadata columns and the date header format.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub province: String,
    pub country: String,
    pub latitude: String,
    pub longitude: String,
    pub date_format: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            province: "Province/State".into(),
            country: "Country/Region".into(),
            latitude: "Lat".into(),
            longitude: "Long".into(),
            date_format: "%m/%d/%y".into(),
        }
    }
}

/// A single count table row (one of confirmed, deaths or recovered).
#[derive(Clone, Debug, PartialEq)]
pub struct CountSeries {
    pub region_id: String,
    pub latitude: f64,
    pub longitude: f64,
    pub dates: Vec<NaiveDate>,
    pub counts: Vec<f64>,
}

/// Composite key: the country alone, or `country/province` when a province is given.
pub fn region_key(country: &str, province: &str) -> String {
    let country = country.trim();
    let province = province.trim();
    if province.is_empty() {
        country.to_string()
    } else {
        format!("{country}/{province}")
    }
}

/// Reads one wide-format count table. Rows that lack coordinates are skipped with a warning.
pub fn load_region_csv(path: &Path, schema: &CsvSchema) -> Result<Vec<CountSeries>> {
    let schema_err = |message: String| Error::Schema {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Schema {
                path: path.to_path_buf(),
                message: format!("{other:?}"),
            },
        })?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| schema_err(format!("missing column '{name}'")))
    };
    let province_col = find(&schema.province)?;
    let country_col = find(&schema.country)?;
    let lat_col = find(&schema.latitude)?;
    let long_col = find(&schema.longitude)?;
    let first_date_col = [province_col, country_col, lat_col, long_col]
        .into_iter()
        .max()
        .unwrap_or(0)
        + 1;
    if first_date_col >= headers.len() {
        return Err(schema_err("no date columns after the metadata columns".into()));
    }
    let dates = headers
        .iter()
        .skip(first_date_col)
        .map(|h| {
            NaiveDate::parse_from_str(h.trim(), &schema.date_format)
                .map_err(|e| schema_err(format!("header '{h}' is not a date: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    check_daily_steps(&dates).map_err(|message| Error::Format {
        path: path.to_path_buf(),
        message,
    })?;

    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        // 1-based line number in the file, counting the header
        let row = i + 2;
        let cell = |c: usize| record.get(c).unwrap_or("").trim();
        let region_id = region_key(cell(country_col), cell(province_col));
        let data_err = |column: &str, message: String| Error::Data {
            path: path.to_path_buf(),
            row,
            column: column.to_string(),
            message,
        };
        if cell(lat_col).is_empty() || cell(long_col).is_empty() {
            warn!("{}: skipping '{region_id}' (row {row}) without coordinates", path.display());
            continue;
        }
        let parse = |c: usize, column: &str| -> Result<f64> {
            cell(c)
                .parse::<f64>()
                .map_err(|e| data_err(column, format!("'{}' is not a number: {e}", cell(c))))
        };
        let latitude = parse(lat_col, &schema.latitude)?;
        let longitude = parse(long_col, &schema.longitude)?;
        if !(-90.0..=90.0).contains(&latitude) {
            return Err(data_err(&schema.latitude, format!("latitude {latitude} outside [-90, 90]")));
        }
        if !(-180.0..=180.0).contains(&longitude) {
            return Err(data_err(
                &schema.longitude,
                format!("longitude {longitude} outside [-180, 180]"),
            ));
        }
        let mut counts = Vec::with_capacity(dates.len());
        for c in first_date_col..headers.len() {
            let column = &headers[c];
            let v = parse(c, column)?;
            if !v.is_finite() || v < 0.0 {
                return Err(data_err(column, format!("count {v} is negative")));
            }
            counts.push(v);
        }
        if !seen.insert(region_id.clone()) {
            return Err(data_err(&schema.country, format!("duplicate region '{region_id}'")));
        }
        out.push(CountSeries {
            region_id,
            latitude,
            longitude,
            dates: dates.clone(),
            counts,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataPaths {
    pub confirmed: PathBuf,
    pub deaths: PathBuf,
    pub recovered: PathBuf,
}

/// Inner join of the three count tables on the region key. Coordinates come from
/// the confirmed table.
pub fn join_tables(
    confirmed: Vec<CountSeries>,
    deaths: Vec<CountSeries>,
    recovered: Vec<CountSeries>,
) -> Result<Vec<RegionSeries>> {
    let mut deaths: BTreeMap<_, _> = deaths.into_iter().map(|s| (s.region_id.clone(), s)).collect();
    let mut recovered: BTreeMap<_, _> = recovered
        .into_iter()
        .map(|s| (s.region_id.clone(), s))
        .collect();
    let mut out = Vec::new();
    for c in confirmed {
        let (Some(d), Some(r)) = (deaths.remove(&c.region_id), recovered.remove(&c.region_id)) else {
            warn!("region '{}' missing from deaths or recovered table, dropped", c.region_id);
            continue;
        };
        if d.dates != c.dates || r.dates != c.dates {
            return Err(Error::Region {
                region: c.region_id,
                message: "count tables cover different dates".into(),
            });
        }
        let series = RegionSeries {
            region_id: c.region_id,
            latitude: c.latitude,
            longitude: c.longitude,
            dates: c.dates,
            confirmed: c.counts,
            deaths: d.counts,
            recovered: r.counts,
        };
        series.validate()?;
        out.push(series);
    }
    Ok(out)
}

pub fn load_regions(paths: &DataPaths, schema: &CsvSchema) -> Result<Vec<RegionSeries>> {
    join_tables(
        load_region_csv(&paths.confirmed, schema)?,
        load_region_csv(&paths.deaths, schema)?,
        load_region_csv(&paths.recovered, schema)?,
    )
}

/// Daily counts produced by differencing a cumulative series.
#[derive(Clone, Debug, PartialEq)]
pub struct Differenced {
    pub daily: Vec<f64>,
    /// Number of negative differences (data revisions) that were clamped to zero.
    pub clamped: usize,
}

/// First differences of a cumulative series; the first day keeps its cumulative value.
pub fn to_daily(cumulative: &[f64]) -> Differenced {
    let mut clamped = 0;
    let daily = cumulative
        .iter()
        .enumerate()
        .map(|(t, &c)| {
            if t == 0 {
                return c;
            }
            let d = c - cumulative[t - 1];
            if d < 0.0 {
                clamped += 1;
                0.0
            } else {
                d
            }
        })
        .collect();
    Differenced { daily, clamped }
}

/// Whether deaths and recovered enter the model as daily or cumulative counts.
/// Confirmed is always differenced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountMode {
    #[default]
    Daily,
    Cumulative,
}

/// Time x 5 matrix: daily confirmed, deaths, recovered, then constant latitude and longitude.
pub fn assemble_features(series: &RegionSeries) -> Matrix {
    assemble_features_with(series, CountMode::Daily)
}

pub fn assemble_features_with(series: &RegionSeries, mode: CountMode) -> Matrix {
    let confirmed = to_daily(&series.confirmed);
    let (deaths, recovered) = match mode {
        CountMode::Daily => (to_daily(&series.deaths), to_daily(&series.recovered)),
        CountMode::Cumulative => (
            Differenced {
                daily: series.deaths.clone(),
                clamped: 0,
            },
            Differenced {
                daily: series.recovered.clone(),
                clamped: 0,
            },
        ),
    };
    let clamped = confirmed.clamped + deaths.clamped + recovered.clamped;
    if clamped > 0 {
        warn!(
            "{}: clamped {clamped} negative daily differences to zero",
            series.region_id
        );
    }
    let n = series.len();
    let mut m = Matrix::zeros(n, FEATURE_COUNT);
    for t in 0..n {
        m.row_mut(t).copy_from_slice(&[
            confirmed.daily[t],
            deaths.daily[t],
            recovered.daily[t],
            series.latitude,
            series.longitude,
        ]);
    }
    m
}

/// Per-feature min-max scaler fitted on a training corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    per_feature_min: Vec<f64>,
    per_feature_max: Vec<f64>,
}

impl FeatureScaler {
    pub fn new(per_feature_min: Vec<f64>, per_feature_max: Vec<f64>) -> Result<Self> {
        if per_feature_min.len() != per_feature_max.len() {
            return Err(Error::arg("min and max vectors differ in length"));
        }
        if let Some(j) = (0..per_feature_min.len()).find(|&j| {
            !(per_feature_max[j] >= per_feature_min[j])
                || !per_feature_min[j].is_finite()
                || !per_feature_max[j].is_finite()
        }) {
            return Err(Error::arg(format!(
                "feature {j}: max {} < min {}",
                per_feature_max[j], per_feature_min[j]
            )));
        }
        Ok(Self {
            per_feature_min,
            per_feature_max,
        })
    }

    pub fn feature_count(&self) -> usize {
        self.per_feature_min.len()
    }

    pub fn min(&self) -> &[f64] {
        &self.per_feature_min
    }

    pub fn max(&self) -> &[f64] {
        &self.per_feature_max
    }

    fn range(&self, feature: usize) -> f64 {
        self.per_feature_max[feature] - self.per_feature_min[feature]
    }

    /// Degenerate features (max == min) map to 0.
    #[inline]
    pub fn transform_value(&self, feature: usize, x: f64) -> f64 {
        let range = self.range(feature);
        if range > 0.0 {
            (x - self.per_feature_min[feature]) / range
        } else {
            0.0
        }
    }

    #[inline]
    pub fn inverse_value(&self, feature: usize, x: f64) -> f64 {
        x * self.range(feature) + self.per_feature_min[feature]
    }

    pub fn transform(&self, m: &Matrix) -> Result<Matrix> {
        self.map(m, Self::transform_value)
    }

    pub fn inverse_transform(&self, m: &Matrix) -> Result<Matrix> {
        self.map(m, Self::inverse_value)
    }

    fn map(&self, m: &Matrix, f: fn(&Self, usize, f64) -> f64) -> Result<Matrix> {
        if m.cols() != self.feature_count() {
            return Err(Error::arg(format!(
                "matrix has {} features, scaler was fitted on {}",
                m.cols(),
                self.feature_count()
            )));
        }
        let mut out = m.clone();
        for r in 0..out.rows() {
            for (j, x) in out.row_mut(r).iter_mut().enumerate() {
                *x = f(self, j, *x);
            }
        }
        Ok(out)
    }
}

/// Fits per-feature min and max over every row of every matrix in the corpus.
pub fn fit_scaler(corpus: &[Matrix]) -> Result<FeatureScaler> {
    let first = corpus
        .first()
        .ok_or_else(|| Error::arg("cannot fit a scaler on an empty corpus"))?;
    let features = first.cols();
    let mut min = vec![f64::INFINITY; features];
    let mut max = vec![f64::NEG_INFINITY; features];
    let mut rows = 0;
    for m in corpus {
        if m.cols() != features {
            return Err(Error::arg("corpus matrices differ in feature count"));
        }
        for r in 0..m.rows() {
            for (j, &x) in m.row(r).iter().enumerate() {
                min[j] = min[j].min(x);
                max[j] = max[j].max(x);
            }
        }
        rows += m.rows();
    }
    if rows == 0 {
        return Err(Error::arg("cannot fit a scaler on a corpus without rows"));
    }
    FeatureScaler::new(min, max)
}

/// Input and target of one training or validation example.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowPair {
    pub region_id: String,
    pub start_date: NaiveDate,
    /// `input_days x features`, scaled.
    pub input: Matrix,
    /// Scaled daily confirmed over `output_days`, whose prefix overlaps the input.
    pub target: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub start: NaiveDate,
    pub input_days: usize,
    pub output_days: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            start: default_start_date(),
            input_days: INPUT_DAYS,
            output_days: OUTPUT_DAYS,
        }
    }
}

/// A region's feature matrix with the dates of its rows.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionFeatures {
    pub region_id: String,
    pub dates: Vec<NaiveDate>,
    pub features: Matrix,
}

impl RegionFeatures {
    pub fn from_series(series: &RegionSeries, mode: CountMode) -> Self {
        Self {
            region_id: series.region_id.clone(),
            dates: series.dates.clone(),
            features: assemble_features_with(series, mode),
        }
    }

    /// Rows covering `len` days from `start`, or `None` when the series is too short.
    pub fn crop(&self, start: NaiveDate, len: usize) -> Option<RegionFeatures> {
        let first = *self.dates.first()?;
        let offset = (start - first).num_days();
        if offset < 0 || offset as usize + len > self.dates.len() {
            return None;
        }
        let s = offset as usize;
        Some(RegionFeatures {
            region_id: self.region_id.clone(),
            dates: self.dates[s..s + len].to_vec(),
            features: self.features.slice_rows(s, s + len),
        })
    }

    pub fn scaled(&self, scaler: &FeatureScaler) -> Result<RegionFeatures> {
        Ok(RegionFeatures {
            region_id: self.region_id.clone(),
            dates: self.dates.clone(),
            features: scaler.transform(&self.features)?,
        })
    }
}

/// One window per region starting at `spec.start`. Regions with fewer than
/// `spec.output_days` days from the start are skipped with a warning.
pub fn make_windows(corpus: &[RegionFeatures], spec: &WindowSpec) -> Vec<WindowPair> {
    corpus
        .iter()
        .filter_map(|region| {
            let Some(crop) = region.crop(spec.start, spec.output_days) else {
                warn!(
                    "region '{}' has fewer than {} days from {}, skipped",
                    region.region_id, spec.output_days, spec.start
                );
                return None;
            };
            Some(WindowPair {
                region_id: region.region_id.clone(),
                start_date: spec.start,
                input: crop.features.slice_rows(0, spec.input_days),
                target: crop.features.column(Feature::Confirmed as usize),
            })
        })
        .collect()
}

/// Expands country-level selectors: `"China"` matches `China` and every `China/<province>`.
pub fn select_regions<'a>(
    regions: &'a [RegionSeries],
    selectors: &[String],
) -> Vec<&'a RegionSeries> {
    let mut picked = BTreeSet::new();
    let mut out = Vec::new();
    for sel in selectors {
        let mut matched = false;
        for (i, r) in regions.iter().enumerate() {
            let hit = r.region_id == *sel
                || r
                    .region_id
                    .strip_prefix(sel.as_str())
                    .is_some_and(|rest| rest.starts_with('/'));
            if hit {
                matched = true;
                if picked.insert(i) {
                    out.push(r);
                }
            }
        }
        if !matched {
            warn!("region selector '{sel}' matched nothing");
        }
    }
    out
}

/// A validation region: its window plus the unscaled daily confirmed counts it must match.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidationRegion {
    pub window: WindowPair,
    pub dates: Vec<NaiveDate>,
    pub actual_daily: Vec<f64>,
}

/// Scaled windows ready for training and validation.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub scaler: FeatureScaler,
    pub spec: WindowSpec,
    pub train: Vec<WindowPair>,
    pub validation: Vec<ValidationRegion>,
}

/// Crops every region to the window span, fits the scaler on training regions only,
/// and scales both sets with it.
pub fn build_dataset(
    regions: &[RegionSeries],
    train_selectors: &[String],
    validation_selectors: &[String],
    spec: &WindowSpec,
    mode: CountMode,
) -> Result<Dataset> {
    let crop_all = |selectors: &[String]| -> Vec<RegionFeatures> {
        select_regions(regions, selectors)
            .into_iter()
            .filter_map(|s| {
                let crop = RegionFeatures::from_series(s, mode).crop(spec.start, spec.output_days);
                if crop.is_none() {
                    warn!(
                        "region '{}' has fewer than {} days from {}, skipped",
                        s.region_id, spec.output_days, spec.start
                    );
                }
                crop
            })
            .collect()
    };
    let train_raw = crop_all(train_selectors);
    let val_raw = crop_all(validation_selectors);
    if let Some(dup) = train_raw
        .iter()
        .find(|t| val_raw.iter().any(|v| v.region_id == t.region_id))
    {
        return Err(Error::arg(format!(
            "region '{}' is in both the training and validation sets",
            dup.region_id
        )));
    }
    if train_raw.is_empty() {
        return Err(Error::arg("no training region has enough data for a window"));
    }
    let corpus: Vec<Matrix> = train_raw.iter().map(|r| r.features.clone()).collect();
    let scaler = fit_scaler(&corpus)?;

    let scale_all = |raw: &[RegionFeatures]| -> Result<Vec<RegionFeatures>> {
        raw.iter().map(|r| r.scaled(&scaler)).collect()
    };
    let train = make_windows(&scale_all(&train_raw)?, spec);
    let validation = make_windows(&scale_all(&val_raw)?, spec)
        .into_iter()
        .zip(&val_raw)
        .map(|(window, raw)| ValidationRegion {
            window,
            dates: raw.dates.clone(),
            actual_daily: raw.features.column(Feature::Confirmed as usize),
        })
        .collect();
    Ok(Dataset {
        scaler,
        spec: *spec,
        train,
        validation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fmt::Write as _;
    use std::io::Write as _;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn write_csv(rows: &[(&str, &str, &str, &str)], days: usize, count: impl Fn(usize, usize) -> i64) -> tempfile::NamedTempFile {
        let mut s = String::from("Province/State,Country/Region,Lat,Long");
        let start = date(2020, 1, 22);
        for d in 0..days {
            let day = start + chrono::Duration::days(d as i64);
            write!(s, ",{}", day.format("%-m/%-d/%y")).unwrap();
        }
        s.push('\n');
        for (r, (prov, country, lat, long)) in rows.iter().enumerate() {
            write!(s, "{prov},{country},{lat},{long}").unwrap();
            for d in 0..days {
                write!(s, ",{}", count(r, d)).unwrap();
            }
            s.push('\n');
        }
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(s.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_one_series_per_row() {
        let f = write_csv(
            &[("", "Indonesia", "-0.79", "113.9"), ("Hubei", "China", "30.97", "112.27"), ("", "\"Korea, South\"", "35.9", "127.7")],
            100,
            |r, d| (r * d) as i64,
        );
        let rows = load_region_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.counts.len() == 100 && r.dates.len() == 100));
        assert_eq!(rows[1].region_id, "China/Hubei");
        assert_eq!(rows[2].region_id, "Korea, South");
        assert_eq!(rows[0].dates[0], date(2020, 1, 22));
        assert_eq!(rows[0].dates[99], date(2020, 4, 30));
    }

    #[test]
    fn rejects_out_of_range_latitude() {
        let f = write_csv(&[("", "Nowhere", "91", "0")], 10, |_, _| 1);
        let err = load_region_csv(f.path(), &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, Error::Data { row: 2, .. }), "{err}");
    }

    #[test]
    fn negative_count_names_row_and_column() {
        let f = write_csv(&[("", "A", "1", "1"), ("", "B", "1", "1")], 5, |r, d| if r == 1 && d == 3 { -4 } else { 1 });
        match load_region_csv(f.path(), &CsvSchema::default()).unwrap_err() {
            Error::Data { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, "1/25/20");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_header_is_schema_error() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "Region,Lat,Long,1/22/20").unwrap();
        writeln!(f, "A,1,1,3").unwrap();
        let err = load_region_csv(f.path(), &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, Error::Schema { .. }), "{err}");

        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "Province/State,Country/Region,Lat,Long,1/22/20,notadate").unwrap();
        writeln!(f, ",A,1,1,3,4").unwrap();
        let err = load_region_csv(f.path(), &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, Error::Schema { .. }), "{err}");
    }

    #[test]
    fn non_monotone_dates_are_format_error() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "Province/State,Country/Region,Lat,Long,1/22/20,1/24/20,1/23/20").unwrap();
        writeln!(f, ",A,1,1,3,4,5").unwrap();
        let err = load_region_csv(f.path(), &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }

    #[test]
    fn to_daily_examples() {
        assert_eq!(to_daily(&[1.0, 3.0, 6.0]).daily, vec![1.0, 2.0, 3.0]);
        assert_eq!(to_daily(&[5.0, 5.0, 5.0]).daily, vec![5.0, 0.0, 0.0]);
        let d = to_daily(&[2.0, 1.0, 4.0]);
        assert_eq!(d.daily, vec![2.0, 0.0, 3.0]);
        assert_eq!(d.clamped, 1);
    }

    fn series(id: &str, n: usize, lat: f64) -> RegionSeries {
        let start = date(2020, 1, 22);
        RegionSeries {
            region_id: id.into(),
            latitude: lat,
            longitude: 20.0,
            dates: (0..n).map(|d| start + chrono::Duration::days(d as i64)).collect(),
            confirmed: (0..n).map(|d| (d * d) as f64).collect(),
            deaths: (0..n).map(|d| (d / 3) as f64).collect(),
            recovered: (0..n).map(|d| (d / 2) as f64).collect(),
        }
    }

    #[test]
    fn assemble_features_shape_and_columns() {
        let s = series("X", 100, -6.2);
        let m = assemble_features(&s);
        assert_eq!(m.shape(), (100, 5));
        assert!(m.column(3).iter().all(|&v| v == -6.2));
        assert!(m.column(4).iter().all(|&v| v == 20.0));
        assert_eq!(m.column(0), to_daily(&s.confirmed).daily);
    }

    #[test]
    fn scaler_examples() {
        let corpus = [Matrix::from_rows(&[[0.0], [5.0], [10.0]]).unwrap()];
        let s = fit_scaler(&corpus).unwrap();
        assert_eq!((s.min()[0], s.max()[0]), (0.0, 10.0));
        assert_eq!(s.transform_value(0, 5.0), 0.5);
        assert_eq!(s.transform_value(0, 10.0), 1.0);
        assert_eq!(s.transform_value(0, -5.0), -0.5);

        let constant = fit_scaler(&[Matrix::from_rows(&[[3.0], [3.0], [3.0]]).unwrap()]).unwrap();
        let t = constant.transform(&corpus[0]).unwrap();
        assert!(t.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(constant.inverse_value(0, 0.0), 3.0);

        let s = FeatureScaler::new(vec![2.0], vec![12.0]).unwrap();
        let x = 7.3;
        assert!((s.inverse_value(0, s.transform_value(0, x)) - x).abs() < 1e-12);
    }

    #[test]
    fn scaler_fits_over_concatenated_corpus() {
        let a = Matrix::from_rows(&[[0.0], [4.0]]).unwrap();
        let b = Matrix::from_rows(&[[2.0], [8.0]]).unwrap();
        // brute force over the concatenation
        let all: Vec<f64> = a.as_slice().iter().chain(b.as_slice()).copied().collect();
        let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s = fit_scaler(&[a, b]).unwrap();
        assert_eq!((s.min()[0], s.max()[0]), (lo, hi));
        assert_eq!((lo, hi), (0.0, 8.0));
    }

    #[test]
    fn scaler_errors() {
        assert!(fit_scaler(&[]).is_err());
        let s = FeatureScaler::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert!(s.transform(&Matrix::zeros(2, 3)).is_err());
        assert!(FeatureScaler::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn windows_have_fixed_shapes_and_shared_prefix() {
        let regions: Vec<_> = [series("A", 100, 1.0), series("B", 99, 2.0), series("C", 120, 3.0)]
            .iter()
            .map(|s| RegionFeatures::from_series(s, CountMode::Daily))
            .collect();
        let w = make_windows(&regions, &WindowSpec::default());
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].region_id, "A");
        assert_eq!(w[1].region_id, "C");
        for p in &w {
            assert_eq!(p.input.shape(), (67, 5));
            assert_eq!(p.target.len(), 100);
            assert_eq!(&p.target[..67], &p.input.column(0)[..]);
        }
    }

    #[test]
    fn window_start_is_configurable() {
        let regions = vec![RegionFeatures::from_series(&series("A", 110, 1.0), CountMode::Daily)];
        let spec = WindowSpec {
            start: date(2020, 1, 31),
            ..WindowSpec::default()
        };
        let w = make_windows(&regions, &spec);
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].target[0], regions[0].features.get(9, 0));
        let late = WindowSpec {
            start: date(2020, 2, 5),
            ..WindowSpec::default()
        };
        assert!(make_windows(&regions, &late).is_empty());
    }

    #[test]
    fn selectors_expand_provinces() {
        let regions = vec![series("China/Hubei", 5, 1.0), series("China/Anhui", 5, 1.0), series("Chile", 5, 1.0)];
        let picked = select_regions(&regions, &["China".to_string()]);
        assert_eq!(picked.len(), 2);
        let picked = select_regions(&regions, &["Chile".to_string(), "Chile".to_string()]);
        assert_eq!(picked.len(), 1);
    }

    #[test]
    fn dataset_scaler_ignores_validation_regions() {
        let mut regions = vec![series("A", 100, 1.0), series("B", 100, 2.0), series("V", 100, 3.0)];
        let train = vec!["A".to_string(), "B".to_string()];
        let val = vec!["V".to_string()];
        let spec = WindowSpec::default();
        let before = build_dataset(&regions, &train, &val, &spec, CountMode::Daily).unwrap();
        regions[2].confirmed.iter_mut().for_each(|c| *c *= 1000.0);
        regions[2].latitude = -80.0;
        let after = build_dataset(&regions, &train, &val, &spec, CountMode::Daily).unwrap();
        assert_eq!(before.scaler, after.scaler);
        assert_ne!(before.validation, after.validation);
        assert!(before.train.iter().all(|w| w
            .input
            .as_slice()
            .iter()
            .chain(&w.target)
            .all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn dataset_rejects_overlapping_sets() {
        let regions = vec![series("A", 100, 1.0)];
        let sel = vec!["A".to_string()];
        assert!(build_dataset(&regions, &sel, &sel, &WindowSpec::default(), CountMode::Daily).is_err());
    }

    #[test]
    fn region_series_validation() {
        let mut s = series("A", 10, 1.0);
        assert!(s.validate().is_ok());
        s.dates.swap(3, 4);
        assert!(s.validate().is_err());
        let mut s = series("A", 10, 1.0);
        s.deaths.pop();
        assert!(s.validate().is_err());
        let mut s = series("A", 10, 1.0);
        s.longitude = 181.0;
        assert!(s.validate().is_err());
    }
}
