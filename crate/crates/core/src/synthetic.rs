//! Seeded logistic epidemic curves and a writer for the wide JHU table layout.

use std::fmt::Write as _;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::{DataPaths, RegionSeries};
use crate::error::{Error, Result};
use crate::forecast::accumulate;

/// Shape of one synthetic outbreak.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Outbreak {
    /// Final cumulative size.
    pub total: f64,
    /// Logistic growth rate per day.
    pub rate: f64,
    /// Day index of the inflection point.
    pub midpoint: f64,
    /// Relative amplitude of the multiplicative daily noise.
    pub noise: f64,
}

impl Outbreak {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            total: 10f64.powf(rng.random_range(2.7..5.3)),
            rate: rng.random_range(0.06..0.25),
            midpoint: rng.random_range(35.0..110.0),
            noise: rng.random_range(0.05..0.3),
        }
    }

    fn cumulative(&self, t: f64) -> f64 {
        self.total / (1.0 + (-self.rate * (t - self.midpoint)).exp())
    }
}

/// Daily counts lagged and thinned from `daily`, rounded down.
fn derived(daily: &[f64], lag: usize, fraction: f64) -> Vec<f64> {
    (0..daily.len())
        .map(|t| if t >= lag { (daily[t - lag] * fraction).floor() } else { 0.0 })
        .collect()
}

/// One region whose confirmed counts follow `outbreak`; deaths and recoveries trail them.
pub fn outbreak_region<R: Rng + ?Sized>(
    region_id: &str,
    coordinates: (f64, f64),
    start: NaiveDate,
    days: usize,
    outbreak: &Outbreak,
    rng: &mut R,
) -> RegionSeries {
    let mut previous = 0.0;
    let daily: Vec<f64> = (0..days)
        .map(|t| {
            let c = outbreak.cumulative(t as f64);
            let step = (c - previous).max(0.0);
            previous = c;
            let jitter = 1.0 + outbreak.noise * rng.random_range(-1.0..1.0);
            (step * jitter).round().max(0.0)
        })
        .collect();
    let fatality = rng.random_range(0.01..0.08);
    RegionSeries {
        region_id: region_id.to_string(),
        latitude: coordinates.0,
        longitude: coordinates.1,
        dates: (0..days).map(|d| start + Duration::days(d as i64)).collect(),
        confirmed: accumulate(&daily),
        deaths: accumulate(&derived(&daily, 7, fatality)),
        recovered: accumulate(&derived(&daily, 14, 0.8)),
    }
}

/// `count` regions named `Synthetic 001`, ... with random outbreaks drawn from `seed`.
pub fn logistic_corpus(count: usize, start: NaiveDate, days: usize, seed: u64) -> Vec<RegionSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let outbreak = Outbreak::random(&mut rng);
            let coords = (rng.random_range(-60.0..70.0), rng.random_range(-180.0..180.0));
            outbreak_region(&format!("Synthetic {:03}", k + 1), coords, start, days, &outbreak, &mut rng)
        })
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes confirmed/deaths/recovered tables in the JHU global layout into `dir`.
/// All regions must share one calendar.
pub fn write_jhu_tables(regions: &[RegionSeries], dir: &Path) -> Result<DataPaths> {
    let dates = regions.first().map(|r| r.dates.clone()).unwrap_or_default();
    if regions.iter().any(|r| r.dates != dates) {
        return Err(Error::arg("regions must share one calendar"));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = DataPaths {
        confirmed: dir.join("time_series_covid19_confirmed_global.csv"),
        deaths: dir.join("time_series_covid19_deaths_global.csv"),
        recovered: dir.join("time_series_covid19_recovered_global.csv"),
    };
    let tables: [(&Path, fn(&RegionSeries) -> &[f64]); 3] = [
        (&paths.confirmed, |r| &r.confirmed),
        (&paths.deaths, |r| &r.deaths),
        (&paths.recovered, |r| &r.recovered),
    ];
    for (path, counts) in tables {
        let mut s = String::from("Province/State,Country/Region,Lat,Long");
        for d in &dates {
            write!(s, ",{}", d.format("%-m/%-d/%y")).expect("string write");
        }
        s.push('\n');
        for r in regions {
            let (country, province) = r.region_id.split_once('/').unwrap_or((&r.region_id, ""));
            write!(
                s,
                "{},{},{},{}",
                csv_field(province),
                csv_field(country),
                r.latitude,
                r.longitude
            )
            .expect("string write");
            for v in counts(r) {
                write!(s, ",{v}").expect("string write");
            }
            s.push('\n');
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))?;
    }
    Ok(paths)
}
