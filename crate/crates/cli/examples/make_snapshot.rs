//! Regenerates the bundled synthetic snapshot under `data/`:
//! `cargo run -p covid-lstm-cli --example make_snapshot -- data`

use std::path::PathBuf;

use covid_lstm::dataio::default_start_date;
use covid_lstm::synthetic::{outbreak_region, write_jhu_tables, Outbreak};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DAYS: usize = 101;
const SEED: u64 = 20200501;

const COUNTRIES: [(&str, f64, f64); 46] = [
    ("Germany", 51.0, 9.0),
    ("Brazil", -14.2, -51.9),
    ("US", 40.0, -100.0),
    ("Belgium", 50.8, 4.5),
    ("Spain", 40.0, -4.0),
    ("Italy", 43.0, 12.0),
    ("Malaysia", 2.5, 112.5),
    ("Vietnam", 16.0, 108.0),
    ("Iran", 32.0, 53.0),
    ("United Arab Emirates", 23.4, 53.8),
    ("Singapore", 1.28, 103.83),
    ("Thailand", 15.0, 101.0),
    ("Korea, South", 36.0, 128.0),
    ("Japan", 36.0, 138.0),
    ("Russia", 61.5, 105.3),
    ("Chile", -35.7, -71.5),
    ("India", 21.0, 78.0),
    ("Greece", 39.1, 21.8),
    ("Mexico", 23.6, -102.6),
    ("Mongolia", 46.9, 103.8),
    ("Philippines", 13.0, 122.0),
    ("New Zealand", -40.9, 174.9),
    ("South Africa", -30.6, 22.9),
    ("Botswana", -22.3, 24.7),
    ("Uruguay", -32.5, -55.8),
    ("Paraguay", -23.4, -58.4),
    ("Madagascar", -18.8, 46.9),
    ("Peru", -9.2, -75.0),
    ("Portugal", 39.4, -8.2),
    ("Hungary", 47.2, 19.5),
    ("Kenya", -0.02, 37.9),
    ("Ireland", 53.1, -7.7),
    ("Israel", 31.0, 34.9),
    ("Norway", 60.5, 8.5),
    ("Mauritius", -20.3, 57.6),
    ("Rwanda", -1.9, 29.9),
    ("Iceland", 64.96, -19.0),
    ("Kazakhstan", 48.0, 66.9),
    ("Switzerland", 46.8, 8.2),
    ("Cyprus", 35.1, 33.4),
    ("Zimbabwe", -19.0, 29.2),
    ("Indonesia", -0.8, 113.9),
    ("Sweden", 60.1, 18.6),
    ("Saudi Arabia", 23.9, 45.1),
    ("Argentina", -38.4, -63.6),
    ("Poland", 51.9, 19.1),
];

const PROVINCES: [(&str, f64, f64, &[&str]); 5] = [
    ("China", 30.0, 112.0, &[
        "Anhui", "Beijing", "Chongqing", "Fujian", "Gansu", "Guangdong", "Guangxi", "Guizhou",
        "Hainan", "Hebei", "Heilongjiang", "Henan", "Hong Kong", "Hubei", "Hunan",
        "Inner Mongolia", "Jiangsu", "Jiangxi", "Jilin", "Liaoning", "Macau", "Ningxia",
        "Qinghai", "Shaanxi", "Shandong", "Shanghai", "Shanxi", "Sichuan", "Tianjin", "Tibet",
        "Xinjiang", "Yunnan", "Zhejiang",
    ]),
    ("Australia", -27.0, 135.0, &[
        "Australian Capital Territory", "New South Wales", "Northern Territory", "Queensland",
        "South Australia", "Tasmania", "Victoria", "Western Australia",
    ]),
    ("France", 46.2, 2.2, &[
        "", "French Guiana", "French Polynesia", "Guadeloupe", "Martinique", "Mayotte",
        "New Caledonia", "Reunion", "Saint Barthelemy", "St Martin",
    ]),
    ("Netherlands", 52.1, 5.3, &["", "Aruba", "Curacao", "Sint Maarten"]),
    ("Denmark", 56.3, 9.5, &["", "Faroe Islands", "Greenland"]),
];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data".into()));
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let start = default_start_date();
    let mut regions = Vec::new();
    for (country, lat, long, provinces) in PROVINCES {
        for province in provinces {
            let mut outbreak = Outbreak::random(&mut rng);
            if country == "China" {
                // early outbreaks that had plateaued by spring
                outbreak.midpoint = rng.random_range(12.0..30.0);
                outbreak.rate = rng.random_range(0.2..0.4);
            }
            let id = if province.is_empty() {
                country.to_string()
            } else {
                format!("{country}/{province}")
            };
            let coords = (
                (lat + rng.random_range(-4.0..4.0)).clamp(-89.0, 89.0),
                (long + rng.random_range(-6.0..6.0)).clamp(-179.0, 179.0),
            );
            regions.push(outbreak_region(&id, coords, start, DAYS, &outbreak, &mut rng));
        }
    }
    for (country, lat, long) in COUNTRIES {
        let outbreak = Outbreak::random(&mut rng);
        regions.push(outbreak_region(country, (lat, long), start, DAYS, &outbreak, &mut rng));
    }
    regions.sort_by(|a, b| a.region_id.cmp(&b.region_id));
    let paths = write_jhu_tables(&regions, &dir)?;
    println!("{} regions written to {}", regions.len(), paths.confirmed.display());
    Ok(())
}
