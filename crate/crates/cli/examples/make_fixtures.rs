//! Writes the synthetic offline fixtures: `cargo run -p regimenet-cli --example make_fixtures -- fixtures`.
//!
//! One hidden market regime (falling / flat / rising) drives the price. Supply
//! and demand series react to the regime one or two months ahead, so the
//! network has something to find; the rest follow regimes of their own.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const START_YEAR: i32 = 1996;
const MONTHS: usize = 300;

fn regimes(rng: &mut ChaCha8Rng, n: usize) -> Vec<i32> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut block = [-1, 0, 1];
        block.shuffle(rng);
        for r in block {
            let len = rng.random_range(6..20);
            out.extend(std::iter::repeat_n(r, len));
        }
    }
    out.truncate(n);
    out
}

/// Geometric random walk whose log drift at month t is `gain * driver[t + lead]`.
fn walk(rng: &mut ChaCha8Rng, driver: &[i32], lead: usize, gain: f64, level: f64, noise: f64) -> Vec<f64> {
    let eps = Normal::new(0.0, noise).unwrap();
    let mut v = level;
    (0..MONTHS)
        .map(|t| {
            let r = driver[(t + lead).min(driver.len() - 1)] as f64;
            v *= (gain * r + eps.sample(rng)).exp();
            v
        })
        .collect()
}

fn month(i: usize) -> (i32, usize) {
    (START_YEAR + (i / 12) as i32, i % 12 + 1)
}

fn write(dir: &Path, source: &str, id: &str, values: &[f64], span: (usize, usize), rng: &mut ChaCha8Rng) {
    let mut rows: Vec<String> = (span.0..span.1)
        .map(|i| {
            let (y, m) = month(i);
            let date = if source == "eia" { format!("{y}{m:02}") } else { format!("{y}-{m:02}-01") };
            let value = if rng.random_bool(0.02) { "-".to_string() } else { format!("{:.3}", values[i]) };
            format!("{date},{value}")
        })
        .collect();
    if source == "eia" {
        // the EIA API lists newest first
        rows.reverse();
    }
    let sub = dir.join(source);
    fs::create_dir_all(&sub).unwrap();
    let body = format!("date,value\n{}\n", rows.join("\n"));
    fs::write(sub.join(format!("{id}.csv")), body).unwrap();
}

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "fixtures".into());
    let dir = Path::new(&out);
    let mut rng = ChaCha8Rng::seed_from_u64(2018);
    let market = regimes(&mut rng, MONTHS + 2);

    // (id, lead, gain relative to the market regime, level, noise)
    let linked: [(&str, usize, f64, f64, f64); 7] = [
        ("STEO.PAPR_OPEC.M", 1, -0.008, 38.0, 0.004),
        ("STEO.PAPR_NONOPEC.M", 1, -0.006, 50.0, 0.004),
        ("STEO.PATC_OECD.M", 1, 0.006, 46.0, 0.004),
        ("STEO.PATC_NON_OECD.M", 1, 0.008, 40.0, 0.004),
        ("STEO.RGDPQ_OECD.M", 2, 0.004, 40000.0, 0.002),
        ("STEO.RGDPQ_NONOECD.M", 2, 0.005, 30000.0, 0.002),
        ("STEO.COPS_OPEC.M", 0, -0.03, 3.0, 0.02),
    ];
    let own: [(&str, &str, f64, f64); 15] = [
        ("eia", "STEO.COPRPUS.M", 9.0, 0.01),
        ("eia", "STEO.CORIPUS.M", 15.0, 0.01),
        ("eia", "STEO.FOREX_WORLD.M", 100.0, 0.01),
        ("eia", "STEO.PASC_OECD_T3.M", 2700.0, 0.01),
        ("eia", "STEO.COPC_OPEC.M", 33.0, 0.01),
        ("eia", "STEO.T3_STCHANGE_OOECD.M", 0.5, 0.01),
        ("eia", "STEO.T3_STCHANGE_NOECD.M", 0.4, 0.01),
        ("fred", "CPIENGSL", 120.0, 0.01),
        ("fred", "CAPG211S", 95.0, 0.01),
        ("fred", "CAPUTLG211S", 88.0, 0.01),
        ("fred", "IPG211S", 85.0, 0.01),
        ("fred", "IPG211111CN", 80.0, 0.01),
        ("fred", "INDPRO", 90.0, 0.01),
        ("fred", "IPN213111N", 100.0, 0.01),
        ("fred", "PCU211211", 110.0, 0.01),
    ];

    let price = walk(&mut rng, &market, 0, 0.04, 25.0, 0.03);
    write(dir, "fred", "WTISPLC", &price, (12, MONTHS), &mut rng);
    for (id, lead, gain, level, noise) in linked {
        let v = walk(&mut rng, &market, lead, gain, level, noise);
        write(dir, "eia", id, &v, (36, MONTHS - 6), &mut rng);
    }
    for (source, id, level, noise) in own {
        let mine = regimes(&mut rng, MONTHS);
        let v = walk(&mut rng, &mine, 0, noise, level, noise);
        let start = rng.random_range(0..48);
        let end = MONTHS - rng.random_range(0..6);
        write(dir, source, id, &v, (start, end), &mut rng);
    }
}
