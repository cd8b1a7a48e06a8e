//! Synthetic county-level dataset on the US census geography (4 regions,
//! 9 divisions, 51 states including DC), used when the real file is absent.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const COUNTIES: usize = 3047;

const GEOGRAPHY: [(&str, &str, &[&str]); 9] = [
    ("Northeast", "New England", &["CT", "ME", "MA", "NH", "RI", "VT"]),
    ("Northeast", "Mid-Atlantic", &["NJ", "NY", "PA"]),
    ("Midwest", "East North Central", &["IL", "IN", "MI", "OH", "WI"]),
    (
        "Midwest",
        "West North Central",
        &["IA", "KS", "MN", "MO", "NE", "ND", "SD"],
    ),
    (
        "South",
        "South Atlantic",
        &["DE", "DC", "FL", "GA", "MD", "NC", "SC", "VA", "WV"],
    ),
    ("South", "East South Central", &["AL", "KY", "MS", "TN"]),
    ("South", "West South Central", &["AR", "LA", "OK", "TX"]),
    ("West", "Mountain", &["AZ", "CO", "ID", "MT", "NV", "NM", "UT", "WY"]),
    ("West", "Pacific", &["AK", "CA", "HI", "OR", "WA"]),
];

/// State effects: one shared level for South and Midwest, another for West and
/// Northeast, and a few states of their own.
fn state_effect(region: &str, state: &str) -> f64 {
    match state {
        "KY" | "WV" => 22.0,
        "UT" | "HI" => -24.0,
        _ if matches!(region, "South" | "Midwest") => 8.0,
        _ => -8.0,
    }
}

/// Writes `data.csv` and `hierarchy.csv` into `dir`.
pub fn write(dir: &Path, seed: u64) -> std::io::Result<(PathBuf, PathBuf)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states: Vec<(&str, &str, &str)> = GEOGRAPHY
        .iter()
        .flat_map(|(r, d, ss)| ss.iter().map(move |s| (*r, *d, *s)))
        .collect();

    let mut hierarchy = String::from("level_1,level_2,level_3\n");
    for (r, d, s) in &states {
        hierarchy.push_str(&format!("{r},{d},{s}\n"));
    }

    let weights: Vec<f64> = states
        .iter()
        .map(|(_, _, s)| if *s == "DC" { 0.0 } else { rng.random_range(0.2..2.0) })
        .collect();
    let total: f64 = weights.iter().sum();
    let mut counts: Vec<usize> = weights
        .iter()
        .zip(&states)
        .map(|(w, (_, _, s))| {
            if *s == "DC" {
                1
            } else {
                ((COUNTIES - 1) as f64 * w / total).floor().max(1.0) as usize
            }
        })
        .collect();
    let mut i = 0;
    while counts.iter().sum::<usize>() < COUNTIES {
        if states[i % states.len()].2 != "DC" {
            counts[i % states.len()] += 1;
        }
        i += 1;
    }

    let beta = [6.0, -4.0, 3.0, 2.5, -1.5];
    let noise = Normal::new(0.0, 14.0).expect("valid sd");
    let mut data = String::from("y,h_leaf,income,poverty,age,insured,density\n");
    for ((r, _, s), &n) in states.iter().zip(&counts) {
        for _ in 0..n {
            let x: Vec<f64> = (0..beta.len())
                .map(|_| 50.0 + 10.0 * rng.random_range(-1.0..1.0))
                .collect();
            let xb: f64 = beta.iter().zip(&x).map(|(b, v)| b * (v - 50.0) / 10.0).sum();
            let y = 180.0 + state_effect(r, s) + xb + noise.sample(&mut rng);
            data.push_str(&format!(
                "{y},{s},{}\n",
                x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
            ));
        }
    }

    let data_path = dir.join("cancer_reg.csv");
    let hierarchy_path = dir.join("geography.csv");
    std::fs::write(&data_path, data)?;
    std::fs::write(&hierarchy_path, hierarchy)?;
    Ok((data_path, hierarchy_path))
}
