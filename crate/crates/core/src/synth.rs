//! Synthetic short-term-rental listings with a known pricing function.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureSpec, Row, Schema, Value};
use crate::rng::SplitMix64;

pub const TARGET: &str = "price";
pub const PRICE_FLOOR: f64 = 10.0;
pub const PRICE_CAP: f64 = 500.0;

/// Feature columns, in schema order.
pub const FEATURES: [&str; 7] = [
    "distance_to_center",
    "person_capacity",
    "picture_count",
    "mos",
    "entire_home",
    "cancel_flexible",
    "city_population",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
}

fn default_noise_sd() -> f64 {
    10.0
}

impl SynthConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            noise_sd: default_noise_sd(),
        }
    }
}

/// One listing's features in natural units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Listing {
    pub distance_to_center: f64,
    pub person_capacity: f64,
    pub picture_count: f64,
    pub mos: f64,
    pub entire_home: f64,
    pub cancel_flexible: f64,
    pub city_population: f64,
}

impl Listing {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.distance_to_center,
            self.person_capacity,
            self.picture_count,
            self.mos,
            self.entire_home,
            self.cancel_flexible,
            self.city_population,
        ]
    }
}

/// Noise-free nightly price.
pub fn ground_truth_price(l: &Listing) -> f64 {
    30.0 + 40.0 * l.person_capacity.powf(0.7) - 8.0 * (1.0 + l.distance_to_center).ln()
        + if l.picture_count >= 8.0 { 12.0 } else { 0.0 }
        + 6.0 * l.mos
        + 15.0 * l.entire_home
        + 0.5 * l.person_capacity * l.entire_home
        + 3.0 * l.city_population.log10()
        - 5.0 * l.cancel_flexible
}

pub fn schema() -> Schema {
    let features = FEATURES
        .iter()
        .map(|&name| match name {
            "entire_home" | "cancel_flexible" => FeatureSpec::binary(name),
            _ => FeatureSpec::numeric(name),
        })
        .collect();
    Schema::new(features, TARGET).expect("static schema is valid")
}

/// Draws `cfg.n` listings. Feature draws come from one [`SplitMix64`] stream
/// seeded with `cfg.seed`; each row's noise is drawn right after its features.
pub fn generate(cfg: &SynthConfig) -> Dataset {
    let mut rng = SplitMix64::new(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_sd.max(0.0)).expect("noise_sd is finite");
    let mut rows = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let l = Listing {
            distance_to_center: 30.0 * rng.unit(),
            person_capacity: (1 + rng.below(10)) as f64,
            picture_count: (1 + rng.below(30)) as f64,
            mos: 1.0 + 4.0 * rng.unit(),
            entire_home: f64::from(u8::from(rng.unit() < 0.6)),
            cancel_flexible: f64::from(u8::from(rng.unit() < 0.5)),
            city_population: 10f64.powf(5.0 + 2.0 * rng.unit()),
        };
        let eps = if cfg.noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        let price = (ground_truth_price(&l) + eps).clamp(PRICE_FLOOR, PRICE_CAP);
        rows.push(Row {
            features: l.to_vec().into_iter().map(|x| Some(Value::Number(x))).collect(),
            target: Some(price),
        });
    }
    Dataset::new(
        schema(),
        rows,
        format!("synth:n={},seed={},noise_sd={}", cfg.n, cfg.seed, cfg.noise_sd),
    )
    .expect("rows match schema")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty() {
        let ds = generate(&SynthConfig::new(0, 1));
        assert!(ds.is_empty());
        assert_eq!(ds.schema.len(), 7);
        assert_eq!(ds.schema.target, "price");
    }

    #[test]
    fn deterministic() {
        let cfg = SynthConfig::new(200, 9);
        let mut a = Vec::new();
        let mut b = Vec::new();
        generate(&cfg).write_csv(&mut a).unwrap();
        generate(&cfg).write_csv(&mut b).unwrap();
        assert_eq!(a, b);
        assert_ne!(generate(&SynthConfig::new(200, 10)), generate(&cfg));
    }

    #[test]
    fn fixed_row_matches_formula() {
        // Term-by-term hand evaluation of the pricing rule.
        let l = Listing {
            distance_to_center: 2.0,
            person_capacity: 4.0,
            picture_count: 10.0,
            mos: 4.0,
            entire_home: 1.0,
            cancel_flexible: 0.0,
            city_population: 1e6,
        };
        let expected = 30.0 + 40.0 * 4f64.powf(0.7) - 8.0 * 3f64.ln() + 12.0 + 24.0 + 15.0 + 2.0 + 18.0;
        assert!((ground_truth_price(&l) - expected).abs() < 1e-12);
        assert!((expected - 197.771_734_552_486_7).abs() < 1e-9);
    }

    #[test]
    fn noiseless_targets_equal_formula() {
        let mut cfg = SynthConfig::new(300, 4);
        cfg.noise_sd = 0.0;
        let ds = generate(&cfg);
        let (x, y) = ds.to_matrix().unwrap();
        for (xr, &t) in x.iter().zip(&y) {
            let l = Listing {
                distance_to_center: xr[0],
                person_capacity: xr[1],
                picture_count: xr[2],
                mos: xr[3],
                entire_home: xr[4],
                cancel_flexible: xr[5],
                city_population: xr[6],
            };
            assert_eq!(t, ground_truth_price(&l).clamp(PRICE_FLOOR, PRICE_CAP));
        }
    }

    #[test]
    fn ranges() {
        let ds = generate(&SynthConfig::new(2_000, 42));
        let (x, y) = ds.to_matrix().unwrap();
        assert!(y.iter().all(|&t| (PRICE_FLOOR..=PRICE_CAP).contains(&t)));
        for r in &x {
            assert!((0.0..30.0).contains(&r[0]));
            assert!((1.0..=10.0).contains(&r[1]) && r[1].fract() == 0.0);
            assert!((1.0..=30.0).contains(&r[2]) && r[2].fract() == 0.0);
            assert!((1.0..5.0).contains(&r[3]));
            assert!(r[4] == 0.0 || r[4] == 1.0);
            assert!(r[5] == 0.0 || r[5] == 1.0);
            assert!((1e5..1e7 * (1.0 + 1e-12)).contains(&r[6]));
        }
        let share = x.iter().filter(|r| r[4] == 1.0).count() as f64 / x.len() as f64;
        assert!((share - 0.6).abs() < 0.05);
    }
}
