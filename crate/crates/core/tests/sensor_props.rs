use borderwatch_core::sensor::{is_detection, sample, IrSensorConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn quiet() -> IrSensorConfig {
    IrSensorConfig::default()
}

#[test]
fn detection_matches_range_on_half_cm_grid() {
    let cfg = quiet();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for k in 1..=(4 * 30) {
        let d = k as f64 * 0.5;
        let hit = is_detection(sample(&cfg, Some(d), &mut rng).unwrap(), &cfg);
        assert_eq!(hit, (2.0..=30.0).contains(&d), "d = {d}");
    }
}

#[test]
fn linear_map_against_direct_formula() {
    // independent evaluation of round((d - 2) / 28 * 823) in f64 with std rounding
    let cfg = quiet();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for k in 4..=60 {
        let d = k as f64 * 0.5;
        let expected = ((d - 2.0) / 28.0 * 823.0).round() as u16;
        assert_eq!(sample(&cfg, Some(d), &mut rng).unwrap().value(), expected, "d = {d}");
    }
}

proptest! {
    #[test]
    fn monotone_in_distance(a in 2.0f64..=30.0, b in 2.0f64..=30.0) {
        let cfg = quiet();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let rl = sample(&cfg, Some(lo), &mut rng).unwrap();
        let rh = sample(&cfg, Some(hi), &mut rng).unwrap();
        prop_assert!(rl <= rh);
    }

    #[test]
    fn output_stays_on_scale(
        d in proptest::option::of(0.01f64..100.0),
        noise in 0u16..=176,
        seed in any::<u64>(),
    ) {
        let cfg = IrSensorConfig { noise_amplitude: noise, ..quiet() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = sample(&cfg, d, &mut rng).unwrap();
        prop_assert!(r.value() <= cfg.adc_full_scale);
        if d.is_none_or(|d| !cfg.in_range(d)) {
            prop_assert!(!is_detection(r, &cfg));
        }
    }

    #[test]
    fn same_seed_same_reading(d in 0.01f64..60.0, noise in 0u16..=176, seed in any::<u64>()) {
        let cfg = IrSensorConfig { noise_amplitude: noise, ..quiet() };
        let a = sample(&cfg, Some(d), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = sample(&cfg, Some(d), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a, b);
    }
}
