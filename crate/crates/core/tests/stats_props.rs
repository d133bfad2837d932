use bartlab_core::stats::{quantile, shapiro_wilk, standardize, summary, StandardizeMode};
use bartlab_core::{draw, Distribution, RandomStream};
use proptest::prelude::*;

proptest! {
    #[test]
    fn zscore_has_unit_scale(col in prop::collection::vec(-1e3f64..1e3, 2..60)) {
        let (out, flags) = standardize(&[col.clone()], StandardizeMode::Zscore).unwrap();
        if flags[0] {
            prop_assert!(out[0].iter().all(|v| *v == 0.0));
        } else {
            let s = summary(&out[0]).unwrap();
            prop_assert!(s.mean.abs() < 1e-12);
            prop_assert!((s.sd - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn minmax_lands_in_unit_interval(col in prop::collection::vec(-50f64..50.0, 2..40)) {
        let (out, flags) = standardize(&[col], StandardizeMode::Minmax).unwrap();
        if !flags[0] {
            prop_assert!(out[0].iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn quantile_is_monotone_and_bracketed(
        values in prop::collection::vec(-1e6f64..1e6, 1..50),
        a in 0.0f64..=1.0,
        b in 0.0f64..=1.0,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let ql = quantile(&values, lo).unwrap();
        let qh = quantile(&values, hi).unwrap();
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(ql <= qh);
        prop_assert!(min <= ql && qh <= max);
    }

    #[test]
    fn skewness_finite_when_spread(values in prop::collection::vec(-10f64..10.0, 3..30)) {
        let s = summary(&values).unwrap();
        prop_assert!(s.sd >= 0.0);
        if s.max > s.min {
            prop_assert!(s.skewness.unwrap().is_finite());
        }
    }

    #[test]
    fn streams_replay_bit_identically(seed in any::<u64>(), stream in any::<u64>()) {
        let mut a = RandomStream::new(seed, stream);
        let mut b = RandomStream::new(seed, stream);
        let d = Distribution::InverseGamma { shape: 2.5, scale: 1.5 };
        for _ in 0..16 {
            prop_assert_eq!(draw(&mut a, &d).unwrap().to_bits(), draw(&mut b, &d).unwrap().to_bits());
        }
    }
}

#[test]
fn shapiro_wilk_size_under_normal_null() {
    let mut rng = RandomStream::new(2024, 0);
    let sims = 1000;
    let rejected = (0..sims)
        .filter(|_| {
            let x: Vec<f64> = (0..100).map(|_| rng.standard_normal()).collect();
            shapiro_wilk(&x).unwrap().p < 0.05
        })
        .count();
    let rate = rejected as f64 / sims as f64;
    assert!((0.03..=0.07).contains(&rate), "rejection rate {rate}");
}
