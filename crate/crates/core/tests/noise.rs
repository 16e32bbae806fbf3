use std::collections::HashSet;

use hwprox_core::noise::{add_deadline, add_gaussian, add_impulse, add_stripe, replay, SigmaSpec};
use hwprox_core::{synth_noise, Error, HsiCube, NoiseCase, NoiseLog, NoiseSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scene(h: usize, w: usize, b: usize, seed: u64) -> HsiCube {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    HsiCube::new(h, w, b, (0..h * w * b).map(|_| rng.random::<f64>()).collect()).unwrap()
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn quiet(case: NoiseCase, seed: u64) -> NoiseSpec {
    NoiseSpec {
        sigma_range: (0.0, 0.0),
        impulse_ratio_range: (0.0, 0.0),
        stripe_ratio_range: (0.0, 0.0),
        deadline_ratio_range: (0.0, 0.0),
        ..NoiseSpec::new(case, seed)
    }
}

#[test]
fn zero_noise_is_identity() {
    let clean = scene(8, 8, 6, 1);
    for case in NoiseCase::ALL {
        let (noisy, _) = synth_noise(&clean, &quiet(case, 3)).unwrap();
        assert_eq!(noisy, clean, "{case:?}");
    }
}

#[test]
fn case1_gaussian_component_has_target_std() {
    let clean = HsiCube::filled(320, 320, 4, 0.5).unwrap();
    let spec = NoiseSpec {
        sigma_range: (30.0, 30.0),
        affected_band_count: Some(2),
        ..NoiseSpec::new(NoiseCase::Case1, 17)
    };
    let (noisy, log) = synth_noise(&clean, &spec).unwrap();
    assert_eq!(log.per_band_sigma, vec![30.0; 4]);
    let imp = log.impulse.as_ref().unwrap();
    for k in 0..4 {
        let hit: HashSet<usize> = imp
            .bands
            .iter()
            .position(|&b| b == k)
            .map(|i| imp.pixels[i].iter().copied().collect())
            .unwrap_or_default();
        let resid: Vec<f64> = (0..320 * 320)
            .filter(|p| !hit.contains(p))
            .map(|p| noisy.data()[p * 4 + k] - 0.5)
            .collect();
        assert!(resid.len() >= 50_000);
        let s = std_dev(&resid);
        assert!((s / (30.0 / 255.0) - 1.0).abs() < 0.02, "band {k}: {s}");
    }
}

#[test]
fn gaussian_levels_scale_noise() {
    let flat = HsiCube::filled(400, 250, 2, 0.0).unwrap();
    let out = add_gaussian(&flat, &SigmaSpec::PerBand(vec![25.5, 25.5]), 1).unwrap();
    assert!((std_dev(out.data()) / 0.1 - 1.0).abs() < 0.02);

    let out = add_gaussian(&flat, &SigmaSpec::PerBand(vec![10.0, 70.0]), 2).unwrap();
    let b0: Vec<f64> = out.data().iter().step_by(2).copied().collect();
    let b1: Vec<f64> = out.data().iter().skip(1).step_by(2).copied().collect();
    assert!(std_dev(&b0) < std_dev(&b1));

    let small = scene(4, 4, 2, 0);
    assert_eq!(add_gaussian(&small, &SigmaSpec::PerBand(vec![0.0, 0.0]), 5).unwrap(), small);
    assert!(add_gaussian(&small, &SigmaSpec::PerBand(vec![-1.0, 1.0]), 5).is_err());
    assert!(add_gaussian(&small, &SigmaSpec::PerBand(vec![1.0]), 5).is_err());
}

#[test]
fn impulse_counts_and_values() {
    let clean = scene(64, 64, 3, 4);
    let (out, rec) = add_impulse(&clean, 0.5, &[1], 9).unwrap();
    assert_eq!(rec.pixels[0].len(), 2048);
    let changed = (0..64 * 64).filter(|&p| out.data()[p * 3 + 1] != clean.data()[p * 3 + 1]).count();
    assert_eq!(changed, 2048);
    for k in [0, 2] {
        assert!((0..64 * 64).all(|p| out.data()[p * 3 + k] == clean.data()[p * 3 + k]));
    }

    let (all, _) = add_impulse(&clean, 1.0, &[2], 9).unwrap();
    assert!((0..64 * 64).all(|p| matches!(all.data()[p * 3 + 2], 0.0 | 1.0)));

    let (same, rec) = add_impulse(&clean, 0.0, &[0, 1], 9).unwrap();
    assert_eq!(same, clean);
    assert!(rec.pixels.iter().all(Vec::is_empty));
    assert!(add_impulse(&clean, 1.5, &[0], 1).is_err());
    assert!(add_impulse(&clean, 0.1, &[3], 1).is_err());
}

#[test]
fn stripes_are_constant_down_columns() {
    let clean = scene(30, 40, 3, 5);
    let (out, rec) = add_stripe(&clean, 0.2, &[0, 2], 6).unwrap();
    assert_eq!(rec.cols[0].len(), 8);
    for ((&band, cols), offs) in rec.bands.iter().zip(&rec.cols).zip(&rec.offsets) {
        for (&j, &o) in cols.iter().zip(offs) {
            assert!(o.abs() <= 0.25);
            let diffs: Vec<f64> = (0..30).map(|i| out.get(i, j, band) - clean.get(i, j, band)).collect();
            assert!(diffs.iter().all(|d| (d - o).abs() < 1e-12));
        }
        let untouched = (0..40).filter(|j| !cols.contains(j));
        for j in untouched {
            assert!((0..30).all(|i| out.get(i, j, band) == clean.get(i, j, band)));
        }
    }
    assert_eq!(add_stripe(&clean, 0.0, &[1], 6).unwrap().0, clean);
}

#[test]
fn deadlines_zero_whole_columns() {
    let clean = scene(12, 10, 2, 7);
    let (out, rec) = add_deadline(&clean, 0.2, &[1], 8).unwrap();
    assert_eq!(rec.cols[0].len(), 2);
    for j in 0..10 {
        let zero = (0..12).all(|i| out.get(i, j, 1) == 0.0);
        assert_eq!(zero, rec.cols[0].contains(&j));
    }
    let wide = scene(5, 100, 4, 1);
    let spec = NoiseSpec {
        deadline_ratio_range: (0.1, 0.1),
        affected_band_count: Some(1),
        ..NoiseSpec::new(NoiseCase::Case3, 2)
    };
    let (_, log) = synth_noise(&wide, &spec).unwrap();
    assert_eq!(log.deadline.unwrap().cols[0].len(), 10);
}

#[test]
fn case5_logs_every_mechanism() {
    let clean = scene(16, 16, 8, 9);
    let (noisy, log) = synth_noise(&clean, &NoiseSpec::new(NoiseCase::Case5, 4)).unwrap();
    assert!(log.impulse.is_some() && log.stripe.is_some() && log.deadline.is_some());
    assert!(log.sigma_clamp.is_some());
    // deadlines are applied last, so their columns are exactly zero
    let d = log.deadline.as_ref().unwrap();
    for (&band, cols) in d.bands.iter().zip(&d.cols) {
        for &j in cols {
            assert!((0..16).all(|i| noisy.get(i, j, band) == 0.0));
        }
    }
    let (_, log1) = synth_noise(&clean, &NoiseSpec::new(NoiseCase::Case1, 4)).unwrap();
    assert!(log1.stripe.is_none() && log1.deadline.is_none() && log1.sigma_clamp.is_none());
}

#[test]
fn varying_levels_stay_in_range() {
    let clean = HsiCube::filled(24, 24, 4, 0.5).unwrap();
    let (_, log) = synth_noise(&clean, &NoiseSpec::new(NoiseCase::Case4, 12)).unwrap();
    assert_eq!(log.sigma_clamp, Some((10.0, 70.0)));
    assert!(log.per_band_sigma.iter().all(|s| (10.0..=70.0).contains(s)));
}

#[test]
fn band_count_is_validated() {
    let clean = scene(8, 8, 4, 1);
    let spec = NoiseSpec {
        affected_band_count: Some(5),
        ..NoiseSpec::new(NoiseCase::Case1, 0)
    };
    assert!(matches!(synth_noise(&clean, &spec), Err(Error::Argument(_))));
    let bright = clean.map(|v| v + 1.0).unwrap();
    assert!(synth_noise(&bright, &NoiseSpec::new(NoiseCase::Case1, 0)).is_err());
    assert!(serde_json::from_str::<NoiseSpec>(r#"{"case":"case6"}"#).is_err());
    assert!(serde_json::from_str::<NoiseSpec>(r#"{"case":"case2","extra":0}"#).is_err());
    let s: NoiseSpec = serde_json::from_str(r#"{"case":"case2","seed":5}"#).unwrap();
    assert_eq!(s, NoiseSpec::new(NoiseCase::Case2, 5));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn synthesis_is_deterministic_and_replayable(seed in any::<u64>(), case_idx in 0usize..5) {
        let clean = scene(10, 12, 6, seed ^ 0x55);
        let spec = NoiseSpec::new(NoiseCase::ALL[case_idx], seed);
        let (a, log) = synth_noise(&clean, &spec).unwrap();
        let (b, log_b) = synth_noise(&clean, &spec).unwrap();
        prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        prop_assert_eq!(&log, &log_b);

        let json = serde_json::to_string(&log).unwrap();
        let back: NoiseLog = serde_json::from_str(&json).unwrap();
        let r = replay(&clean, &back).unwrap();
        prop_assert!(a.data().iter().zip(r.data()).all(|(x, y)| x.to_bits() == y.to_bits()));

        let area = 10.0 * 12.0;
        if let Some(imp) = &log.impulse {
            for px in &imp.pixels {
                prop_assert_eq!(px.len(), (imp.ratio * area).round() as usize);
            }
        }
        if let Some(st) = &log.stripe {
            for cols in &st.cols {
                prop_assert_eq!(cols.len(), (st.ratio * 12.0).round() as usize);
            }
        }
        if let Some(dl) = &log.deadline {
            for cols in &dl.cols {
                prop_assert_eq!(cols.len(), (dl.ratio * 12.0).round() as usize);
            }
        }
    }
}
