mod common;

use std::f64::consts::PI;

use common::{brute_pairs, cumulative, oracle_round, positions};
use proptest::prelude::*;
use rand::Rng;
use rope_probe::failure::{
    count_attention_invariance_pairs, count_pos_aliasing_pairs, count_position_inversions,
    enumerate_attention_invariance, enumerate_pos_aliasing, enumerate_token_aliasing, pos_inversion_empirical,
    pos_inversion_monte_carlo, sweep, token_inversion_empirical, SweepGrid,
};
use rope_probe::sampling::{random_spectrum, stream_rng, SpectrumKind};
use rope_probe::stats::exact_mean;
use rope_probe::{DTypeFormat, RopeConfig, Spectrum};

fn spectrum_strategy(max_m: u64) -> impl Strategy<Value = (Spectrum, Spectrum, u64)> {
    (1usize..=16, 1.5f64..6.0, 2u64..=max_m, any::<u64>()).prop_map(move |(h, log_base, m, seed)| {
        let base = 10f64.powf(log_base);
        let m = m.min((2.0 * PI * base).ceil() as u64 - 1);
        let config = RopeConfig::new(h, base, m).unwrap();
        let mut rng = stream_rng(seed, 0);
        let kind = if seed % 2 == 0 { SpectrumKind::RandomQk } else { SpectrumKind::RandomPhase };
        let s1 = random_spectrum(&config, kind, &mut rng).unwrap();
        let s2 = random_spectrum(&config, kind, &mut rng).unwrap();
        (s1, s2, m)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn enumerations_match_brute_force((s1, s2, m) in spectrum_strategy(512), which in 0usize..4) {
        let dtype = DTypeFormat::builtins()[which].clone();
        let (x, y) = (s1.series(0, m).unwrap(), s2.series(0, m).unwrap());
        let rx: Vec<f64> = x.iter().map(|&v| oracle_round(v, &dtype)).collect();
        let ry: Vec<f64> = y.iter().map(|&v| oracle_round(v, &dtype)).collect();

        let alias = brute_pairs(&rx, None);
        prop_assert_eq!(&enumerate_pos_aliasing(&x, &dtype).pairs, &alias);
        prop_assert_eq!(count_pos_aliasing_pairs(&x, &dtype), alias.len() as u64);

        let joint = brute_pairs(&rx, Some(&ry));
        prop_assert_eq!(&enumerate_attention_invariance(&x, &y, &dtype).unwrap().pairs, &joint);
        prop_assert_eq!(count_attention_invariance_pairs(&x, &y, &dtype).unwrap(), joint.len() as u64);

        let flags: Vec<bool> = rx.iter().zip(&ry).map(|(a, b)| a == b).collect();
        let set = enumerate_token_aliasing(&x, &y, &dtype).unwrap();
        prop_assert_eq!(&set.positions, &positions(&flags));
        prop_assert_eq!(&set.curve, &cumulative(&flags));
    }

    #[test]
    fn token_inversion_matches_brute_force((s1, s2, m) in spectrum_strategy(2048), pick in any::<u64>()) {
        let (x, y) = (s1.series(0, m).unwrap(), s2.series(0, m).unwrap());
        let baseline = (pick % m) as usize;
        let d0 = x[baseline] - y[baseline];
        prop_assume!(d0 != 0.0);
        let flags: Vec<bool> = x.iter().zip(&y).map(|(a, b)| (a - b) * d0.signum() < 0.0).collect();
        let set = token_inversion_empirical(&x, &y, baseline).unwrap();
        prop_assert_eq!(&set.positions, &positions(&flags));
        prop_assert!(!flags[baseline]);
    }

    #[test]
    fn position_inversion_count_matches_quadratic((s, _, m) in spectrum_strategy(1024)) {
        let x = s.series(0, m).unwrap();
        let half = x.len() / 2;
        let mut brute = 0u64;
        for i in 0..half {
            for j in half..x.len() {
                brute += u64::from(x[i] < x[j]);
            }
        }
        let (inverted, total) = count_position_inversions(&x);
        prop_assert_eq!(inverted, brute);
        prop_assert_eq!(total, (half * (x.len() - half)) as u64);
    }
}

#[test]
fn exact_mean_matches_direct_sum_over_random_spectra() {
    let mut rng = stream_rng(21, 0);
    let mut worst = 0f64;
    for _ in 0..1000 {
        let h = rng.random_range(1..=64);
        let base = 10f64.powf(rng.random_range(2.0..7.0));
        let limit = ((2.0 * PI * base).ceil() as u64 - 1).min(4096);
        let count = rng.random_range(1..=limit);
        let start = rng.random_range(0..=limit - count);
        let config = RopeConfig::new(h, base, limit).unwrap();
        let s = random_spectrum(&config, SpectrumKind::RandomQk, &mut rng).unwrap();
        let series = s.series(start, start + count).unwrap();
        let direct = series.iter().sum::<f64>() / count as f64;
        let closed = exact_mean(&s, start as i64, count).unwrap();
        let scale: f64 = s.amplitudes().iter().sum();
        worst = worst.max((closed - direct).abs() / scale.max(1.0));
    }
    assert!(worst < 1e-10, "worst scaled deviation {worst:e}");
}

#[test]
fn monte_carlo_interval_brackets_exact_fraction() {
    let m = 4096;
    let config = RopeConfig::new(32, 1e4, m).unwrap();
    let mut rng = stream_rng(22, 0);
    let trials = 40;
    let mut covered = 0;
    for i in 0..trials {
        let s = random_spectrum(&config, SpectrumKind::RandomQk, &mut rng).unwrap();
        let exact = pos_inversion_empirical(&s, m).unwrap().empirical_prob.unwrap();
        let mc = pos_inversion_monte_carlo(&s, m, 4000, i).unwrap();
        covered += usize::from(mc.contains(exact));
    }
    // 95% intervals: fewer than 34 of 40 covering has probability below 1%
    assert!(covered >= 34, "{covered}/{trials} intervals covered the exact fraction");
}

#[test]
fn sweep_is_independent_of_worker_count() {
    let grid: SweepGrid = serde_json::from_str(
        r#"{"h": 16, "M": [256, 1024], "B": [1e4, 1e6], "dtypes": ["bf16", "5,4"], "seed": 3, "mc_samples": 200,
            "spectrum": "random-qk"}"#,
    )
    .unwrap();
    let runs: Vec<_> = [Some(1), Some(4), None]
        .into_iter()
        .map(|w| serde_json::to_vec(&sweep(&SweepGrid { workers: w, ..grid.clone() }).unwrap()).unwrap())
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
}
