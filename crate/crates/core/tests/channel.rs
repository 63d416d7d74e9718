mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use routesim_core::channel::*;

#[test]
fn default_channel_statistics() {
    let s = common::channel_statistics(&ChannelConfig::default(), 7, 100_000, 11);
    for (a, v) in s.autocorrelation.iter().zip(&s.variance_ratio) {
        assert!((a - 0.9).abs() <= 0.05, "autocorrelation {a}");
        assert!((v - 1.0).abs() <= 0.05, "variance ratio {v}");
    }
    assert!((s.fading_mean - 1.0).abs() <= 0.02, "fading mean {}", s.fading_mean);
}

#[test]
fn calibrated_links_track_their_target_mean() {
    let cfg = ChannelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ch = init_channels(&cfg, 4, &mut rng).unwrap();
    let n = 50_000;
    let mut sums = [0.0; 4];
    for _ in 0..n {
        ch.step(&cfg, &mut rng);
        for (s, l) in sums.iter_mut().zip(&ch.links) {
            *s += l.snr;
        }
    }
    for (s, l) in sums.iter().zip(&ch.links) {
        let m = s / n as f64;
        assert!((m - l.mean_snr).abs() < 0.3, "mean {m} vs target {}", l.mean_snr);
    }
}

#[test]
fn burst_penalty_applies_only_inside_window() {
    let cfg = ChannelConfig {
        mean_snr_std: 0.0,
        shadow_mean: 0.0,
        shadow_std: 0.0,
        ..ChannelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut ch = init_channels(&cfg, 3, &mut rng).unwrap();
    ch.inject_burst(
        InterferenceEvent {
            start_step: 2,
            duration: 3,
            snr_penalty: 15.0,
            affected_channels: vec![1],
        },
        &cfg,
    )
    .unwrap();
    for t in 0..8u64 {
        let clean = ch.compute_snr(1, &cfg);
        let expect = if (2..5).contains(&t) { clean - 15.0 } else { clean };
        assert_eq!(ch.observe()[1], expect, "t = {t}");
        assert_eq!(ch.observe()[0], ch.compute_snr(0, &cfg));
        ch.step(&cfg, &mut rng);
    }
    let late = InterferenceEvent {
        start_step: 0,
        duration: 1,
        snr_penalty: 1.0,
        affected_channels: vec![0],
    };
    assert!(ch.inject_burst(late, &cfg).is_err());
}

#[test]
fn zero_gain_hits_the_floor() {
    let cfg = ChannelConfig::default();
    assert_eq!(link_budget_snr(100.0, 0.0, &cfg), cfg.snr_floor);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn shadowing_is_stationary_for_any_correlation(rho in 0.0f64..0.97, seed in any::<u64>()) {
        let cfg = ChannelConfig { correlation: rho, ..ChannelConfig::default() };
        let s = common::channel_statistics(&cfg, 2, 20_000, seed);
        for (a, v) in s.autocorrelation.iter().zip(&s.variance_ratio) {
            prop_assert!((a - rho).abs() < 0.06, "rho {} got {}", rho, a);
            // 20k correlated draws: effective sample size shrinks as rho grows
            prop_assert!((v - 1.0).abs() < 0.25, "variance ratio {}", v);
        }
    }

    #[test]
    fn normalized_snr_is_clamped(snr in -100.0f64..100.0) {
        let v = ChannelConfig::default().normalize_snr(snr);
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn snr_never_drops_below_floor(seed in any::<u64>()) {
        let cfg = ChannelConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ch = init_channels(&cfg, 7, &mut rng).unwrap();
        for _ in 0..50 {
            ch.step(&cfg, &mut rng);
            for (i, s) in ch.observe().iter().enumerate() {
                prop_assert!(s.is_finite());
                prop_assert!(*s >= cfg.snr_floor + ch.links[i].offset - 1e-9);
            }
        }
    }
}
