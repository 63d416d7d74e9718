mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use routesim_core::channel::ChannelConfig;
use routesim_core::reward::*;
use routesim_nn::{finite_diff_check, ParameterSet};

fn sets() -> TaskExpertSets {
    TaskExpertSets {
        core: vec![1, 2],
        irrelevant: vec![0, 4, 5, 6],
    }
}

fn simplex(raw: &[f64]) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

#[test]
fn thousand_random_vectors_match_brute_force() {
    let cfg = RewardConfig::default();
    let ch = ChannelConfig::default();
    let sets = sets();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let w: Vec<f64> = (0..7).map(|_| rng.random::<f64>()).collect();
        let q: Vec<f64> = (0..7).map(|_| rng.random::<f64>()).collect();
        let snr: Vec<f64> = (0..7).map(|_| rng.random_range(0.0..30.0)).collect();
        let l = llm_reward(&w, &sets, &q, &cfg);
        assert!((l.r1 - common::brute_r1(&w, &sets.core, cfg.theta_act)).abs() <= 1e-12);
        assert!((l.r2 - common::brute_r2(&w, &sets.irrelevant, cfg.theta_sup)).abs() <= 1e-12);
        assert!((l.r3 - common::brute_r3(&w, &sets.core)).abs() <= 1e-12);
        let active: Vec<usize> = (0..7).filter(|i| w[*i] > 0.3).collect();
        let aw: Vec<f64> = active.iter().map(|&i| w[i]).collect();
        let c = channel_reward(&active, &aw, &snr, &ch, &cfg);
        for v in [l.r1, l.r2, l.r3, l.r4, l.r_llm, c.q_bar, c.stability, c.load_entropy, c.spectral_eff, c.r_channel] {
            assert!((0.0..=1.0).contains(&v), "{v}");
        }
    }
}

#[test]
fn worked_channel_examples() {
    let ch = ChannelConfig::default();
    let cfg = RewardConfig::default();
    assert_eq!(channel_reward(&[0], &[1.0], &[15.0], &ch, &cfg).q_bar, 0.5);
    let e = channel_reward(&[0], &[1.0], &[10.0], &ch, &cfg).spectral_eff;
    // log2(11) / log2(1 + 10^2.5)
    assert!((e - 0.416).abs() < 5e-4, "{e}");
}

#[test]
fn r4_is_aggregate_quality_on_three_experts() {
    let cfg = RewardConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..500 {
        let mut idx: Vec<usize> = (0..7).collect();
        for i in (1..7).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        let raw: Vec<f64> = (0..3).map(|_| rng.random::<f64>() + 1e-3).collect();
        let share = simplex(&raw);
        let mut w = vec![0.0; 7];
        for (k, &i) in idx[..3].iter().enumerate() {
            w[i] = share[k];
        }
        let q: Vec<f64> = (0..7).map(|_| rng.random::<f64>()).collect();
        let aggregate: f64 = (0..7).map(|i| w[i] * q[i]).sum();
        let r4 = llm_reward(&w, &sets(), &q, &cfg).r4;
        assert!((r4 - aggregate).abs() < 1e-12, "{r4} vs {aggregate}");
    }
}

#[test]
fn meta_net_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let meta = MetaNet::new(&mut rng).unwrap();
    let features: Vec<[f64; D_CONF]> = (0..3)
        .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
        .collect();
    let targets = vec![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
    let net = meta.network().clone();
    let mut sets = [meta.params.clone()];
    let err = finite_diff_check(&mut sets, 1e-6, |tape, p: &[ParameterSet]| {
        MetaNet::loss(&net, tape, &p[0], &features, &targets)
            .map_err(|e| routesim_nn::NnError::Config(e.to_string()))
    })
    .unwrap();
    assert!(err < 1e-3, "relative error {err}");
}

#[test]
fn meta_training_touches_only_its_own_parameters() {
    use routesim_core::harness::{ScenarioConfig, Simulation};
    let mut cfg = ScenarioConfig::default();
    cfg.agent.actor_hidden = vec![8];
    cfg.agent.critic_hidden = vec![8];
    let mut sim = Simulation::new(cfg).unwrap();
    let before: Vec<ParameterSet> = sim.named_sets().into_iter().map(|(_, s)| s.clone()).collect();
    let meta_before = sim.meta.params.clone();
    sim.meta.train_step(&[0.3; D_CONF], [1.0, 0.0], 1e-2).unwrap();
    let after = sim.named_sets();
    for ((name, a), b) in after.iter().zip(&before) {
        if name == "meta" {
            assert!(!a.values_equal(&meta_before));
        } else {
            assert!(a.values_equal(b), "{name} changed");
        }
    }
}

proptest! {
    #[test]
    fn components_stay_in_unit_interval(
        raw in prop::collection::vec(0.0f64..1.0, 7),
        q in prop::collection::vec(0.0f64..1.0, 7),
        snr in prop::collection::vec(-10.0f64..40.0, 7),
        k in 1usize..7,
    ) {
        let cfg = RewardConfig::default();
        let l = llm_reward(&raw, &sets(), &q, &cfg);
        let active: Vec<usize> = (0..k).collect();
        let c = channel_reward(&active, &raw[..k], &snr, &ChannelConfig::default(), &cfg);
        for v in [l.r1, l.r2, l.r3, l.r4, l.r_llm, c.q_bar, c.stability, c.load_entropy, c.spectral_eff, c.r_channel] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let f = final_reward(l.r_llm, c.r_channel, cfg.alpha, cfg.beta);
        prop_assert!((0.0..=1.0).contains(&f));
    }

    #[test]
    fn channel_reward_ignores_active_order(
        w in prop::collection::vec(0.01f64..1.0, 4),
        snr in prop::collection::vec(0.0f64..30.0, 7),
        seed in any::<u64>(),
    ) {
        let cfg = RewardConfig::default();
        let ch = ChannelConfig::default();
        let active = vec![0usize, 2, 3, 6];
        let mut perm: Vec<usize> = (0..4).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..4).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let a2: Vec<usize> = perm.iter().map(|&p| active[p]).collect();
        let w2: Vec<f64> = perm.iter().map(|&p| w[p]).collect();
        let x = channel_reward(&active, &w, &snr, &ch, &cfg);
        let y = channel_reward(&a2, &w2, &snr, &ch, &cfg);
        prop_assert!((x.r_channel - y.r_channel).abs() < 1e-12);
        prop_assert!((x.stability - y.stability).abs() < 1e-12);
    }
}
