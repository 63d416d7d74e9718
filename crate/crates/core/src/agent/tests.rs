use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use routesim_nn::{finite_diff_check, Binding, NnError, ParameterSet, Tape};

use super::*;

fn tiny_layout(n: usize) -> StateLayout {
    StateLayout {
        img: 4,
        text: 3,
        tag: 2,
        mask: n,
        latent: 2,
    }
}

/// Mechanics are checked at τ = 0.1, α_ent = 0.2, γ = 0.99 rather than the
/// defaults.
fn tiny_config() -> AgentConfig {
    AgentConfig {
        gamma: 0.99,
        temperature: 0.1,
        learning_rate: 7e-4,
        alpha_ent: 0.2,
        log_prob: LogProbKind::Concrete,
        batch_size: 8,
        buffer_capacity: 64,
        actor_hidden: vec![8],
        critic_hidden: vec![8, 8],
        ..AgentConfig::default()
    }
}

fn tiny_agent(mode: CriticMode, seed: u64) -> Agent {
    Agent::new(tiny_config(), mode, tiny_layout(3), seed).unwrap()
}

fn random_transition(agent: &Agent, rng: &mut ChaCha8Rng, done: bool) -> Transition {
    let d = agent.layout.dim();
    let s: Arc<[f64]> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let s2: Arc<[f64]> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut action = Vec::new();
    for _ in 0..2 {
        let raw: Vec<f64> = (0..agent.n).map(|_| rng.random_range(0.05..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        action.extend(raw.iter().map(|v| v / sum));
    }
    Transition {
        state: s,
        action,
        r_llm: rng.random_range(0.0..1.0),
        r_channel: rng.random_range(0.0..1.0),
        next_state: s2,
        done,
    }
}

fn filled(mode: CriticMode, seed: u64, count: usize) -> Agent {
    let mut agent = tiny_agent(mode, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    for i in 0..count {
        let t = random_transition(&agent, &mut rng, i % 5 == 4);
        agent.buffer.push(t);
    }
    agent
}

/// Rewrites critic weights so that `Q(s, a) = c + k·a[action_index]`.
fn stub_critic(agent: &Agent, set: &mut ParameterSet, action_index: usize, k: f64, c: f64) {
    let d = agent.layout.dim();
    let layers = &agent.critic_net.net.layers;
    for (li, layer) in layers.iter().enumerate() {
        let w = set.get_mut(&layer.weight_name()).unwrap().values_mut();
        w.iter_mut().for_each(|v| *v = 0.0);
        if li == 0 {
            w[d + action_index] = 1.0;
        } else if li + 1 == layers.len() {
            w[0] = k;
        } else {
            w[0] = 1.0;
        }
        let b = set.get_mut(&layer.bias_name()).unwrap().values_mut();
        b.iter_mut().for_each(|v| *v = 0.0);
        if li + 1 == layers.len() {
            b[0] = c;
        }
    }
}

fn stub_all_critics(agent: &mut Agent, action_index: usize, k: f64, c: f64) {
    let mut critics = std::mem::take(&mut agent.critics);
    for set in critics.iter_mut() {
        stub_critic(agent, set, action_index, k, c);
    }
    agent.critics = critics;
}

fn mean_expert_policy(agent: &mut Agent, state: &[f64]) -> Vec<f64> {
    agent.act(state, ActMode::Mean).unwrap().w_expert
}

#[test]
fn terminal_target_is_reward() {
    assert_eq!(soft_target(1.0, true, 0.99, 123.0, 4.0), 1.0);
}

#[test]
fn target_arithmetic() {
    let y = soft_target(1.0, false, 0.99, 2.0, 0.0);
    assert!((y - 2.98).abs() < 1e-12);
    // entropy term is subtracted inside the discounted bracket
    let y = soft_target(1.0, false, 0.5, 2.0, 0.4);
    assert!((y - 1.8).abs() < 1e-12);
}

#[test]
fn compute_targets_terminal_batch_equals_rewards() {
    let mut agent = filled(CriticMode::Decoupled, 3, 20);
    let idx: Vec<usize> = (0..20).filter(|i| i % 5 == 4).collect();
    let batch = agent.gather(&idx);
    let y = agent.compute_targets(&batch).unwrap();
    assert_eq!(y[0], batch.rewards[0]);
    assert_eq!(y[1], batch.rewards[1]);
}

#[test]
fn compute_targets_use_twin_minimum() {
    // Target critics constant at 2 and 5 → min is 2 regardless of the action.
    let mut agent = filled(CriticMode::Single { alpha: 0.5, beta: 0.5 }, 4, 20);
    agent.config.alpha_ent = 0.0;
    let mut t = std::mem::take(&mut agent.targets);
    stub_critic(&agent, &mut t[0], 0, 0.0, 2.0);
    stub_critic(&agent, &mut t[1], 0, 0.0, 5.0);
    agent.targets = t;
    let idx: Vec<usize> = (0..20).filter(|i| i % 5 != 4).collect();
    let batch = agent.gather(&idx);
    let y = agent.compute_targets(&batch).unwrap();
    for (yi, r) in y[0].iter().zip(&batch.rewards[0]) {
        assert!((yi - (r + 0.99 * 2.0)).abs() < 1e-12);
    }
}

#[test]
fn perfect_critic_has_zero_loss() {
    let mut agent = filled(CriticMode::Decoupled, 5, 16);
    stub_all_critics(&mut agent, 0, 0.0, 0.75);
    let batch = agent.gather(&(0..16).collect::<Vec<_>>());
    let targets = vec![vec![0.75; 16]; 2];
    let losses = agent.update_critics(&batch, &targets, &[true; 4]).unwrap();
    assert_eq!(losses, [0.0; 4]);
}

#[test]
fn replay_keeps_streams_separate() {
    let mut agent = filled(CriticMode::Decoupled, 6, 10);
    for i in 0..10 {
        let t = agent.buffer.get(i);
        assert_ne!(t.r_llm, t.r_channel);
    }
    let batch = agent.gather(&[0, 1, 2]);
    for (k, i) in [0, 1, 2].into_iter().enumerate() {
        assert_eq!(batch.rewards[0][k], agent.buffer.get(i).r_llm);
        assert_eq!(batch.rewards[1][k], agent.buffer.get(i).r_channel);
    }
    agent.mode = CriticMode::Single { alpha: 0.5, beta: 0.5 };
    let single = agent.gather(&[0]);
    let t = agent.buffer.get(0);
    assert_eq!(single.rewards[0][0], 0.5 * t.r_llm + 0.5 * t.r_channel);
}

#[test]
fn cross_stream_deltas_are_zero() {
    // Same agent, batches that differ only in R_LLM.
    let mut a = filled(CriticMode::Decoupled, 7, 24);
    let mut b = filled(CriticMode::Decoupled, 7, 24);
    let idx: Vec<usize> = (0..16).collect();
    let batch_a = a.gather(&idx);
    let mut batch_b = b.gather(&idx);
    for r in batch_b.rewards[0].iter_mut() {
        *r += 10.0;
    }
    let ya = a.compute_targets(&batch_a).unwrap();
    let yb = b.compute_targets(&batch_b).unwrap();
    a.update_critics(&batch_a, &ya, &[true; 4]).unwrap();
    b.update_critics(&batch_b, &yb, &[true; 4]).unwrap();
    assert!(a.critics[2].values_equal(&b.critics[2]));
    assert!(a.critics[3].values_equal(&b.critics[3]));
    assert!(!a.critics[0].values_equal(&b.critics[0]));
    assert!(!a.critics[1].values_equal(&b.critics[1]));

    // Ablating the channel loss leaves channel critics untouched.
    let before: Vec<ParameterSet> = a.critics.clone();
    let y = a.compute_targets(&batch_a).unwrap();
    a.update_critics(&batch_a, &y, &[true, true, false, false]).unwrap();
    assert!(a.critics[2].values_equal(&before[2]));
    assert!(a.critics[3].values_equal(&before[3]));
    assert!(!a.critics[0].values_equal(&before[0]));
}

#[test]
fn actor_step_never_touches_critics() {
    let mut agent = filled(CriticMode::Decoupled, 8, 20);
    agent.config.lambda_mix = 1.0;
    let before = agent.critics.clone();
    let actor_before = agent.actor.clone();
    let batch = agent.sample_batch();
    agent.update_actor(&batch).unwrap();
    for (b, a) in before.iter().zip(&agent.critics) {
        assert!(a.values_equal(b));
        assert!(!a.has_gradients());
    }
    assert!(!agent.actor.values_equal(&actor_before));
}

#[test]
fn channel_critics_absent_from_actor_graph_when_lambda_is_one() {
    let agent = filled(CriticMode::Decoupled, 9, 20);
    assert_eq!(agent.stream_weights(), vec![0.5, 0.5]);
    let mut agent = agent;
    agent.config.lambda_mix = 1.0;
    assert_eq!(agent.stream_weights(), vec![1.0, 0.0]);
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

#[test]
fn constant_critics_drive_heads_toward_uniform() {
    let mut agent = filled(CriticMode::Decoupled, 10, 32);
    stub_all_critics(&mut agent, 0, 0.0, 1.0);
    let bias = agent.actor_net.head_expert.bias_name();
    agent.actor.get_mut(&bias).unwrap().values_mut()[0] = 3.0;
    let probe: Vec<f64> = agent.buffer.get(0).state.to_vec();
    let start = entropy(&mean_expert_policy(&mut agent, &probe));
    for _ in 0..200 {
        let batch = agent.sample_batch();
        agent.update_actor(&batch).unwrap();
    }
    let end_p = mean_expert_policy(&mut agent, &probe);
    let end = entropy(&end_p);
    assert!(end > start + 0.2, "entropy {start} -> {end}");
    assert!(end > 0.9 * (3f64).ln(), "{end_p:?}");
}

#[test]
fn dominant_action_gains_mass_monotonically() {
    let mut agent = filled(CriticMode::Single { alpha: 0.5, beta: 0.5 }, 11, 32);
    agent.config.alpha_ent = 0.0;
    stub_all_critics(&mut agent, 2, 10.0, 0.0);
    let probe: Vec<f64> = agent.buffer.get(3).state.to_vec();
    let start = mean_expert_policy(&mut agent, &probe)[2];
    let mut prev = start;
    for step in 0..100 {
        let batch = agent.sample_batch();
        agent.update_actor(&batch).unwrap();
        let now = mean_expert_policy(&mut agent, &probe)[2];
        assert!(now >= prev, "step {step}: {prev} -> {now}");
        prev = now;
    }
    assert!(prev > start + 0.05, "{start} -> {prev}");
}

#[test]
fn critic_gradients_match_finite_differences() {
    let agent = filled(CriticMode::Decoupled, 12, 12);
    let batch = agent.gather(&(0..6).collect::<Vec<_>>());
    let d = agent.layout.dim();
    for k in 0..4 {
        let target: Vec<f64> = batch.rewards[k / 2].iter().map(|r| r + 0.3).collect();
        let mut sets = vec![agent.critics[k].clone()];
        let net = agent.critic_net.clone();
        let err = finite_diff_check(&mut sets, 1e-6, |tape: &mut Tape<'_>, p: &[ParameterSet]| {
            let s = tape.constant(batch.size, d, batch.states.clone());
            let a = tape.constant(batch.size, 2 * agent.n, batch.actions.clone());
            let q = net.forward(tape, &p[0], s, a, Binding::Train).map_err(|e| NnError::Config(e.to_string()))?;
            let y = tape.constant(batch.size, 1, target.clone());
            let diff = tape.sub(q, y);
            let sq = tape.square(diff);
            let m = tape.mean(sq);
            Ok(tape.scale(m, 0.5))
        })
        .unwrap();
        assert!(err < 1e-5, "critic {k}: {err}");
    }
}

#[test]
fn actor_gradients_match_finite_differences() {
    // Fixed noise through a seeded RNG reconstructed on every evaluation.
    let agent = filled(CriticMode::Decoupled, 13, 12);
    let batch = agent.gather(&(0..4).collect::<Vec<_>>());
    let d = agent.layout.dim();
    let settings = PolicySettings {
        temperature: 0.5,
        ..agent.policy_settings()
    };
    let net = agent.actor_net.clone();
    let cnet = agent.critic_net.clone();
    let mut sets = vec![agent.actor.clone(), agent.critics[0].clone()];
    let err = finite_diff_check(&mut sets, 1e-6, |tape: &mut Tape<'_>, p: &[ParameterSet]| {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let wrap = |e: SimError| NnError::Config(e.to_string());
        let s = tape.constant(batch.size, d, batch.states.clone());
        let pol = net.sample_graph(tape, &p[0], s, Binding::Train, &settings, &mut rng).map_err(wrap)?;
        let a = tape.concat(&[pol.w_expert, pol.w_channel]);
        let q = cnet.forward(tape, &p[1], s, a, Binding::Train).map_err(wrap)?;
        let ent = tape.scale(pol.log_prob, 0.01);
        let obj = tape.sub(ent, q);
        Ok(tape.mean(obj))
    })
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn update_is_deterministic_and_finite() {
    let run = || {
        let mut agent = filled(CriticMode::Decoupled, 14, 40);
        let mut out = Vec::new();
        for _ in 0..5 {
            out.push(agent.update().unwrap());
        }
        (out, agent)
    };
    let (a, agent_a) = run();
    let (b, agent_b) = run();
    assert_eq!(a, b);
    assert!(agent_a.actor.values_equal(&agent_b.actor));
    for s in &a {
        assert!(s.critic_losses.iter().all(|v| v.is_finite()));
        assert!(s.actor_loss.is_finite());
    }
    for (t, c) in agent_a.targets.iter().zip(&agent_a.critics) {
        assert!(!t.values_equal(c));
    }
}

#[test]
fn expert_only_mode_emits_uniform_channel_head() {
    let mut agent = tiny_agent(CriticMode::ExpertOnly, 15);
    assert_eq!(agent.critics.len(), 2);
    let s = vec![0.1; agent.layout.dim()];
    let out = agent.act(&s, ActMode::Sample).unwrap();
    assert!(out.w_channel.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
}

#[test]
fn named_sets_round_trip_through_checkpoint() {
    let mut agent = filled(CriticMode::Decoupled, 16, 20);
    agent.update().unwrap();
    let mut bytes = Vec::new();
    {
        let named = agent.named_sets();
        let refs: Vec<(&str, &ParameterSet)> = named.iter().map(|(n, s)| (n.as_str(), *s)).collect();
        routesim_nn::write_checkpoint(&mut bytes, &refs).unwrap();
    }
    let mut loaded = routesim_nn::read_checkpoint(&mut bytes.as_slice()).unwrap();
    let mut fresh = tiny_agent(CriticMode::Decoupled, 999);
    fresh.restore_sets(&mut loaded).unwrap();
    assert!(fresh.actor.values_equal(&agent.actor));
    for k in 0..4 {
        assert!(fresh.critics[k].values_equal(&agent.critics[k]));
        assert!(fresh.targets[k].values_equal(&agent.targets[k]));
    }
}

#[test]
fn rejects_bad_config() {
    let mut c = tiny_config();
    c.gamma = 1.0;
    assert!(c.validate().is_err());
    let mut c = tiny_config();
    c.temperature = 0.0;
    assert!(c.validate().is_err());
    let mut c = tiny_config();
    c.batch_size = 100;
    assert!(c.validate().is_err());
}

proptest! {
    #[test]
    fn fusion_is_scale_consistent(
        we in prop::collection::vec(0.01f64..1.0, 7),
        wc in prop::collection::vec(0.01f64..1.0, 7),
        bits in prop::collection::vec(prop::bool::ANY, 7),
        k1 in 0.1f64..10.0,
        k2 in 0.1f64..10.0,
    ) {
        let mut mask: Vec<f64> = bits.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect();
        mask[0] = 1.0;
        let base = fuse_weights(&we, &wc, &mask, 1e-6);
        let se: Vec<f64> = we.iter().map(|v| v * k1).collect();
        let sc: Vec<f64> = wc.iter().map(|v| v * k2).collect();
        let scaled = fuse_weights(&se, &sc, &mask, 1e-6);
        for (a, b) in base.weights.iter().zip(&scaled.weights) {
            prop_assert!((a - b).abs() < 1e-6);
        }
        for (w, m) in scaled.weights.iter().zip(&mask) {
            if *m == 0.0 {
                prop_assert_eq!(*w, 0.0);
            }
        }
    }

    #[test]
    fn sampled_heads_live_on_simplex(seed in 0u64..1000) {
        let mut agent = tiny_agent(CriticMode::Decoupled, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s: Vec<f64> = (0..agent.layout.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let out = agent.act(&s, ActMode::Sample).unwrap();
        prop_assert!((out.w_expert.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!((out.w_channel.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(out.log_prob.is_finite());
    }
}
