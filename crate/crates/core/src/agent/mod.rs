//! Channel-expert soft actor-critic: dual-head Gumbel-Softmax actor, twin
//! critic pairs per reward stream, replay and Polyak-averaged targets.

pub mod actor;
pub mod critic;
pub mod fuse;
pub mod replay;
pub mod state;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use routesim_nn::{adam_update, soft_update, Binding, ParameterSet, Tape};
use serde::{Deserialize, Serialize};

pub use actor::{ActMode, ActorNet, ActorOutput, LogProbKind, PolicySettings};
pub use critic::CriticNet;
pub use fuse::{fuse_weights, uniform_over_mask, Fused};
pub use replay::{ReplayBuffer, Transition};
pub use state::{assemble_state, StateLayout};

use crate::error::{Result, SimError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub gamma: f64,
    pub temperature: f64,
    pub learning_rate: f64,
    pub alpha_ent: f64,
    pub polyak: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub eps_fuse: f64,
    pub eps_invoke: f64,
    /// Weight of the expert stream in the actor objective.
    pub lambda_mix: f64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub log_prob: LogProbKind,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            temperature: 1.0,
            learning_rate: 3e-4,
            alpha_ent: 0.02,
            polyak: 0.005,
            buffer_capacity: 50_000,
            batch_size: 32,
            eps_fuse: 1e-6,
            eps_invoke: 0.05,
            lambda_mix: 0.5,
            actor_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            log_prob: LogProbKind::Categorical,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(SimError::Config("gamma must lie in (0, 1)".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(SimError::Config("temperature must be positive".into()));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return Err(SimError::Config("batch must be positive and fit in the buffer".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda_mix) || !(0.0..=1.0).contains(&self.polyak) {
            return Err(SimError::Config("lambda_mix and polyak must lie in [0, 1]".into()));
        }
        if self.actor_hidden.is_empty() || self.critic_hidden.is_empty() {
            return Err(SimError::Config("networks need at least one hidden layer".into()));
        }
        Ok(())
    }
}

/// Critic arrangement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticMode {
    /// Expert pair on R_LLM and channel pair on R_channel.
    Decoupled,
    /// Expert pair only; the channel head is bypassed (uniform `w_channel`).
    ExpertOnly,
    /// One pair on `α·R_LLM + β·R_channel`.
    Single { alpha: f64, beta: f64 },
}

impl CriticMode {
    fn n_streams(self) -> usize {
        match self {
            CriticMode::Decoupled => 2,
            _ => 1,
        }
    }
}

/// `r + γ·(min_q − entropy)`, or `r` on terminal transitions.
pub fn soft_target(r: f64, done: bool, gamma: f64, min_q: f64, entropy: f64) -> f64 {
    if done {
        r
    } else {
        r + gamma * (min_q - entropy)
    }
}

/// Minibatch gathered from the replay buffer.
#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub next_states: Vec<f64>,
    /// Reward per stream, `[stream][row]`.
    pub rewards: Vec<Vec<f64>>,
    pub done: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_losses: [f64; 4],
    pub actor_loss: f64,
    pub mean_log_prob: f64,
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub config: AgentConfig,
    pub mode: CriticMode,
    pub layout: StateLayout,
    pub n: usize,
    pub actor_net: ActorNet,
    pub critic_net: CriticNet,
    pub actor: ParameterSet,
    /// Online critics; stream `s` owns entries `2s` and `2s + 1`.
    pub critics: Vec<ParameterSet>,
    pub targets: Vec<ParameterSet>,
    pub buffer: ReplayBuffer,
    rng: ChaCha8Rng,
}

impl Agent {
    pub fn new(config: AgentConfig, mode: CriticMode, layout: StateLayout, seed: u64) -> Result<Self> {
        config.validate()?;
        let n = layout.mask;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor_net = ActorNet::new(layout.dim(), &config.actor_hidden, n);
        let critic_net = CriticNet::new(layout.dim(), 2 * n, &config.critic_hidden);
        let actor = actor_net.init(&mut rng)?;
        let critics = (0..2 * mode.n_streams())
            .map(|_| critic_net.init(&mut rng))
            .collect::<Result<Vec<_>>>()?;
        let targets = critics.clone();
        Ok(Self {
            buffer: ReplayBuffer::new(config.buffer_capacity),
            config,
            mode,
            layout,
            n,
            actor_net,
            critic_net,
            actor,
            critics,
            targets,
            rng,
        })
    }

    pub fn policy_settings(&self) -> PolicySettings {
        PolicySettings {
            temperature: self.config.temperature,
            log_prob: self.config.log_prob,
            channel_head: self.mode != CriticMode::ExpertOnly,
        }
    }

    pub fn n_streams(&self) -> usize {
        self.mode.n_streams()
    }

    /// Actor weights on the stream objective, per stream.
    fn stream_weights(&self) -> Vec<f64> {
        match self.mode {
            CriticMode::Decoupled => vec![self.config.lambda_mix, 1.0 - self.config.lambda_mix],
            _ => vec![1.0],
        }
    }

    pub fn act(&mut self, state: &[f64], mode: ActMode) -> Result<ActorOutput> {
        let settings = self.policy_settings();
        self.actor_net.act(&self.actor, state, mode, &settings, &mut self.rng)
    }

    pub fn ready(&self) -> bool {
        self.buffer.len() >= self.config.batch_size
    }

    pub fn sample_batch(&mut self) -> Batch {
        let idx = self.buffer.sample_indices(self.config.batch_size, &mut self.rng);
        self.gather(&idx)
    }

    pub fn gather(&self, idx: &[usize]) -> Batch {
        let d = self.layout.dim();
        let b = idx.len();
        let mut states = Vec::with_capacity(b * d);
        let mut next_states = Vec::with_capacity(b * d);
        let mut actions = Vec::with_capacity(b * 2 * self.n);
        let mut rewards = vec![Vec::with_capacity(b); self.n_streams()];
        let mut done = Vec::with_capacity(b);
        for &i in idx {
            let t = self.buffer.get(i);
            states.extend_from_slice(&t.state);
            next_states.extend_from_slice(&t.next_state);
            actions.extend_from_slice(&t.action);
            match self.mode {
                CriticMode::Decoupled => {
                    rewards[0].push(t.r_llm);
                    rewards[1].push(t.r_channel);
                }
                CriticMode::ExpertOnly => rewards[0].push(t.r_llm),
                CriticMode::Single { alpha, beta } => rewards[0].push(alpha * t.r_llm + beta * t.r_channel),
            }
            done.push(t.done);
        }
        Batch {
            size: b,
            states,
            actions,
            next_states,
            rewards,
            done,
        }
    }

    /// Soft Bellman targets per stream:
    /// `y = r + γ·(1 − done)·(min_j Q'_j(s', a') − α·log π(a'|s'))`.
    pub fn compute_targets(&mut self, batch: &Batch) -> Result<Vec<Vec<f64>>> {
        let settings = self.policy_settings();
        let d = self.layout.dim();
        let b = batch.size;
        let mut tape = Tape::new();
        let s2 = tape.constant(b, d, batch.next_states.clone());
        let pol = self
            .actor_net
            .sample_graph(&mut tape, &self.actor, s2, Binding::Frozen, &settings, &mut self.rng)?;
        let a2 = tape.concat(&[pol.w_expert, pol.w_channel]);
        let logp: Vec<f64> = tape.value(pol.log_prob).to_vec();
        let mut out = Vec::with_capacity(self.n_streams());
        for s in 0..self.n_streams() {
            let q1 = self.critic_net.forward(&mut tape, &self.targets[2 * s], s2, a2, Binding::Frozen)?;
            let q2 = self.critic_net.forward(&mut tape, &self.targets[2 * s + 1], s2, a2, Binding::Frozen)?;
            let y = (0..b)
                .map(|i| {
                    soft_target(
                        batch.rewards[s][i],
                        batch.done[i],
                        self.config.gamma,
                        tape.value(q1)[i].min(tape.value(q2)[i]),
                        self.config.alpha_ent * logp[i],
                    )
                })
                .collect();
            out.push(y);
        }
        Ok(out)
    }

    /// Half-MSE regression of the selected critics onto their stream targets,
    /// followed by one Adam step each. Unselected critics are untouched.
    pub fn update_critics(&mut self, batch: &Batch, targets: &[Vec<f64>], selected: &[bool]) -> Result<[f64; 4]> {
        let d = self.layout.dim();
        let b = batch.size;
        let mut losses = [0.0; 4];
        for k in 0..self.critics.len() {
            if !selected.get(k).copied().unwrap_or(false) {
                continue;
            }
            let grads = {
                let mut tape = Tape::new();
                let s = tape.constant(b, d, batch.states.clone());
                let a = tape.constant(b, 2 * self.n, batch.actions.clone());
                let q = self.critic_net.forward(&mut tape, &self.critics[k], s, a, Binding::Train)?;
                let y = tape.constant(b, 1, targets[k / 2].clone());
                let diff = tape.sub(q, y);
                let sq = tape.square(diff);
                let m = tape.mean(sq);
                let loss = tape.scale(m, 0.5);
                losses[k] = tape.scalar(loss);
                if !losses[k].is_finite() {
                    return Err(SimError::Numeric(format!("critic {k} loss is {}", losses[k])));
                }
                tape.backward(loss)?
            };
            self.critics[k].accumulate(&grads);
            adam_update(&mut self.critics[k], self.config.learning_rate)?;
        }
        Ok(losses)
    }

    /// `E[α·log π(a|s) − Σ_s λ_s·min_j Q_sj(s, a)]` with `a` resampled
    /// through the relaxed actor; one Adam step on the actor only.
    pub fn update_actor(&mut self, batch: &Batch) -> Result<(f64, f64)> {
        let settings = self.policy_settings();
        let d = self.layout.dim();
        let b = batch.size;
        let weights = self.stream_weights();
        let (loss_v, logp_v, grads) = {
            let mut tape = Tape::new();
            let s = tape.constant(b, d, batch.states.clone());
            let pol = self
                .actor_net
                .sample_graph(&mut tape, &self.actor, s, Binding::Train, &settings, &mut self.rng)?;
            let a = tape.concat(&[pol.w_expert, pol.w_channel]);
            let ent = tape.scale(pol.log_prob, self.config.alpha_ent);
            let mut obj = ent;
            for (st, w) in weights.iter().enumerate() {
                if *w == 0.0 {
                    continue;
                }
                let q1 = self.critic_net.forward(&mut tape, &self.critics[2 * st], s, a, Binding::Frozen)?;
                let q2 = self.critic_net.forward(&mut tape, &self.critics[2 * st + 1], s, a, Binding::Frozen)?;
                let m = tape.minimum(q1, q2);
                let wm = tape.scale(m, -*w);
                obj = tape.add(obj, wm);
            }
            let loss = tape.mean(obj);
            let lv = tape.scalar(loss);
            let lp = tape.value(pol.log_prob).iter().sum::<f64>() / b as f64;
            (lv, lp, tape.backward(loss)?)
        };
        if !loss_v.is_finite() {
            return Err(SimError::Numeric(format!("actor loss is {loss_v}")));
        }
        self.actor.accumulate(&grads);
        adam_update(&mut self.actor, self.config.learning_rate)?;
        Ok((loss_v, logp_v))
    }

    pub fn soft_update_targets(&mut self) -> Result<()> {
        for (t, o) in self.targets.iter_mut().zip(&self.critics) {
            soft_update(t, o, self.config.polyak)?;
        }
        Ok(())
    }

    /// Full gradient step: critics, actor, then targets.
    pub fn update(&mut self) -> Result<UpdateStats> {
        let batch = self.sample_batch();
        let targets = self.compute_targets(&batch)?;
        let all = vec![true; self.critics.len()];
        let critic_losses = self.update_critics(&batch, &targets, &all)?;
        let (actor_loss, mean_log_prob) = self.update_actor(&batch)?;
        self.soft_update_targets()?;
        Ok(UpdateStats {
            critic_losses,
            actor_loss,
            mean_log_prob,
        })
    }

    /// Named parameter sets for checkpointing.
    pub fn named_sets(&self) -> Vec<(String, &ParameterSet)> {
        let mut v = vec![("actor".to_string(), &self.actor)];
        for (i, c) in self.critics.iter().enumerate() {
            v.push((format!("critic{i}"), c));
        }
        for (i, c) in self.targets.iter().enumerate() {
            v.push((format!("target{i}"), c));
        }
        v
    }

    pub fn restore_sets(&mut self, loaded: &mut Vec<(String, ParameterSet)>) -> Result<()> {
        self.actor = routesim_nn::take_set(loaded, "actor")?;
        for i in 0..self.critics.len() {
            self.critics[i] = routesim_nn::take_set(loaded, &format!("critic{i}"))?;
            self.targets[i] = routesim_nn::take_set(loaded, &format!("target{i}"))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
