//! Semantic and channel rewards, the combined score and the meta-reliability
//! network.

use std::collections::VecDeque;

use rand::Rng;
use routesim_nn::{adam_update, Activation, Binding, Mlp, ParameterSet, Tape, TensorBuffer};
use serde::{Deserialize, Serialize};

use crate::category::Category;
use crate::channel::ChannelConfig;
use crate::error::{Result, SimError};
use crate::mesh::Registry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    /// Weights of R1..R4.
    pub llm_weights: [f64; 4],
    pub theta_act: f64,
    pub theta_sup: f64,
    /// Experts kept by the response-consistency oracle.
    pub top_k: usize,
    /// Weights of Q̄, S, D, E.
    pub channel_weights: [f64; 4],
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    /// Unnormalised natural-log entropies in R3 and D, and D = 0 for a single
    /// active channel.
    pub raw_entropy: bool,
    pub core_threshold: f64,
    pub irrelevant_threshold: f64,
    /// Steps in the meta-reliability statistics window.
    pub window: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            llm_weights: [0.4, 0.3, 0.2, 0.1],
            theta_act: 0.2,
            theta_sup: 0.1,
            top_k: 3,
            channel_weights: [0.4, 0.3, 0.2, 0.1],
            alpha: 0.5,
            beta: 0.5,
            epsilon: 1e-6,
            raw_entropy: false,
            core_threshold: 0.9,
            irrelevant_threshold: 0.1,
            window: 10,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let s1: f64 = self.llm_weights.iter().sum();
        let s2: f64 = self.channel_weights.iter().sum();
        if (s1 - 1.0).abs() > 1e-9 || (s2 - 1.0).abs() > 1e-9 {
            return Err(SimError::Config("reward component weights must each sum to 1".into()));
        }
        if self.top_k < 1 || self.window < 2 {
            return Err(SimError::Config("reward top_k must be ≥ 1 and window ≥ 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskExpertSets {
    pub core: Vec<usize>,
    pub irrelevant: Vec<usize>,
}

impl TaskExpertSets {
    pub fn from_competence(registry: &Registry, category: Category, config: &RewardConfig) -> Self {
        let mut core = Vec::new();
        let mut irrelevant = Vec::new();
        for i in 0..registry.len() {
            let c = registry.competence(i, category);
            if c >= config.core_threshold {
                core.push(i);
            } else if c <= config.irrelevant_threshold + 1e-12 {
                irrelevant.push(i);
            }
        }
        Self { core, irrelevant }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LlmReward {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub r4: f64,
    pub r_llm: f64,
    pub zero_mass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ChannelReward {
    pub q_bar: f64,
    pub stability: f64,
    pub load_entropy: f64,
    pub spectral_eff: f64,
    pub r_channel: f64,
    pub no_active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub r4: f64,
    pub r_llm: f64,
    pub q_bar: f64,
    pub stability: f64,
    pub load_entropy: f64,
    pub spectral_eff: f64,
    pub r_channel: f64,
    pub r_final: f64,
}

impl RewardBreakdown {
    pub fn new(l: &LlmReward, c: &ChannelReward, config: &RewardConfig) -> Self {
        Self {
            r1: l.r1,
            r2: l.r2,
            r3: l.r3,
            r4: l.r4,
            r_llm: l.r_llm,
            q_bar: c.q_bar,
            stability: c.stability,
            load_entropy: c.load_entropy,
            spectral_eff: c.spectral_eff,
            r_channel: c.r_channel,
            r_final: final_reward(l.r_llm, c.r_channel, config.alpha, config.beta),
        }
    }
}

/// Shannon entropy of `p` (already normalised) in the given log base.
fn entropy(p: impl Iterator<Item = f64>, ln_base: f64) -> f64 {
    -p.filter(|x| *x > 0.0).map(|x| x * x.ln()).sum::<f64>() / ln_base
}

/// Normalised entropy of a weight vector: base-2 entropy over `log2(n)`;
/// with `raw`, natural-log entropy without normalisation.
pub fn weight_entropy(weights: &[f64], raw: bool) -> f64 {
    let mass: f64 = weights.iter().sum();
    if mass <= 0.0 {
        return 0.0;
    }
    let p = weights.iter().map(|w| w / mass);
    if raw {
        entropy(p, 1.0)
    } else if weights.len() <= 1 {
        0.0
    } else {
        entropy(p, std::f64::consts::LN_2) / (weights.len() as f64).log2()
    }
}

/// `qualities[i]` is expert i's response quality (0 when not invoked).
pub fn llm_reward(weights: &[f64], sets: &TaskExpertSets, qualities: &[f64], config: &RewardConfig) -> LlmReward {
    let frac = |set: &[usize], th: f64| -> Option<f64> {
        if set.is_empty() {
            None
        } else {
            Some(set.iter().filter(|&&i| weights[i] >= th).count() as f64 / set.len() as f64)
        }
    };
    let r1 = frac(&sets.core, config.theta_act).unwrap_or(1.0);
    let r2 = 1.0 - frac(&sets.irrelevant, config.theta_sup).unwrap_or(0.0);

    let mass: f64 = weights.iter().sum();
    let zero_mass = mass <= 0.0;
    let r3 = if zero_mass {
        0.0
    } else {
        let core_mass: f64 = sets.core.iter().map(|&i| weights[i]).sum();
        core_mass / mass * (1.0 - weight_entropy(weights, config.raw_entropy))
    };

    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    order.truncate(config.top_k);
    let top_mass: f64 = order.iter().map(|&i| weights[i]).sum();
    let r4 = if top_mass > 0.0 {
        order.iter().map(|&i| weights[i] / top_mass * qualities[i]).sum()
    } else {
        0.0
    };

    let [a1, a2, a3, a4] = config.llm_weights;
    LlmReward {
        r1,
        r2,
        r3,
        r4,
        r_llm: a1 * r1 + a2 * r2 + a3 * r3 + a4 * r4,
        zero_mass,
    }
}

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// `active` lists channel indices; `weights[j]` is the load on `active[j]`.
pub fn channel_reward(
    active: &[usize],
    weights: &[f64],
    snr: &[f64],
    channel: &ChannelConfig,
    config: &RewardConfig,
) -> ChannelReward {
    if active.is_empty() {
        return ChannelReward {
            no_active: true,
            ..ChannelReward::default()
        };
    }
    let n = active.len() as f64;
    let norm: Vec<f64> = active.iter().map(|&i| channel.normalize_snr(snr[i])).collect();
    let q_bar = norm.iter().sum::<f64>() / n;
    let var = norm.iter().map(|q| (q - q_bar).powi(2)).sum::<f64>() / n;
    let stability = (1.0 - var.sqrt() / (q_bar + config.epsilon)).clamp(0.0, 1.0);

    let mass: f64 = weights.iter().sum();
    let load_entropy = if config.raw_entropy {
        if mass > 0.0 {
            entropy(weights.iter().map(|w| w / mass), 1.0)
        } else {
            0.0
        }
    } else if active.len() == 1 {
        1.0
    } else if mass > 0.0 {
        entropy(weights.iter().map(|w| w / mass), std::f64::consts::LN_2) / n.log2()
    } else {
        0.0
    };

    let cap_max = (1.0 + db_to_linear(channel.snr_max)).log2();
    let spectral_eff = active
        .iter()
        .map(|&i| (1.0 + db_to_linear(snr[i].min(channel.snr_max))).log2())
        .sum::<f64>()
        / (n * cap_max);

    let [w1, w2, w3, w4] = config.channel_weights;
    ChannelReward {
        q_bar,
        stability,
        load_entropy,
        spectral_eff,
        r_channel: w1 * q_bar + w2 * stability + w3 * load_entropy + w4 * spectral_eff,
        no_active: false,
    }
}

pub fn final_reward(r_llm: f64, r_channel: f64, alpha: f64, beta: f64) -> f64 {
    alpha * r_llm + beta * r_channel
}

pub const D_CONF: usize = 9;

/// Rolling statistics feeding the meta-reliability network.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceWindow {
    capacity: usize,
    r_llm: VecDeque<f64>,
    r_channel: VecDeque<f64>,
    snr: VecDeque<f64>,
}

fn mean(v: &VecDeque<f64>) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn std(v: &VecDeque<f64>) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Least-squares slope against the sample index.
fn slope(v: &VecDeque<f64>) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let xm = (n as f64 - 1.0) / 2.0;
    let ym = mean(v);
    let (mut num, mut den) = (0.0, 0.0);
    for (i, y) in v.iter().enumerate() {
        let dx = i as f64 - xm;
        num += dx * (y - ym);
        den += dx * dx;
    }
    num / den
}

impl ConfidenceWindow {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            r_llm: VecDeque::with_capacity(capacity),
            r_channel: VecDeque::with_capacity(capacity),
            snr: VecDeque::with_capacity(capacity),
        }
    }

    /// `active_snr` is the mean normalised SNR of the step's active channels.
    pub fn push(&mut self, r_llm: f64, r_channel: f64, active_snr: f64) {
        for (q, v) in [(&mut self.r_llm, r_llm), (&mut self.r_channel, r_channel), (&mut self.snr, active_snr)] {
            if q.len() == self.capacity {
                q.pop_front();
            }
            q.push_back(v);
        }
    }

    pub fn len(&self) -> usize {
        self.r_llm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r_llm.is_empty()
    }

    pub fn features(&self, progress: f64) -> [f64; D_CONF] {
        [
            mean(&self.r_llm),
            std(&self.r_llm),
            slope(&self.r_llm),
            mean(&self.r_channel),
            std(&self.r_channel),
            slope(&self.r_channel),
            mean(&self.snr),
            std(&self.snr),
            progress,
        ]
    }

    /// One-hot target: which stream varied less over the window.
    pub fn target(&self) -> [f64; 2] {
        if std(&self.r_llm) <= std(&self.r_channel) {
            [1.0, 0.0]
        } else {
            [0.0, 1.0]
        }
    }
}

/// 9 → 16 tanh → 2 softmax reliability weights `(w_llm, w_channel)`.
#[derive(Debug, Clone)]
pub struct MetaNet {
    net: Mlp,
    pub params: ParameterSet,
}

impl MetaNet {
    pub const HIDDEN: usize = 16;

    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Result<Self> {
        let net = Mlp::new("meta", &[D_CONF, Self::HIDDEN, 2], Activation::Tanh, Activation::Identity);
        let mut params = ParameterSet::new();
        net.init(&mut params, rng)?;
        Ok(Self { net, params })
    }

    pub fn zeroed() -> Self {
        let net = Mlp::new("meta", &[D_CONF, Self::HIDDEN, 2], Activation::Tanh, Activation::Identity);
        let mut params = ParameterSet::new();
        for layer in &net.layers {
            params
                .insert(layer.weight_name(), TensorBuffer::zeros(vec![layer.out_dim, layer.in_dim]))
                .expect("fresh set");
            params
                .insert(layer.bias_name(), TensorBuffer::zeros(vec![layer.out_dim]))
                .expect("fresh set");
        }
        Self { net, params }
    }

    pub fn reliability(&self, features: &[f64; D_CONF]) -> Result<(f64, f64)> {
        let mut tape = Tape::new();
        let x = tape.constant(1, D_CONF, features.to_vec());
        let logits = self.net.forward(&mut tape, &self.params, x, Binding::Frozen)?;
        let p = tape.softmax(logits);
        let v = tape.value(p);
        Ok((v[0], v[1]))
    }

    /// Cross-entropy loss graph on `[B, 9]` features against one-hot targets.
    pub fn loss<'p>(
        net: &Mlp,
        tape: &mut Tape<'p>,
        params: &'p ParameterSet,
        features: &[[f64; D_CONF]],
        targets: &[[f64; 2]],
    ) -> Result<routesim_nn::Var> {
        let b = features.len();
        let x = tape.constant(b, D_CONF, features.iter().flatten().copied().collect());
        let t = tape.constant(b, 2, targets.iter().flatten().copied().collect());
        let logits = net.forward(tape, params, x, Binding::Train)?;
        let lp = tape.log_softmax(logits);
        let prod = tape.mul(t, lp);
        let s = tape.mean(prod);
        Ok(tape.scale(s, -2.0))
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    /// One Adam step on a single `(features, target)` pair; returns the loss.
    pub fn train_step(&mut self, features: &[f64; D_CONF], target: [f64; 2], lr: f64) -> Result<f64> {
        let (loss, grads) = {
            let mut tape = Tape::new();
            let l = Self::loss(&self.net, &mut tape, &self.params, &[*features], &[target])?;
            let v = tape.scalar(l);
            (v, tape.backward(l)?)
        };
        if !loss.is_finite() {
            return Err(SimError::Numeric(format!("meta loss is {loss}")));
        }
        self.params.accumulate(&grads);
        adam_update(&mut self.params, lr)?;
        Ok(loss)
    }
}
