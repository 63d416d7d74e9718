use rand::Rng;
use routesim_nn::{
    categorical_log_prob, gumbel_softmax, relaxed_log_density, sample_gumbel, Activation, Binding, Dense, Mlp,
    ParameterSet, Tape, Var,
};
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Log-probability used for the entropy terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LogProbKind {
    /// Density of the relaxed (Concrete) distribution at the sample.
    #[default]
    Concrete,
    /// `Σ y·log softmax(l)`: categorical log-probability weighted by the sample.
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicySettings {
    pub temperature: f64,
    pub log_prob: LogProbKind,
    /// When false the channel head is bypassed and `w_channel` is uniform.
    pub channel_head: bool,
}

/// Shared ReLU trunk with expert and channel logit heads.
#[derive(Debug, Clone)]
pub struct ActorNet {
    pub trunk: Mlp,
    pub head_expert: Dense,
    pub head_channel: Dense,
    pub n: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct PolicyGraph {
    pub w_expert: Var,
    pub w_channel: Var,
    /// `[B, 1]`
    pub log_prob: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorOutput {
    pub w_expert: Vec<f64>,
    pub w_channel: Vec<f64>,
    pub log_prob: f64,
}

impl ActorNet {
    pub fn new(state_dim: usize, hidden: &[usize], n: usize) -> Self {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        let last = *sizes.last().expect("state width");
        Self {
            trunk: Mlp::new("actor.trunk", &sizes, Activation::Relu, Activation::Relu),
            head_expert: Dense::new("actor.expert", last, n),
            head_channel: Dense::new("actor.channel", last, n),
            n,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParameterSet> {
        let mut p = ParameterSet::new();
        self.trunk.init(&mut p, rng)?;
        self.head_expert.init(&mut p, rng)?;
        self.head_channel.init(&mut p, rng)?;
        Ok(p)
    }

    /// Logits of both heads (`[B, N]` each); the channel head is skipped when
    /// `channel_head` is false.
    pub fn logits<'p>(
        &self,
        tape: &mut Tape<'p>,
        params: &'p ParameterSet,
        states: Var,
        binding: Binding,
        channel_head: bool,
    ) -> Result<(Var, Option<Var>)> {
        let h = self.trunk.forward(tape, params, states, binding)?;
        let le = self.head_expert.forward(tape, params, h, binding)?;
        let lc = if channel_head {
            Some(self.head_channel.forward(tape, params, h, binding)?)
        } else {
            None
        };
        Ok((le, lc))
    }

    fn head_sample(
        tape: &mut Tape<'_>,
        logits: Var,
        noise: Vec<f64>,
        s: &PolicySettings,
    ) -> Result<(Var, Var)> {
        let (y, log_y) = gumbel_softmax(tape, logits, noise, s.temperature)?;
        let lp = match s.log_prob {
            LogProbKind::Concrete => relaxed_log_density(tape, logits, log_y, s.temperature)?,
            LogProbKind::Categorical => categorical_log_prob(tape, logits, y),
        };
        Ok((y, lp))
    }

    /// Relaxed samples for a batch of states with Gumbel noise drawn from
    /// `rng` (`2·B·N` draws, expert head first).
    pub fn sample_graph<'p, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'p>,
        params: &'p ParameterSet,
        states: Var,
        binding: Binding,
        settings: &PolicySettings,
        rng: &mut R,
    ) -> Result<PolicyGraph> {
        let b = tape.shape(states).0;
        let (le, lc) = self.logits(tape, params, states, binding, settings.channel_head)?;
        let noise_e = sample_gumbel(rng, b * self.n);
        let noise_c = sample_gumbel(rng, b * self.n);
        let (w_expert, lp_e) = Self::head_sample(tape, le, noise_e, settings)?;
        let (w_channel, log_prob) = match lc {
            Some(lc) => {
                let (wc, lp_c) = Self::head_sample(tape, lc, noise_c, settings)?;
                (wc, tape.add(lp_e, lp_c))
            }
            None => {
                let uniform = tape.constant(b, self.n, vec![1.0 / self.n as f64; b * self.n]);
                (uniform, lp_e)
            }
        };
        Ok(PolicyGraph {
            w_expert,
            w_channel,
            log_prob,
        })
    }

    /// Single-state action without recording gradients.
    pub fn act<R: Rng + ?Sized>(
        &self,
        params: &ParameterSet,
        state: &[f64],
        mode: ActMode,
        settings: &PolicySettings,
        rng: &mut R,
    ) -> Result<ActorOutput> {
        let mut tape = Tape::new();
        let s = tape.constant(1, state.len(), state.to_vec());
        match mode {
            ActMode::Sample => {
                let g = self.sample_graph(&mut tape, params, s, Binding::Frozen, settings, rng)?;
                Ok(ActorOutput {
                    w_expert: tape.value(g.w_expert).to_vec(),
                    w_channel: tape.value(g.w_channel).to_vec(),
                    log_prob: tape.scalar(g.log_prob),
                })
            }
            ActMode::Mean => {
                let (le, lc) = self.logits(&mut tape, params, s, Binding::Frozen, settings.channel_head)?;
                let pe = tape.softmax(le);
                let mut lp = categorical_log_prob(&mut tape, le, pe);
                let w_channel = match lc {
                    Some(lc) => {
                        let pc = tape.softmax(lc);
                        let lpc = categorical_log_prob(&mut tape, lc, pc);
                        lp = tape.add(lp, lpc);
                        tape.value(pc).to_vec()
                    }
                    None => vec![1.0 / self.n as f64; self.n],
                };
                Ok(ActorOutput {
                    w_expert: tape.value(pe).to_vec(),
                    w_channel,
                    log_prob: tape.scalar(lp),
                })
            }
        }
    }
}
