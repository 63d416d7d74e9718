//! Hierarchical variational state-space model over channel observations.
//!
//! A GRU consumes `[q_t, τ_t, r_{t-1}]`; dense heads give Gaussian posteriors
//! for a short-term latent `z1` (prior `N(0, I)` each step) and a long-term
//! latent `z2` (random-walk prior `N(μ2_prev, σ_rw² I)`). A tanh decoder
//! reconstructs `q_t` under a fixed-variance Gaussian likelihood. Training is
//! one-step truncated backpropagation: the previous hidden state is a
//! constant.

use rand::Rng;
use rand_distr::StandardNormal;
use routesim_nn::{
    adam_update, Activation, Binding, Dense, Gradients, GruCell, GruState, Mlp, ParameterSet, Tape, Var,
};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AsemConfig {
    pub hidden: usize,
    pub z1: usize,
    pub z2: usize,
    pub decoder_hidden: usize,
    pub sigma_dec: f64,
    pub sigma_rw: f64,
    pub logvar_min: f64,
    pub logvar_max: f64,
    pub learning_rate: f64,
}

impl Default for AsemConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            z1: 32,
            z2: 16,
            decoder_hidden: 64,
            sigma_dec: 0.1,
            sigma_rw: 0.1,
            logvar_min: -10.0,
            logvar_max: 4.0,
            learning_rate: 7e-4,
        }
    }
}

/// Network structure for `n_obs` channels and a `tau_dim` embedding.
#[derive(Debug, Clone)]
pub struct AsemModel {
    pub config: AsemConfig,
    pub n_obs: usize,
    pub tau_dim: usize,
    pub gru: GruCell,
    pub mu1: Dense,
    pub lv1: Dense,
    pub mu2: Dense,
    pub lv2: Dense,
    pub decoder: Mlp,
}

impl AsemModel {
    pub fn new(config: AsemConfig, n_obs: usize, tau_dim: usize) -> Self {
        let h = config.hidden;
        Self {
            gru: GruCell::new("asem.gru", n_obs + tau_dim + 1, h),
            mu1: Dense::new("asem.mu1", h, config.z1),
            lv1: Dense::new("asem.lv1", h, config.z1),
            mu2: Dense::new("asem.mu2", h, config.z2),
            lv2: Dense::new("asem.lv2", h, config.z2),
            decoder: Mlp::new(
                "asem.dec",
                &[config.z1 + config.z2, config.decoder_hidden, n_obs],
                Activation::Tanh,
                Activation::Identity,
            ),
            config,
            n_obs,
            tau_dim,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.config.z1 + self.config.z2
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParameterSet> {
        let mut p = ParameterSet::new();
        self.gru.init(&mut p, rng)?;
        for d in [&self.mu1, &self.lv1, &self.mu2, &self.lv2] {
            d.init(&mut p, rng)?;
        }
        self.decoder.init(&mut p, rng)?;
        Ok(p)
    }

    fn input_row(&self, q: &[f64], tau: &[f64], prev_reward: f64) -> Result<Vec<f64>> {
        if q.len() != self.n_obs || tau.len() != self.tau_dim {
            return Err(SimError::Config(format!(
                "asem input: q has {} (want {}), tau has {} (want {})",
                q.len(),
                self.n_obs,
                tau.len(),
                self.tau_dim
            )));
        }
        let mut x = Vec::with_capacity(self.n_obs + self.tau_dim + 1);
        x.extend_from_slice(q);
        x.extend_from_slice(tau);
        x.push(prev_reward);
        Ok(x)
    }

    /// Posterior heads on the tape.
    pub fn encode_graph<'p>(
        &self,
        tape: &mut Tape<'p>,
        params: &'p ParameterSet,
        x: Var,
        h_prev: Var,
        mode: Binding,
    ) -> Result<Posterior> {
        let h = self.gru.step(tape, params, x, h_prev, mode)?;
        let c = &self.config;
        let mu1 = self.mu1.forward(tape, params, h, mode)?;
        let lv1_raw = self.lv1.forward(tape, params, h, mode)?;
        let lv1 = tape.clamp(lv1_raw, c.logvar_min, c.logvar_max);
        let mu2 = self.mu2.forward(tape, params, h, mode)?;
        let lv2_raw = self.lv2.forward(tape, params, h, mode)?;
        let lv2 = tape.clamp(lv2_raw, c.logvar_min, c.logvar_max);
        Ok(Posterior { h, mu1, lv1, mu2, lv2 })
    }

    /// `z = μ + exp(lv/2)·ε` for both latents, concatenated `[z1, z2]`.
    pub fn reparameterize_graph(&self, tape: &mut Tape<'_>, post: &Posterior, eps1: &[f64], eps2: &[f64]) -> Var {
        let sample = |tape: &mut Tape<'_>, mu: Var, lv: Var, eps: &[f64]| {
            let half = tape.scale(lv, 0.5);
            let sd = tape.exp(half);
            let e = tape.constant(1, eps.len(), eps.to_vec());
            let noise = tape.mul(sd, e);
            tape.add(mu, noise)
        };
        let z1 = sample(tape, post.mu1, post.lv1, eps1);
        let z2 = sample(tape, post.mu2, post.lv2, eps2);
        tape.concat(&[z1, z2])
    }

    /// Negative ELBO terms on the tape.
    pub fn elbo_graph<'p>(
        &self,
        tape: &mut Tape<'p>,
        params: &'p ParameterSet,
        q: Var,
        z: Var,
        post: &Posterior,
        prev_mu2: &[f64],
        mode: Binding,
    ) -> Result<ElboTerms> {
        let c = &self.config;
        let recon = self.decoder.forward(tape, params, z, mode)?;
        let resid = tape.sub(recon, q);
        let sq = tape.square(resid);
        let sse = tape.sum(sq);
        let var_dec = c.sigma_dec * c.sigma_dec;
        let nll_scaled = tape.scale(sse, 0.5 / var_dec);
        let norm_const = 0.5 * self.n_obs as f64 * (2.0 * std::f64::consts::PI * var_dec).ln();
        let nll = tape.offset(nll_scaled, norm_const);

        let kl1 = kl_standard_normal(tape, post.mu1, post.lv1);
        let kl2 = kl_random_walk(tape, post.mu2, post.lv2, prev_mu2, c.sigma_rw);
        let kl = tape.add(kl1, kl2);
        let loss = tape.add(nll, kl);
        Ok(ElboTerms {
            loss,
            nll,
            kl1,
            kl2,
            recon,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Posterior {
    pub h: Var,
    pub mu1: Var,
    pub lv1: Var,
    pub mu2: Var,
    pub lv2: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct ElboTerms {
    pub loss: Var,
    pub nll: Var,
    pub kl1: Var,
    pub kl2: Var,
    pub recon: Var,
}

/// `KL(N(μ, e^lv) ‖ N(0, 1))` summed over dimensions.
pub fn kl_standard_normal(tape: &mut Tape<'_>, mu: Var, lv: Var) -> Var {
    let mu2 = tape.square(mu);
    let var = tape.exp(lv);
    let a = tape.add(mu2, var);
    let b = tape.sub(a, lv);
    let c = tape.offset(b, -1.0);
    let s = tape.sum(c);
    tape.scale(s, 0.5)
}

/// `KL(N(μ, e^lv) ‖ N(m, σ²))` summed over dimensions, `m` constant.
pub fn kl_random_walk(tape: &mut Tape<'_>, mu: Var, lv: Var, prior_mean: &[f64], sigma: f64) -> Var {
    let s2 = sigma * sigma;
    let m = tape.constant(1, prior_mean.len(), prior_mean.to_vec());
    let d = tape.sub(mu, m);
    let d2 = tape.square(d);
    let var = tape.exp(lv);
    let num = tape.add(d2, var);
    let ratio = tape.scale(num, 1.0 / s2);
    let minus_lv = tape.sub(ratio, lv);
    let c = tape.offset(minus_lv, s2.ln() - 1.0);
    let s = tape.sum(c);
    tape.scale(s, 0.5)
}

/// Closed-form `KL(N(μ, σ²) ‖ N(m, s²))` for one dimension.
pub fn kl_gaussian(mu: f64, var: f64, prior_mean: f64, prior_var: f64) -> f64 {
    0.5 * ((var + (mu - prior_mean).powi(2)) / prior_var - 1.0 - (var / prior_var).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct AsemLoss {
    pub total: f64,
    pub nll: f64,
    pub kl1: f64,
    pub kl2: f64,
    pub recon_mse: f64,
}

#[derive(Debug, Clone)]
pub struct AsemOutput {
    /// `[z1, z2]`
    pub z: Vec<f64>,
    pub mu1: Vec<f64>,
    pub mu2: Vec<f64>,
    pub loss: Option<AsemLoss>,
}

/// Stateful ASEM with its own parameters and Adam moments.
#[derive(Debug, Clone)]
pub struct Asem {
    pub model: AsemModel,
    pub params: ParameterSet,
    hidden: GruState,
    prev_mu2: Vec<f64>,
    pending: Option<Gradients>,
}

impl Asem {
    pub fn new<R: Rng + ?Sized>(config: AsemConfig, n_obs: usize, tau_dim: usize, rng: &mut R) -> Result<Self> {
        let model = AsemModel::new(config, n_obs, tau_dim);
        let params = model.init(rng)?;
        Ok(Self::from_parts(model, params))
    }

    pub fn from_parts(model: AsemModel, params: ParameterSet) -> Self {
        Self {
            hidden: GruState::zeros(model.config.hidden),
            prev_mu2: vec![0.0; model.config.z2],
            pending: None,
            model,
            params,
        }
    }

    pub fn hidden(&self) -> &GruState {
        &self.hidden
    }

    pub fn reset_state(&mut self) {
        self.hidden = GruState::zeros(self.model.config.hidden);
        self.prev_mu2 = vec![0.0; self.model.config.z2];
        self.pending = None;
    }

    /// One recurrent step. Training samples `z` and records ELBO gradients
    /// for [`Asem::apply_update`]; evaluation returns posterior means and
    /// draws no randomness.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        q_norm: &[f64],
        tau: &[f64],
        prev_reward: f64,
        rng: &mut R,
        train: bool,
    ) -> Result<AsemOutput> {
        let m = &self.model;
        let row = m.input_row(q_norm, tau, prev_reward)?;
        let (z1d, z2d) = (m.config.z1, m.config.z2);
        let eps: Option<(Vec<f64>, Vec<f64>)> = train.then(|| {
            let e1 = (0..z1d).map(|_| rng.sample(StandardNormal)).collect();
            let e2 = (0..z2d).map(|_| rng.sample(StandardNormal)).collect();
            (e1, e2)
        });
        let mode = if train { Binding::Train } else { Binding::Frozen };
        let mut tape = Tape::new();
        let x = tape.constant(1, row.len(), row);
        let h_prev = tape.constant(1, m.config.hidden, self.hidden.as_slice().to_vec());
        let post = m.encode_graph(&mut tape, &self.params, x, h_prev, mode)?;
        let mu1 = tape.value(post.mu1).to_vec();
        let mu2 = tape.value(post.mu2).to_vec();
        let new_hidden = tape.value(post.h).to_vec();

        let (z, loss, grads) = if let Some((e1, e2)) = eps {
            let z = m.reparameterize_graph(&mut tape, &post, &e1, &e2);
            let q = tape.constant(1, q_norm.len(), q_norm.to_vec());
            let terms = m.elbo_graph(&mut tape, &self.params, q, z, &post, &self.prev_mu2, mode)?;
            let (kl1, kl2) = (tape.scalar(terms.kl1), tape.scalar(terms.kl2));
            let recon_mse = tape
                .value(terms.recon)
                .iter()
                .zip(q_norm)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / q_norm.len() as f64;
            let loss = AsemLoss {
                total: tape.scalar(terms.loss),
                nll: tape.scalar(terms.nll),
                kl1,
                kl2,
                recon_mse,
            };
            if !loss.total.is_finite() {
                return Err(SimError::Numeric(format!("asem loss not finite: {loss:?}")));
            }
            debug_assert!(kl1 >= -1e-9 && kl2 >= -1e-9, "negative KL: {kl1} {kl2}");
            let zv = tape.value(z).to_vec();
            let g = tape.backward(terms.loss)?;
            (zv, Some(loss), Some(g))
        } else {
            let mut z = mu1.clone();
            z.extend_from_slice(&mu2);
            (z, None, None)
        };

        self.hidden = GruState::from_vec(new_hidden);
        self.prev_mu2 = mu2.clone();
        self.pending = grads;
        Ok(AsemOutput { z, mu1, mu2, loss })
    }

    /// Applies the gradients recorded by the last training step, if any.
    pub fn apply_update(&mut self) -> Result<bool> {
        let Some(g) = self.pending.take() else {
            return Ok(false);
        };
        self.params.accumulate(&g);
        adam_update(&mut self.params, self.model.config.learning_rate)?;
        Ok(true)
    }

    /// Drops recorded gradients without applying them.
    pub fn discard_update(&mut self) {
        self.pending = None;
    }
}
