//! Per-expert wireless links: log-distance path loss, AR(1) log-normal
//! shadowing, Rayleigh small-scale fading and scheduled interference bursts.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Mean of `10·log10(G)` for `G ~ Exp(1)`: `−10·γ / ln 10`.
pub const RAYLEIGH_DB_MEAN: f64 = -10.0 * 0.577_215_664_901_532_9 / std::f64::consts::LN_10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FadingSignMode {
    /// Standard link budget: fading gain adds to received power.
    #[default]
    Corrected,
    /// Fading term subtracted.
    Verbatim,
}

impl FadingSignMode {
    fn sign(self) -> f64 {
        match self {
            FadingSignMode::Corrected => 1.0,
            FadingSignMode::Verbatim => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    /// dB
    pub mean_snr_mean: f64,
    pub mean_snr_std: f64,
    /// meters
    pub dist_mean: f64,
    pub dist_std: f64,
    /// dB
    pub shadow_mean: f64,
    pub shadow_std: f64,
    pub path_loss_exponent: f64,
    /// dB
    pub ref_loss: f64,
    /// meters
    pub ref_dist: f64,
    /// dBm
    pub tx_power: f64,
    /// dBm/Hz
    pub noise_density: f64,
    /// Hz
    pub bandwidth: f64,
    pub correlation: f64,
    pub snr_min: f64,
    pub snr_max: f64,
    /// Lower clamp on the link budget when the fading gain underflows.
    pub snr_floor: f64,
    pub fading_sign_mode: FadingSignMode,
    /// Add a per-channel offset so each link's long-run mean SNR equals its
    /// drawn `μ_SNR,i`.
    pub calibrate: bool,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            mean_snr_mean: 25.0,
            mean_snr_std: 5.0,
            dist_mean: 275.0,
            dist_std: 75.0,
            shadow_mean: 8.0,
            shadow_std: 1.3,
            path_loss_exponent: 3.5,
            ref_loss: 40.0,
            ref_dist: 1.0,
            tx_power: 23.0,
            noise_density: -174.0,
            bandwidth: 10e6,
            correlation: 0.9,
            snr_min: 5.0,
            snr_max: 25.0,
            snr_floor: -50.0,
            fading_sign_mode: FadingSignMode::Corrected,
            calibrate: true,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SimError::Config(format!("channel: {m}")));
        if !(self.ref_dist > 0.0) {
            return bad("ref_dist must be positive");
        }
        if !(0.0..=1.0).contains(&self.correlation) {
            return bad("correlation must lie in [0, 1]");
        }
        if !(self.snr_min < self.snr_max) {
            return bad("snr_min must be below snr_max");
        }
        if !(self.bandwidth > 0.0) {
            return bad("bandwidth must be positive");
        }
        if self.mean_snr_std < 0.0 || self.dist_std < 0.0 || self.shadow_std < 0.0 {
            return bad("standard deviations must be nonnegative");
        }
        Ok(())
    }

    /// Thermal noise power over the configured bandwidth, dBm.
    pub fn noise_power(&self) -> f64 {
        self.noise_density + 10.0 * self.bandwidth.log10()
    }

    /// Mean of the fading term as it enters the SNR.
    pub fn fading_db_mean(&self) -> f64 {
        self.fading_sign_mode.sign() * RAYLEIGH_DB_MEAN
    }

    /// Maps dB onto `[0, 1]` using the operating range.
    pub fn normalize_snr(&self, snr: f64) -> f64 {
        ((snr - self.snr_min) / (self.snr_max - self.snr_min)).clamp(0.0, 1.0)
    }
}

/// Scheduled SNR degradation on a set of channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterferenceEvent {
    pub start_step: u64,
    pub duration: u64,
    /// dB, subtracted from each affected channel.
    pub snr_penalty: f64,
    pub affected_channels: Vec<usize>,
}

impl InterferenceEvent {
    pub fn is_active(&self, t: u64) -> bool {
        t >= self.start_step && t < self.start_step + self.duration
    }

    pub fn validate(&self, n_channels: usize) -> Result<()> {
        if self.duration < 1 {
            return Err(SimError::Config("interference duration must be at least 1".into()));
        }
        if !(self.snr_penalty >= 0.0) {
            return Err(SimError::Config("interference penalty must be nonnegative".into()));
        }
        if let Some(c) = self.affected_channels.iter().find(|&&c| c >= n_channels) {
            return Err(SimError::Config(format!("interference names channel {c} of {n_channels}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    /// Calibration target, dB.
    pub mean_snr: f64,
    pub distance: f64,
    pub shadow_std: f64,
    pub shadow: f64,
    pub fading_gain: f64,
    /// Constant dB correction applied by calibration.
    pub offset: f64,
    pub snr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    pub links: Vec<Link>,
    pub t: u64,
    events: Vec<InterferenceEvent>,
}

/// Log-distance path loss; distances below `ref_dist` are clamped.
pub fn path_loss(distance: f64, shadow: f64, config: &ChannelConfig) -> f64 {
    let d = if distance < config.ref_dist {
        log::warn!("distance {distance} m below reference distance; clamped");
        config.ref_dist
    } else {
        distance
    };
    config.ref_loss + 10.0 * config.path_loss_exponent * (d / config.ref_dist).log10() + shadow
}

/// `|h|²` for a given complex coefficient `(re, im)`.
pub fn gain_from_coefficient(re: f64, im: f64) -> f64 {
    re * re + im * im
}

/// Power gain of a `CN(0, 1)` coefficient: exponential with unit mean.
pub fn small_scale_gain<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    gain_from_coefficient(re, im) * 0.5
}

/// Link budget in dB. A zero gain is clamped to `config.snr_floor`.
pub fn link_budget_snr(loss: f64, gain: f64, config: &ChannelConfig) -> f64 {
    if !(gain > 0.0) {
        return config.snr_floor;
    }
    let snr = config.tx_power - loss + config.fading_sign_mode.sign() * 10.0 * gain.log10() - config.noise_power();
    snr.max(config.snr_floor)
}

fn normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, std: f64) -> f64 {
    if std == 0.0 {
        return mean;
    }
    Normal::new(mean, std).expect("finite std").sample(rng)
}

pub fn init_channels<R: Rng + ?Sized>(config: &ChannelConfig, n_experts: usize, rng: &mut R) -> Result<ChannelState> {
    config.validate()?;
    if n_experts < 1 {
        return Err(SimError::Config("at least one channel is required".into()));
    }
    let mut links = Vec::with_capacity(n_experts);
    for _ in 0..n_experts {
        let mean_snr = normal(rng, config.mean_snr_mean, config.mean_snr_std);
        let mut distance = normal(rng, config.dist_mean, config.dist_std);
        if distance < config.ref_dist {
            distance = config.ref_dist;
        }
        let shadow_std = normal(rng, config.shadow_mean, config.shadow_std).max(0.0);
        let shadow = normal(rng, 0.0, shadow_std);
        let fading_gain = small_scale_gain(rng);
        let offset = if config.calibrate {
            let nominal = config.tx_power - path_loss(distance, 0.0, config) + config.fading_db_mean()
                - config.noise_power();
            mean_snr - nominal
        } else {
            0.0
        };
        links.push(Link {
            mean_snr,
            distance,
            shadow_std,
            shadow,
            fading_gain,
            offset,
            snr: 0.0,
        });
    }
    let mut state = ChannelState {
        links,
        t: 0,
        events: Vec::new(),
    };
    state.refresh(config);
    Ok(state)
}

/// One AR(1) update of every channel's shadowing.
pub fn step_shadowing<R: Rng + ?Sized>(state: &mut ChannelState, config: &ChannelConfig, rng: &mut R) {
    let rho = config.correlation;
    let innov = (1.0 - rho * rho).max(0.0).sqrt();
    for link in &mut state.links {
        let w: f64 = rng.sample(StandardNormal);
        link.shadow = rho * link.shadow + innov * link.shadow_std * w;
    }
}

impl ChannelState {
    pub fn n_channels(&self) -> usize {
        self.links.len()
    }

    /// Total scheduled penalty on channel `i` at step `t`.
    pub fn penalty_at(&self, i: usize, t: u64) -> f64 {
        self.events
            .iter()
            .filter(|e| e.is_active(t) && e.affected_channels.contains(&i))
            .map(|e| e.snr_penalty)
            .sum()
    }

    pub fn events(&self) -> &[InterferenceEvent] {
        &self.events
    }

    /// Instantaneous SNR of channel `i` before burst penalties.
    pub fn compute_snr(&self, i: usize, config: &ChannelConfig) -> f64 {
        let link = &self.links[i];
        let loss = path_loss(link.distance, link.shadow, config);
        link_budget_snr(loss, link.fading_gain, config) + link.offset
    }

    fn refresh(&mut self, config: &ChannelConfig) {
        for i in 0..self.links.len() {
            let snr = self.compute_snr(i, config) - self.penalty_at(i, self.t);
            self.links[i].snr = snr;
        }
    }

    /// Current SNR vector in expert order.
    pub fn observe(&self) -> Vec<f64> {
        self.links.iter().map(|l| l.snr).collect()
    }

    /// Advance shadowing and redraw fading; `t` grows by one.
    pub fn step<R: Rng + ?Sized>(&mut self, config: &ChannelConfig, rng: &mut R) {
        step_shadowing(self, config, rng);
        for link in &mut self.links {
            link.fading_gain = small_scale_gain(rng);
        }
        self.t += 1;
        self.refresh(config);
    }

    /// Schedules an event. Overlapping events on a channel add their penalties.
    pub fn inject_burst(&mut self, event: InterferenceEvent, config: &ChannelConfig) -> Result<()> {
        event.validate(self.links.len())?;
        if event.start_step < self.t {
            return Err(SimError::Usage(format!(
                "interference starts at step {} but the channel is already at step {}",
                event.start_step, self.t
            )));
        }
        self.events.push(event);
        self.refresh(config);
        Ok(())
    }

    pub fn trace_rows(&self) -> Vec<ChannelTraceRow> {
        self.links
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let penalty = self.penalty_at(i, self.t);
                ChannelTraceRow {
                    step: self.t,
                    channel: i,
                    shadow_db: l.shadow,
                    fading_gain: l.fading_gain,
                    snr_db: l.snr,
                    burst_active: penalty > 0.0,
                    burst_penalty_db: penalty,
                }
            })
            .collect()
    }
}

/// One row of the channel trace CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelTraceRow {
    pub step: u64,
    pub channel: usize,
    pub shadow_db: f64,
    pub fading_gain: f64,
    pub snr_db: f64,
    pub burst_active: bool,
    pub burst_penalty_db: f64,
}

pub fn write_channel_trace<W: Write>(out: W, rows: &[ChannelTraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
