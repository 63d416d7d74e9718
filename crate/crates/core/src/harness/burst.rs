//! Interference stress test: a twin evaluation with and without a burst.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{BurstTestConfig, ScenarioConfig, Variant};
use super::runner::{Controller, Simulation};
use super::trace::StepRecord;
use crate::channel::InterferenceEvent;
use crate::error::{Result, SimError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstOutcome {
    pub variant: String,
    /// Lowest R_final while the event is active.
    pub dip_depth: f64,
    /// Mean R_final over the event window, with and without the burst.
    pub event_mean: f64,
    pub clean_event_mean: f64,
    /// Steps from event start until the smoothed R_final stays at or above
    /// the recovery fraction of the clean twin.
    pub recovery_steps: usize,
    pub recovered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstReport {
    pub seed: u64,
    pub event: InterferenceEvent,
    pub outcomes: Vec<BurstOutcome>,
}

fn trailing_means(values: &[f64], window: usize) -> Vec<f64> {
    (0..values.len())
        .map(|k| {
            let lo = (k + 1).saturating_sub(window);
            values[lo..=k].iter().sum::<f64>() / (k + 1 - lo) as f64
        })
        .collect()
}

/// `(steps, recovered)`: one past the last index where the trailing mean of
/// `hit` falls below `fraction` times that of `clean`; `(0, true)` when it
/// never does. Both series start at the event onset.
pub fn recovery_time(hit: &[f64], clean: &[f64], smoothing: usize, fraction: f64) -> (usize, bool) {
    let a = trailing_means(hit, smoothing.max(1));
    let b = trailing_means(clean, smoothing.max(1));
    let last_fail = a.iter().zip(&b).rposition(|(h, c)| *h < fraction * c);
    match last_fail {
        None => (0, true),
        Some(k) => (k + 1, k + 1 < hit.len()),
    }
}

/// A fresh simulation (step 0, empty buffer) carrying `trained`'s parameters.
pub fn fresh_with_parameters(trained: &Simulation) -> Result<Simulation> {
    let mut sim = Simulation::new(trained.config.clone())?;
    if let (Controller::Learned(dst), Controller::Learned(src)) = (&mut sim.controller, &trained.controller) {
        dst.actor = src.actor.clone();
        dst.critics = src.critics.clone();
        dst.targets = src.targets.clone();
    }
    if let (Some(dst), Some(src)) = (&mut sim.asem, &trained.asem) {
        dst.params = src.params.clone();
    }
    sim.meta.params = trained.meta.params.clone();
    Ok(sim)
}

/// Runs twin evaluations from `sim`'s current state and compares them.
pub fn burst_response(sim: &Simulation, test: &BurstTestConfig) -> Result<(BurstOutcome, Vec<StepRecord>, Vec<StepRecord>)> {
    let mut hit = sim.clone();
    let mut clean = sim.clone();
    hit.inject(test.event())?;
    let total = (test.lead_in + test.duration + test.tail) as usize;
    let mut hit_rows = Vec::with_capacity(total);
    let mut clean_rows = Vec::with_capacity(total);
    for k in 0..total {
        hit_rows.push(hit.step(0, k, false)?);
        clean_rows.push(clean.step(0, k, false)?);
    }
    let start = test.lead_in as usize;
    let end = start + test.duration as usize;
    let rf = |rows: &[StepRecord]| rows.iter().map(|r| r.r_final).collect::<Vec<_>>();
    let (h, c) = (rf(&hit_rows), rf(&clean_rows));
    let (recovery_steps, recovered) =
        recovery_time(&h[start..], &c[start..], test.smoothing, test.recovery_fraction);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let outcome = BurstOutcome {
        variant: sim.config.variant.as_str().to_string(),
        dip_depth: h[start..end].iter().copied().fold(f64::INFINITY, f64::min),
        event_mean: mean(&h[start..end]),
        clean_event_mean: mean(&c[start..end]),
        recovery_steps,
        recovered,
    };
    Ok((outcome, hit_rows, clean_rows))
}

/// Loads each `(variant, checkpoint)` pair into a fresh simulation of
/// `config` and measures its burst response.
pub fn run_burst_test(config: &ScenarioConfig, checkpoints: &[(Variant, &Path)]) -> Result<BurstReport> {
    if checkpoints.is_empty() {
        return Err(SimError::Usage("burst test needs at least one checkpoint".into()));
    }
    let mut outcomes = Vec::new();
    for (variant, path) in checkpoints {
        let mut sim = Simulation::new(config.with_variant(*variant))?;
        if variant.is_learned() {
            sim.load_checkpoint(path)?;
        }
        outcomes.push(burst_response(&sim, &config.burst_test)?.0);
    }
    Ok(BurstReport {
        seed: config.seed,
        event: config.burst_test.event(),
        outcomes,
    })
}
