//! Re-derives every reward in a trace from its logged weights, SNRs and the
//! run's configuration.

use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::metrics::{safety_counts, summarize, RunSummary, SafetyCounts};
use super::runner::Simulation;
use super::trace::{split_f64, split_usize, StepRecord};
use crate::category::Category;
use crate::error::{Result, SimError};
use crate::reward::{channel_reward, llm_reward, RewardBreakdown, TaskExpertSets};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub rows: usize,
    /// Largest absolute difference between a logged and a recomputed reward
    /// component.
    pub max_deviation: f64,
    /// Global step of the row holding `max_deviation`.
    pub worst_step: Option<u64>,
    /// Rows with a negative fused weight or fused mass above one. Mass below
    /// one is legitimate when the head product falls under the fusion floor.
    pub invalid_weight_rows: usize,
    pub safety: SafetyCounts,
    pub summary: RunSummary,
}

impl ReplayReport {
    /// True when the trace is internally consistent to `tolerance`.
    pub fn consistent(&self, tolerance: f64) -> bool {
        self.max_deviation <= tolerance
            && self.invalid_weight_rows == 0
            && self.safety.masked_invocations == 0
            && self.safety.empty_masks == 0
    }
}

fn recompute(row: &StepRecord, sim: &Simulation, sets: &[TaskExpertSets]) -> Result<RewardBreakdown> {
    let cfg = &sim.config;
    let n = sim.n_experts();
    let weights = split_f64(&row.w_final)?;
    let snr = split_f64(&row.snr_db)?;
    let invoked = split_usize(&row.invoked)?;
    if weights.len() != n || snr.len() != n || invoked.iter().any(|&i| i >= n) {
        return Err(SimError::Trace(format!(
            "row at step {} does not match a {n}-expert scenario",
            row.global_step
        )));
    }
    let category: Category = row.category.parse()?;
    let tag: Category = row.tag.parse()?;
    let mut qualities = vec![0.0; n];
    for &i in &invoked {
        let link = cfg.mesh.link_success(snr[i]);
        qualities[i] = (sim.registry.competence(i, tag) * link).clamp(0.0, 1.0);
    }
    let llm = llm_reward(&weights, &sets[category.index()], &qualities, &cfg.reward);
    let active: Vec<f64> = invoked.iter().map(|&i| weights[i]).collect();
    let ch = channel_reward(&invoked, &active, &snr, &cfg.channel, &cfg.reward);
    Ok(RewardBreakdown::new(&llm, &ch, &cfg.reward))
}

fn logged(row: &StepRecord) -> [f64; 11] {
    [
        row.r1,
        row.r2,
        row.r3,
        row.r4,
        row.r_llm,
        row.q_bar,
        row.stability,
        row.load_entropy,
        row.spectral_eff,
        row.r_channel,
        row.r_final,
    ]
}

fn derived(rb: &RewardBreakdown) -> [f64; 11] {
    [
        rb.r1,
        rb.r2,
        rb.r3,
        rb.r4,
        rb.r_llm,
        rb.q_bar,
        rb.stability,
        rb.load_entropy,
        rb.spectral_eff,
        rb.r_channel,
        rb.r_final,
    ]
}

/// Recomputes rewards row by row and summarises the trace.
pub fn replay_rows(config: &ScenarioConfig, rows: &[StepRecord]) -> Result<ReplayReport> {
    let sim = Simulation::new(config.clone())?;
    let sets: Vec<TaskExpertSets> = Category::ALL
        .iter()
        .map(|c| TaskExpertSets::from_competence(&sim.registry, *c, &config.reward))
        .collect();
    let mut max_deviation = 0.0f64;
    let mut worst_step = None;
    let mut invalid_weight_rows = 0;
    for row in rows {
        let rb = recompute(row, &sim, &sets)?;
        for (a, b) in logged(row).iter().zip(derived(&rb)) {
            let d = (a - b).abs();
            if d > max_deviation || (d.is_nan() && !max_deviation.is_nan()) {
                max_deviation = d;
                worst_step = Some(row.global_step);
            }
        }
        let w = split_f64(&row.w_final)?;
        if w.iter().any(|v| *v < 0.0) || w.iter().sum::<f64>() > 1.0 + 1e-9 {
            invalid_weight_rows += 1;
        }
    }
    Ok(ReplayReport {
        rows: rows.len(),
        max_deviation,
        worst_step,
        invalid_weight_rows,
        safety: safety_counts(rows)?,
        summary: summarize(rows, config.variant.as_str(), config.seed, config.eval_episodes)?,
    })
}
