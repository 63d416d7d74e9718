//! Summary metrics as pure functions of trace rows.

use serde::{Deserialize, Serialize};

use super::trace::{split_usize, StepRecord};
use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsRow {
    pub llm_quality: MeanStd,
    pub task_expert_alignment: MeanStd,
    pub expert_diversity: MeanStd,
    pub channel_quality: MeanStd,
    pub snr_quality: MeanStd,
    pub channel_stability: MeanStd,
}

impl MetricsRow {
    pub fn named(&self) -> [(&'static str, MeanStd); 6] {
        [
            ("llm_quality", self.llm_quality),
            ("task_expert_alignment", self.task_expert_alignment),
            ("expert_diversity", self.expert_diversity),
            ("channel_quality", self.channel_quality),
            ("snr_quality", self.snr_quality),
            ("channel_stability", self.channel_stability),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SafetyCounts {
    pub masked_invocations: usize,
    pub empty_masks: usize,
    pub degenerate_steps: usize,
}

/// Everything written to the metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub variant: String,
    pub seed: u64,
    pub episodes: usize,
    pub eval_episodes: usize,
    pub metrics: Option<MetricsRow>,
    pub r_final: Option<MeanStd>,
    pub convergence_episode: Option<usize>,
    pub safety: SafetyCounts,
}

/// Rows grouped by episode, in trace order.
pub fn episodes(rows: &[StepRecord]) -> Vec<&[StepRecord]> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=rows.len() {
        if i == rows.len() || rows[i].episode != rows[start].episode {
            if i > start {
                out.push(&rows[start..i]);
            }
            start = i;
        }
    }
    out
}

fn mean_of(rows: &[StepRecord], f: impl Fn(&StepRecord) -> f64) -> f64 {
    rows.iter().map(f).sum::<f64>() / rows.len() as f64
}

/// Per-episode means of each quantity, then mean ± std across episodes.
pub fn compute_metrics(eps: &[&[StepRecord]]) -> Result<MetricsRow> {
    if eps.is_empty() || eps.iter().any(|e| e.is_empty()) {
        return Err(SimError::Empty("metrics need at least one nonempty episode".into()));
    }
    let col = |f: &dyn Fn(&StepRecord) -> f64| -> MeanStd {
        let per: Vec<f64> = eps.iter().map(|e| mean_of(e, f)).collect();
        MeanStd::of(&per)
    };
    Ok(MetricsRow {
        llm_quality: col(&|r| r.r_llm),
        task_expert_alignment: col(&|r| (r.r1 + r.r2) / 2.0),
        expert_diversity: col(&|r| r.expert_entropy),
        channel_quality: col(&|r| r.r_channel),
        snr_quality: col(&|r| r.q_bar),
        channel_stability: col(&|r| r.stability),
    })
}

pub fn episode_r_final(eps: &[&[StepRecord]]) -> Vec<f64> {
    eps.iter().map(|e| mean_of(e, |r| r.r_final)).collect()
}

/// First episode whose trailing `window`-episode mean of R_final reaches
/// `fraction` of the final value (the mean over the last `tail` episodes).
pub fn convergence_episode(per_episode: &[f64], window: usize, tail: usize, fraction: f64) -> Option<usize> {
    if per_episode.len() < window || window == 0 {
        return None;
    }
    let k = tail.min(per_episode.len());
    let fin = per_episode[per_episode.len() - k..].iter().sum::<f64>() / k as f64;
    let goal = fraction * fin;
    let mut sum: f64 = per_episode[..window].iter().sum();
    if sum / window as f64 >= goal {
        return Some(window - 1);
    }
    for i in window..per_episode.len() {
        sum += per_episode[i] - per_episode[i - window];
        if sum / window as f64 >= goal {
            return Some(i);
        }
    }
    None
}

pub fn safety_counts(rows: &[StepRecord]) -> Result<SafetyCounts> {
    let mut s = SafetyCounts::default();
    for r in rows {
        let mask = split_usize(&r.mask)?;
        let invoked = split_usize(&r.invoked)?;
        if mask.iter().all(|&b| b == 0) {
            s.empty_masks += 1;
        }
        s.masked_invocations += invoked.iter().filter(|&&i| mask.get(i).copied().unwrap_or(0) == 0).count();
        if r.degenerate {
            s.degenerate_steps += 1;
        }
    }
    Ok(s)
}

/// Summary over the trailing `eval_episodes` episodes of a trace.
pub fn summarize(rows: &[StepRecord], variant: &str, seed: u64, eval_episodes: usize) -> Result<RunSummary> {
    let eps = episodes(rows);
    let k = eval_episodes.min(eps.len());
    let tail = &eps[eps.len() - k..];
    let per = episode_r_final(&eps);
    let (metrics, r_final) = if tail.is_empty() {
        (None, None)
    } else {
        (Some(compute_metrics(tail)?), Some(MeanStd::of(&episode_r_final(tail))))
    };
    Ok(RunSummary {
        variant: variant.to_string(),
        seed,
        episodes: eps.len(),
        eval_episodes: k,
        metrics,
        r_final,
        convergence_episode: convergence_episode(&per, 50, eval_episodes, 0.95),
        safety: safety_counts(rows)?,
    })
}

pub fn summary_json(summary: &RunSummary) -> Result<String> {
    let mut s = serde_json::to_string_pretty(summary)?;
    s.push('\n');
    Ok(s)
}
