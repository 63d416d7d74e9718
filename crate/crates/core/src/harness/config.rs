use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::asem::AsemConfig;
use crate::category::Category;
use crate::channel::{ChannelConfig, InterferenceEvent};
use crate::error::{Result, SimError};
use crate::mesh::{CompetenceMatrix, MeshConfig};
use crate::reward::RewardConfig;

/// Which controller drives routing, and what is stripped from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    Random,
    SemanticOnly,
    NetworkFirst,
    NoAsem,
    NoCesac,
    NoMcp,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Full,
        Variant::Random,
        Variant::SemanticOnly,
        Variant::NetworkFirst,
        Variant::NoAsem,
        Variant::NoCesac,
        Variant::NoMcp,
    ];
    pub const BASELINES: [Variant; 3] = [Variant::Random, Variant::SemanticOnly, Variant::NetworkFirst];
    pub const ABLATIONS: [Variant; 3] = [Variant::NoAsem, Variant::NoCesac, Variant::NoMcp];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Random => "random",
            Variant::SemanticOnly => "semantic_only",
            Variant::NetworkFirst => "network_first",
            Variant::NoAsem => "no_asem",
            Variant::NoCesac => "no_cesac",
            Variant::NoMcp => "no_mcp",
        }
    }

    /// Whether the variant trains a CE-SAC agent.
    pub fn is_learned(self) -> bool {
        !matches!(self, Variant::Random | Variant::NetworkFirst)
    }

    pub fn uses_asem(self) -> bool {
        self.is_learned() && self != Variant::NoAsem
    }

    pub fn uses_router(self) -> bool {
        self != Variant::NoMcp
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == key)
            .ok_or_else(|| SimError::Usage(format!("unknown variant '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    /// Category probabilities in category order.
    pub distribution: [f64; Category::COUNT],
    pub feature_scale: f64,
    pub feature_noise: f64,
    /// Chance of appending one word from another category's lexicon.
    pub cross_word_prob: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            distribution: [0.2; Category::COUNT],
            feature_scale: 1.0,
            feature_noise: 0.5,
            cross_word_prob: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BurstTestConfig {
    /// Evaluation steps before the event starts.
    pub lead_in: u64,
    pub duration: u64,
    /// dB
    pub penalty: f64,
    pub affected_channels: Vec<usize>,
    /// Evaluation steps after the event ends.
    pub tail: u64,
    /// Fraction of the clean reference that counts as recovered.
    pub recovery_fraction: f64,
    /// Trailing window for the moving averages.
    pub smoothing: usize,
}

impl Default for BurstTestConfig {
    fn default() -> Self {
        Self {
            lead_in: 100,
            duration: 50,
            penalty: 20.0,
            affected_channels: vec![0, 2, 4, 6],
            tail: 50,
            recovery_fraction: 0.9,
            smoothing: 5,
        }
    }
}

impl BurstTestConfig {
    pub fn event(&self) -> InterferenceEvent {
        InterferenceEvent {
            start_step: self.lead_in,
            duration: self.duration,
            snr_penalty: self.penalty,
            affected_channels: self.affected_channels.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_experts: usize,
    pub episodes: usize,
    pub steps_per_episode: usize,
    /// Trailing episodes summarised in the metrics file.
    pub eval_episodes: usize,
    /// Episodes between checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    pub variant: Variant,
    pub meta_learning_rate: f64,
    /// Expert id → per-category competence; empty means the corpus default.
    pub competence: CompetenceMatrix,
    pub tasks: TaskConfig,
    pub channel: ChannelConfig,
    pub mesh: MeshConfig,
    pub reward: RewardConfig,
    pub agent: AgentConfig,
    pub asem: AsemConfig,
    /// Interference scheduled during training, in global steps.
    pub bursts: Vec<InterferenceEvent>,
    pub burst_test: BurstTestConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_experts: 7,
            episodes: 1000,
            steps_per_episode: 16,
            eval_episodes: 100,
            checkpoint_every: 100,
            variant: Variant::Full,
            meta_learning_rate: 1e-3,
            competence: CompetenceMatrix::new(),
            tasks: TaskConfig::default(),
            channel: ChannelConfig::default(),
            mesh: MeshConfig::default(),
            reward: RewardConfig::default(),
            agent: AgentConfig::default(),
            asem: AsemConfig::default(),
            bursts: Vec::new(),
            burst_test: BurstTestConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps_per_episode == 0 {
            return Err(SimError::Config("steps_per_episode must be positive".into()));
        }
        if self.n_experts == 0 {
            return Err(SimError::Config("n_experts must be positive".into()));
        }
        if self.eval_episodes == 0 {
            return Err(SimError::Config("eval_episodes must be positive".into()));
        }
        let total: f64 = self.tasks.distribution.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.tasks.distribution.iter().any(|p| *p < 0.0) {
            return Err(SimError::Config(format!("task distribution must sum to 1, got {total}")));
        }
        if (self.reward.alpha + self.reward.beta - 1.0).abs() > 1e-9 {
            return Err(SimError::Config("reward alpha and beta must sum to 1".into()));
        }
        for ev in &self.bursts {
            ev.validate(self.n_experts)?;
        }
        self.burst_test.event().validate(self.n_experts)?;
        if !(0.0..=1.0).contains(&self.burst_test.recovery_fraction) || self.burst_test.smoothing == 0 {
            return Err(SimError::Config("burst_test needs recovery_fraction in [0,1] and smoothing ≥ 1".into()));
        }
        self.channel.validate()?;
        self.reward.validate()?;
        self.agent.validate()?;
        Ok(())
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ScenarioConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ScenarioConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = ScenarioConfig::from_toml("seed = 9\nvariant = \"no_mcp\"\n[agent]\nbatch_size = 16\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.variant, Variant::NoMcp);
        assert_eq!(cfg.agent.batch_size, 16);
        assert_eq!(cfg.steps_per_episode, 16);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ScenarioConfig::from_toml("seeed = 1\n").is_err());
        assert!(ScenarioConfig::from_toml("[agent]\ngama = 0.9\n").is_err());
    }

    #[test]
    fn bad_distribution_is_rejected() {
        let mut cfg = ScenarioConfig::default();
        cfg.tasks.distribution = [0.5, 0.5, 0.5, 0.0, 0.0];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn variant_names_parse() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("no-asem".parse::<Variant>().unwrap(), Variant::NoAsem);
        assert!("bogus".parse::<Variant>().is_err());
    }
}
