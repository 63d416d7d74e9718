//! Capability registry, context envelopes, synthetic expert invocation and
//! weighted response aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::category::Category;
use crate::error::{Result, SimError};
use crate::router::{embed_text, Corpus, TaskInstance, EMBED_DIM};

pub const ENVELOPE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComputeClass {
    Server,
    EdgeGpu,
    EdgeCpu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub compute_class: ComputeClass,
    /// bytes
    pub max_payload: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilityDescriptor {
    pub expert_id: String,
    pub display_name: String,
    pub task_categories: Vec<Category>,
    pub capability_text: String,
    pub descriptor_embedding: Vec<f64>,
    pub device_profile: DeviceProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertProfile {
    pub expert_id: String,
    /// Indexed by [`Category::index`].
    pub competence: [f64; Category::COUNT],
}

/// Expert id → competence per category, in category order.
pub type CompetenceMatrix = BTreeMap<String, [f64; Category::COUNT]>;

/// 0.95 on each advertised specialty, 0.3 on general for specialists and
/// 0.1 everywhere else.
pub fn default_competence(corpus: &Corpus) -> CompetenceMatrix {
    corpus
        .experts
        .iter()
        .map(|e| {
            let mut row = [0.1; Category::COUNT];
            if !e.categories.contains(&Category::General) {
                row[Category::General.index()] = 0.3;
            }
            for c in &e.categories {
                row[c.index()] = 0.95;
            }
            (e.id.clone(), row)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
struct RegistryEntry {
    descriptor: CapabilityDescriptor,
    profile: ExpertProfile,
}

/// Registered experts in index order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registry {
    entries: Vec<RegistryEntry>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, descriptor: CapabilityDescriptor, profile: ExpertProfile) -> Result<usize> {
        if self.index_of(&descriptor.expert_id).is_some() {
            return Err(SimError::DuplicateExpert(descriptor.expert_id));
        }
        if descriptor.expert_id != profile.expert_id {
            return Err(SimError::Config(format!(
                "descriptor '{}' paired with profile '{}'",
                descriptor.expert_id, profile.expert_id
            )));
        }
        if descriptor.task_categories.is_empty() {
            return Err(SimError::Config(format!("expert '{}' has no task category", descriptor.expert_id)));
        }
        if descriptor.descriptor_embedding.len() != EMBED_DIM {
            return Err(SimError::Config(format!(
                "expert '{}' embedding has length {}",
                descriptor.expert_id,
                descriptor.descriptor_embedding.len()
            )));
        }
        if profile.competence.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(SimError::Config(format!("expert '{}' competence outside [0, 1]", profile.expert_id)));
        }
        self.entries.push(RegistryEntry { descriptor, profile });
        Ok(self.entries.len() - 1)
    }

    /// Registers every corpus expert with competence taken from `competence`.
    pub fn from_corpus(corpus: &Corpus, competence: &CompetenceMatrix) -> Result<Self> {
        let mut reg = Registry::new();
        for e in &corpus.experts {
            let row = competence
                .get(&e.id)
                .ok_or_else(|| SimError::Config(format!("no competence row for expert '{}'", e.id)))?;
            let descriptor = CapabilityDescriptor {
                expert_id: e.id.clone(),
                display_name: e.display_name.clone(),
                task_categories: e.categories.clone(),
                capability_text: e.capability_text.clone(),
                descriptor_embedding: embed_text(&e.capability_text, corpus.hash_seed),
                device_profile: DeviceProfile {
                    compute_class: e.compute_class,
                    max_payload: e.max_payload,
                },
            };
            reg.register(
                descriptor,
                ExpertProfile {
                    expert_id: e.id.clone(),
                    competence: *row,
                },
            )?;
        }
        if let Some(extra) = competence.keys().find(|k| reg.index_of(k).is_none()) {
            return Err(SimError::UnknownExpert(extra.clone()));
        }
        Ok(reg)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.descriptor.expert_id == id)
    }

    pub fn lookup(&self, id: &str) -> Option<&CapabilityDescriptor> {
        self.index_of(id).map(|i| &self.entries[i].descriptor)
    }

    pub fn descriptor(&self, i: usize) -> &CapabilityDescriptor {
        &self.entries[i].descriptor
    }

    pub fn profile(&self, i: usize) -> &ExpertProfile {
        &self.entries[i].profile
    }

    pub fn profile_of(&self, id: &str) -> Option<&ExpertProfile> {
        self.index_of(id).map(|i| &self.entries[i].profile)
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &CapabilityDescriptor> {
        self.entries.iter().map(|e| &e.descriptor)
    }

    pub fn ids(&self) -> Vec<String> {
        self.descriptors().map(|d| d.expert_id.clone()).collect()
    }

    pub fn embedding_index(&self) -> Vec<(String, Vec<f64>)> {
        self.descriptors()
            .map(|d| (d.expert_id.clone(), d.descriptor_embedding.clone()))
            .collect()
    }

    /// Competence of expert `i` on category `c`.
    pub fn competence(&self, i: usize, c: Category) -> f64 {
        self.entries[i].profile.competence[c.index()]
    }

    /// Canonical JSON of all descriptors and profiles.
    pub fn snapshot_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Snapshot<'a> {
            schema_version: u32,
            experts: Vec<(&'a CapabilityDescriptor, &'a ExpertProfile)>,
        }
        canonical_json(&Snapshot {
            schema_version: ENVELOPE_SCHEMA_VERSION,
            experts: self.entries.iter().map(|e| (&e.descriptor, &e.profile)).collect(),
        })
    }
}

fn sort_value(v: Value) -> Value {
    match v {
        Value::Object(map) => {
            let sorted: BTreeMap<String, Value> = map.into_iter().map(|(k, v)| (k, sort_value(v))).collect();
            Value::Object(sorted.into_iter().collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sort_value).collect()),
        other => other,
    }
}

/// Compact JSON with object keys sorted at every depth.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string(&sort_value(serde_json::to_value(value)?))?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn feature_digest(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextEnvelope {
    pub schema_version: u32,
    pub task_tag: Category,
    pub instruction_digest: String,
    pub image_feature_ref: String,
    pub requested_experts: Vec<String>,
    pub channel_snapshot: Vec<f64>,
    pub timestamp: u64,
}

impl ContextEnvelope {
    pub fn to_canonical_json(&self) -> Result<String> {
        canonical_json(self)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let env: ContextEnvelope = serde_json::from_str(text).map_err(|e| {
            if e.to_string().contains("unknown variant") {
                SimError::UnknownCategory(e.to_string())
            } else {
                SimError::Json(e)
            }
        })?;
        if env.schema_version != ENVELOPE_SCHEMA_VERSION {
            return Err(SimError::Config(format!("unsupported envelope schema {}", env.schema_version)));
        }
        Ok(env)
    }

    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(self.to_canonical_json()?.as_bytes()))
    }
}

pub fn build_context(
    task: &TaskInstance,
    tag: Category,
    image_features: &[f64],
    channel_obs: &[f64],
    timestamp: u64,
) -> ContextEnvelope {
    ContextEnvelope {
        schema_version: ENVELOPE_SCHEMA_VERSION,
        task_tag: tag,
        instruction_digest: sha256_hex(task.instruction_text.as_bytes()),
        image_feature_ref: format!("img-{}", &feature_digest(image_features)[..16]),
        requested_experts: Vec::new(),
        channel_snapshot: channel_obs.to_vec(),
        timestamp,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvocationRequest {
    pub expert_id: String,
    pub envelope: ContextEnvelope,
    pub routing_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvocationResponse {
    pub expert_id: String,
    pub quality: f64,
    pub payload_digest: String,
    pub link_success: f64,
    pub latency_steps: u32,
    pub error: Option<String>,
}

/// Sigmoid link model in dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshConfig {
    pub link_steepness: f64,
    /// dB
    pub link_threshold: f64,
    pub latency_steps: u32,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            link_steepness: 1.0,
            link_threshold: 10.0,
            latency_steps: 1,
        }
    }
}

impl MeshConfig {
    pub fn link_success(&self, snr: f64) -> f64 {
        1.0 / (1.0 + (-self.link_steepness * (snr - self.link_threshold)).exp())
    }
}

/// Delivers a request to an expert and returns its response.
pub trait Transport {
    fn invoke(
        &self,
        registry: &Registry,
        request: &InvocationRequest,
        channel_snr: f64,
        config: &MeshConfig,
    ) -> InvocationResponse;
}

/// In-process transport backed by the synthetic competence oracle.
#[derive(Debug, Clone, Copy, Default)]
pub struct Loopback;

impl Transport for Loopback {
    fn invoke(
        &self,
        registry: &Registry,
        request: &InvocationRequest,
        channel_snr: f64,
        config: &MeshConfig,
    ) -> InvocationResponse {
        invoke_expert(request, channel_snr, registry, config)
    }
}

pub fn invoke_expert(
    request: &InvocationRequest,
    channel_snr: f64,
    registry: &Registry,
    config: &MeshConfig,
) -> InvocationResponse {
    let Some(profile) = registry.profile_of(&request.expert_id) else {
        return InvocationResponse {
            expert_id: request.expert_id.clone(),
            quality: 0.0,
            payload_digest: String::new(),
            link_success: 0.0,
            latency_steps: 0,
            error: Some(SimError::UnknownExpert(request.expert_id.clone()).to_string()),
        };
    };
    let link = config.link_success(channel_snr);
    let quality = (profile.competence[request.envelope.task_tag.index()] * link).clamp(0.0, 1.0);
    let mut h = Sha256::new();
    h.update(request.expert_id.as_bytes());
    h.update(request.envelope.instruction_digest.as_bytes());
    h.update(request.envelope.image_feature_ref.as_bytes());
    h.update(request.envelope.timestamp.to_le_bytes());
    InvocationResponse {
        expert_id: request.expert_id.clone(),
        quality,
        payload_digest: hex::encode(h.finalize()),
        link_success: link,
        latency_steps: config.latency_steps,
        error: None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub quality: f64,
    pub contributing: Vec<usize>,
    pub no_experts_invoked: bool,
}

/// `Σ w[i]·quality_i` over `(expert index, response)` pairs, summed in index
/// order so the result does not depend on completion order.
pub fn aggregate_responses(responses: &[(usize, InvocationResponse)], weights: &[f64], epsilon: f64) -> Aggregate {
    if responses.is_empty() {
        return Aggregate {
            quality: 0.0,
            contributing: Vec::new(),
            no_experts_invoked: true,
        };
    }
    let mut ordered: Vec<&(usize, InvocationResponse)> = responses.iter().collect();
    ordered.sort_by_key(|(i, _)| *i);
    let mut quality = 0.0;
    let mut contributing = Vec::new();
    for (i, r) in ordered {
        let w = weights[*i];
        quality += w * r.quality;
        if w > epsilon {
            contributing.push(*i);
        }
    }
    Aggregate {
        quality,
        contributing,
        no_experts_invoked: false,
    }
}
