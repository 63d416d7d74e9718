//! The per-step training loop and whole-run drivers.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use routesim_nn::ParameterSet;

use super::config::{ScenarioConfig, Variant};
use super::metrics::{summarize, summary_json, RunSummary};
use super::trace::{join_f64, join_usize, write_trace, StepRecord};
use crate::agent::{
    assemble_state, fuse_weights, uniform_over_mask, ActMode, Agent, CriticMode, StateLayout, Transition,
};
use crate::asem::Asem;
use crate::category::Category;
use crate::channel::{init_channels, ChannelState, InterferenceEvent};
use crate::error::{Result, SimError};
use crate::mesh::{
    aggregate_responses, build_context, default_competence, feature_digest, InvocationRequest, Loopback, Registry,
    Transport,
};
use crate::reward::{
    channel_reward, llm_reward, weight_entropy, ConfidenceWindow, MetaNet, RewardBreakdown, TaskExpertSets,
};
use crate::router::{coarse_mask, embed_text, extract_tag, CoarseMask, Corpus, EMBED_DIM};
use crate::tasks::{GeneratedTask, TaskGenerator};

/// Independent random streams so that environment and task sequences do not
/// depend on the controller.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Channel = 1,
    Tasks = 2,
    Agent = 3,
    Asem = 4,
    Policy = 5,
    Meta = 6,
}

fn stream_rng(seed: u64, s: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s as u64);
    rng
}

fn stream_seed(seed: u64, s: Stream) -> u64 {
    stream_rng(seed, s).random()
}

/// Routing policy behind a variant.
#[derive(Debug, Clone)]
pub enum Controller {
    Learned(Box<Agent>),
    /// Dirichlet(1) weights over the coarse mask.
    Random,
    /// Uniform expert weights, `softmax(SNR / 2)` channel weights.
    NetworkFirst,
}

/// What the controller sees at one step.
#[derive(Debug, Clone)]
pub struct Observation {
    pub generated: GeneratedTask,
    pub tag: Category,
    pub mask: CoarseMask,
    pub state: Arc<[f64]>,
    pub asem_loss: f64,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub config: ScenarioConfig,
    pub corpus: Corpus,
    pub registry: Registry,
    pub layout: StateLayout,
    pub channel: ChannelState,
    pub controller: Controller,
    pub asem: Option<Asem>,
    pub meta: MetaNet,
    generator: TaskGenerator,
    sets: Vec<TaskExpertSets>,
    window: ConfidenceWindow,
    channel_rng: ChaCha8Rng,
    task_rng: ChaCha8Rng,
    asem_rng: ChaCha8Rng,
    policy_rng: ChaCha8Rng,
    prev_reward: f64,
    global_step: u64,
    pending: Option<Observation>,
}

/// Dirichlet(1) sample restricted to the mask support.
pub fn dirichlet_over_mask<R: Rng + ?Sized>(mask: &[f64], rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = mask
        .iter()
        .map(|&m| {
            let e: f64 = rng.sample(Exp1);
            if m > 0.0 {
                e
            } else {
                0.0
            }
        })
        .collect();
    let s: f64 = draws.iter().sum();
    if s > 0.0 {
        draws.into_iter().map(|d| d / s).collect()
    } else {
        uniform_over_mask(mask)
    }
}

/// `softmax(snr / temperature_db)`.
pub fn snr_softmax(snr: &[f64], temperature_db: f64) -> Vec<f64> {
    let m = snr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = snr.iter().map(|s| ((s - m) / temperature_db).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

impl Simulation {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let corpus = Corpus::default_corpus();
        let competence = if config.competence.is_empty() {
            default_competence(&corpus)
        } else {
            config.competence.clone()
        };
        let registry = Registry::from_corpus(&corpus, &competence)?;
        if registry.len() != config.n_experts {
            return Err(SimError::Config(format!(
                "scenario declares {} experts but the registry holds {}",
                config.n_experts,
                registry.len()
            )));
        }
        let n = registry.len();
        let t = &config.tasks;
        let generator = TaskGenerator::new(t.distribution, t.feature_scale, t.feature_noise, t.cross_word_prob, &corpus)?;
        let sets = Category::ALL
            .iter()
            .map(|c| TaskExpertSets::from_competence(&registry, *c, &config.reward))
            .collect();
        let latent = config.asem.z1 + config.asem.z2;
        let layout = StateLayout::new(n, latent);

        let mut channel_rng = stream_rng(config.seed, Stream::Channel);
        let mut channel = init_channels(&config.channel, n, &mut channel_rng)?;
        for ev in &config.bursts {
            channel.inject_burst(ev.clone(), &config.channel)?;
        }
        let mut asem_rng = stream_rng(config.seed, Stream::Asem);
        let asem = if config.variant.uses_asem() {
            Some(Asem::new(config.asem.clone(), n, EMBED_DIM, &mut asem_rng)?)
        } else {
            None
        };
        let controller = match config.variant {
            Variant::Random => Controller::Random,
            Variant::NetworkFirst => Controller::NetworkFirst,
            v => {
                let mode = match v {
                    Variant::SemanticOnly => CriticMode::ExpertOnly,
                    Variant::NoCesac => CriticMode::Single {
                        alpha: config.reward.alpha,
                        beta: config.reward.beta,
                    },
                    _ => CriticMode::Decoupled,
                };
                let seed = stream_seed(config.seed, Stream::Agent);
                Controller::Learned(Box::new(Agent::new(config.agent.clone(), mode, layout, seed)?))
            }
        };
        let meta = MetaNet::new(&mut stream_rng(config.seed, Stream::Meta))?;
        Ok(Self {
            window: ConfidenceWindow::new(config.reward.window),
            task_rng: stream_rng(config.seed, Stream::Tasks),
            policy_rng: stream_rng(config.seed, Stream::Policy),
            corpus,
            registry,
            layout,
            channel,
            controller,
            asem,
            meta,
            generator,
            sets,
            channel_rng,
            asem_rng,
            prev_reward: 0.0,
            global_step: 0,
            pending: None,
            config,
        })
    }

    pub fn n_experts(&self) -> usize {
        self.registry.len()
    }

    pub fn global_step(&self) -> u64 {
        self.global_step
    }

    pub fn agent(&self) -> Option<&Agent> {
        match &self.controller {
            Controller::Learned(a) => Some(a),
            _ => None,
        }
    }

    fn normalized_snr(&self) -> Vec<f64> {
        self.channel
            .observe()
            .iter()
            .map(|s| self.config.channel.normalize_snr(*s))
            .collect()
    }

    /// Draws the next task and builds the state for it, stepping ASEM on the
    /// current channel observation.
    fn observe(&mut self, learn: bool) -> Result<Observation> {
        let n = self.n_experts();
        let generated = self.generator.generate(&mut self.task_rng);
        let text = &generated.task.instruction_text;
        let tag = extract_tag(text, &self.corpus)?;
        let (mask, r_tag) = if self.config.variant.uses_router() {
            (coarse_mask(text, tag, &self.registry, &self.corpus)?, tag.one_hot().to_vec())
        } else {
            (CoarseMask::all_ones(n), vec![0.0; Category::COUNT])
        };
        let q = self.normalized_snr();
        let (z, asem_loss) = match &mut self.asem {
            Some(asem) => {
                let tau = embed_text(text, self.corpus.hash_seed);
                let out = asem.step(&q, &tau, self.prev_reward, &mut self.asem_rng, learn)?;
                (out.z, out.loss.map_or(f64::NAN, |l| l.total))
            }
            None => (vec![0.0; self.layout.latent], f64::NAN),
        };
        let state = assemble_state(&self.layout, &generated.f_img, &generated.f_text, &r_tag, &mask.as_f64(), &z)?;
        Ok(Observation {
            generated,
            tag,
            mask,
            state: state.into(),
            asem_loss,
        })
    }

    /// Current observation, drawing it on first use.
    pub fn current(&mut self, learn: bool) -> Result<&Observation> {
        if self.pending.is_none() {
            self.pending = Some(self.observe(learn)?);
        }
        Ok(self.pending.as_ref().expect("just filled"))
    }

    /// Schedules an interference event relative to the current step.
    pub fn inject(&mut self, mut event: InterferenceEvent) -> Result<()> {
        event.start_step += self.channel.t;
        self.channel.inject_burst(event, &self.config.channel)
    }

    /// One environment interaction. With `learn`, the transition is stored
    /// and, once the buffer holds a batch, the agent, ASEM and meta net
    /// take one gradient step each; otherwise the policy acts on its means.
    pub fn step(&mut self, episode: usize, step: usize, learn: bool) -> Result<StepRecord> {
        let t = self.global_step;
        self.step_inner(episode, step, learn).map_err(|e| e.at_step(t))
    }

    fn step_inner(&mut self, episode: usize, step: usize, learn: bool) -> Result<StepRecord> {
        let n = self.n_experts();
        self.current(learn)?;
        let obs = self.pending.take().expect("observation prepared");
        let snr = self.channel.observe();
        let mask = obs.mask.as_f64();
        let mode = if learn { ActMode::Sample } else { ActMode::Mean };

        let (w_expert, w_channel) = match &mut self.controller {
            Controller::Learned(agent) => {
                let out = agent.act(&obs.state, mode)?;
                (out.w_expert, out.w_channel)
            }
            Controller::Random => (dirichlet_over_mask(&mask, &mut self.policy_rng), vec![1.0 / n as f64; n]),
            Controller::NetworkFirst => (uniform_over_mask(&mask), snr_softmax(&snr, 2.0)),
        };
        let (eps_fuse, eps_inv) = (self.config.agent.eps_fuse, self.config.agent.eps_invoke);
        let fused = fuse_weights(&w_expert, &w_channel, &mask, eps_fuse);
        let weights = if fused.degenerate {
            uniform_over_mask(&mask)
        } else {
            fused.weights.clone()
        };

        let invoked: Vec<usize> = (0..n).filter(|&i| weights[i] > eps_inv).collect();
        let ids: Vec<String> = invoked.iter().map(|&i| self.registry.descriptor(i).expert_id.clone()).collect();
        let mut envelope = build_context(&obs.generated.task, obs.tag, &obs.generated.f_img, &snr, t_stamp(self));
        envelope.requested_experts = ids.clone();
        let responses: Vec<_> = invoked
            .iter()
            .zip(&ids)
            .map(|(&i, id)| {
                let req = InvocationRequest {
                    expert_id: id.clone(),
                    envelope: envelope.clone(),
                    routing_weight: weights[i],
                };
                (i, Loopback.invoke(&self.registry, &req, snr[i], &self.config.mesh))
            })
            .collect();
        if let Some((_, r)) = responses.iter().find(|(_, r)| r.error.is_some()) {
            return Err(SimError::UnknownExpert(r.error.clone().unwrap_or_default()));
        }
        let aggregate = aggregate_responses(&responses, &weights, eps_fuse);
        let mut qualities = vec![0.0; n];
        for (i, r) in &responses {
            qualities[*i] = r.quality;
        }

        let rc = &self.config.reward;
        let category = obs.generated.task.category;
        let llm = llm_reward(&weights, &self.sets[category.index()], &qualities, rc);
        let active_w: Vec<f64> = invoked.iter().map(|&i| weights[i]).collect();
        let ch = channel_reward(&invoked, &active_w, &snr, &self.config.channel, rc);
        let rb = RewardBreakdown::new(&llm, &ch, rc);

        self.window.push(rb.r_llm, rb.r_channel, ch.q_bar);
        let total = (self.config.episodes * self.config.steps_per_episode).max(1) as f64;
        let features = self.window.features(self.global_step as f64 / total);
        let (meta_w_llm, meta_w_channel) = self.meta.reliability(&features)?;
        if learn && self.window.len() >= 2 {
            self.meta
                .train_step(&features, self.window.target(), self.config.meta_learning_rate)?;
        }

        let burst_active = self.channel.events().iter().any(|e| e.is_active(self.channel.t));
        let masked_invocations = invoked.iter().filter(|&&i| mask[i] == 0.0).count();

        self.prev_reward = rb.r_final;
        self.channel.step(&self.config.channel, &mut self.channel_rng);
        self.global_step += 1;
        let next = self.observe(learn)?;
        let done = step + 1 == self.config.steps_per_episode;

        let (mut critic_loss, mut actor_loss) = (f64::NAN, f64::NAN);
        if let Controller::Learned(agent) = &mut self.controller {
            if learn {
                let mut action = w_expert.clone();
                action.extend_from_slice(&w_channel);
                agent.buffer.push(Transition {
                    state: obs.state.clone(),
                    action,
                    r_llm: rb.r_llm,
                    r_channel: rb.r_channel,
                    next_state: next.state.clone(),
                    done,
                });
                if agent.ready() {
                    let stats = agent.update()?;
                    let used = &stats.critic_losses[..agent.critics.len()];
                    critic_loss = used.iter().sum::<f64>() / used.len() as f64;
                    actor_loss = stats.actor_loss;
                    if let Some(asem) = &mut self.asem {
                        asem.apply_update()?;
                    }
                } else if let Some(asem) = &mut self.asem {
                    asem.discard_update();
                }
            }
        }
        let record = StepRecord {
            episode,
            step,
            global_step: self.global_step - 1,
            category: category.as_str().to_string(),
            tag: obs.tag.as_str().to_string(),
            mask: join_usize(&obs.mask.bits.iter().map(|&b| b as usize).collect::<Vec<_>>()),
            state_digest: feature_digest(&obs.state)[..16].to_string(),
            w_expert: join_f64(&w_expert),
            w_channel: join_f64(&w_channel),
            w_final: join_f64(&weights),
            degenerate: fused.degenerate,
            invoked: join_usize(&invoked),
            snr_db: join_f64(&snr),
            aggregate_quality: aggregate.quality,
            r1: rb.r1,
            r2: rb.r2,
            r3: rb.r3,
            r4: rb.r4,
            r_llm: rb.r_llm,
            q_bar: rb.q_bar,
            stability: rb.stability,
            load_entropy: rb.load_entropy,
            spectral_eff: rb.spectral_eff,
            r_channel: rb.r_channel,
            r_final: rb.r_final,
            expert_entropy: weight_entropy(&weights, false),
            burst_active,
            masked_invocations,
            critic_loss,
            actor_loss,
            asem_loss: obs.asem_loss,
            meta_w_llm,
            meta_w_channel,
        };
        self.pending = Some(next);
        Ok(record)
    }

    /// Named parameter sets for checkpointing.
    pub fn named_sets(&self) -> Vec<(String, &ParameterSet)> {
        let mut v: Vec<(String, &ParameterSet)> = Vec::new();
        if let Some(agent) = self.agent() {
            v.extend(agent.named_sets());
        }
        if let Some(asem) = &self.asem {
            v.push(("asem".into(), &asem.params));
        }
        v.push(("meta".into(), &self.meta.params));
        v
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let named = self.named_sets();
        let refs: Vec<(&str, &ParameterSet)> = named.iter().map(|(n, s)| (n.as_str(), *s)).collect();
        let mut w = BufWriter::new(fs::File::create(path)?);
        routesim_nn::write_checkpoint(&mut w, &refs)?;
        Ok(())
    }

    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        if !path.exists() {
            return Err(SimError::Config(format!("checkpoint {} does not exist", path.display())));
        }
        let mut r = std::io::BufReader::new(fs::File::open(path)?);
        let mut loaded = routesim_nn::read_checkpoint(&mut r)?;
        if let Controller::Learned(agent) = &mut self.controller {
            agent.restore_sets(&mut loaded)?;
        }
        if let Some(asem) = &mut self.asem {
            asem.params = routesim_nn::take_set(&mut loaded, "asem")?;
            asem.reset_state();
        }
        self.meta.params = routesim_nn::take_set(&mut loaded, "meta")?;
        Ok(())
    }
}

/// Envelope timestamps are the global step, keeping files reproducible.
fn t_stamp(sim: &Simulation) -> u64 {
    sim.global_step
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<StepRecord>,
    pub summary: RunSummary,
    pub simulation: Simulation,
}

/// Where a run writes its files.
#[derive(Debug, Clone)]
pub struct RunFiles {
    pub dir: PathBuf,
}

impl RunFiles {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
    pub fn config(&self) -> PathBuf {
        self.dir.join("config.toml")
    }
    pub fn trace(&self) -> PathBuf {
        self.dir.join("trace.csv")
    }
    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.json")
    }
    pub fn checkpoint(&self, episode: usize) -> PathBuf {
        self.dir.join("checkpoints").join(format!("episode_{episode:05}.ckpt"))
    }
    pub fn final_checkpoint(&self) -> PathBuf {
        self.dir.join("model.ckpt")
    }
    pub fn diagnostic(&self) -> PathBuf {
        self.dir.join("diagnostic.json")
    }
}

fn write_diagnostic(files: &RunFiles, err: &SimError, last: Option<&StepRecord>) -> Result<()> {
    let dump = serde_json::json!({
        "error": err.to_string(),
        "last_row": last,
    });
    fs::write(files.diagnostic(), serde_json::to_string_pretty(&dump)? + "\n")?;
    Ok(())
}

/// Trains (or, for fixed baselines, simply runs) for `config.episodes`
/// episodes. With `files`, writes the config snapshot, trace, metrics and
/// periodic checkpoints.
pub fn run_training(config: &ScenarioConfig, files: Option<&RunFiles>) -> Result<RunOutput> {
    let mut sim = Simulation::new(config.clone())?;
    if let Some(f) = files {
        fs::create_dir_all(&f.dir)?;
        fs::write(f.config(), config.to_toml()?)?;
    }
    let mut rows = Vec::with_capacity(config.episodes * config.steps_per_episode);
    for ep in 0..config.episodes {
        for s in 0..config.steps_per_episode {
            match sim.step(ep, s, true) {
                Ok(r) => rows.push(r),
                Err(e) => {
                    if let Some(f) = files {
                        write_diagnostic(f, &e, rows.last())?;
                    }
                    return Err(e);
                }
            }
        }
        if let Some(f) = files {
            if config.checkpoint_every > 0 && (ep + 1) % config.checkpoint_every == 0 {
                sim.save_checkpoint(&f.checkpoint(ep + 1))?;
            }
        }
        log::debug!("{} seed {} episode {ep} done", config.variant, config.seed);
    }
    let summary = summarize(&rows, config.variant.as_str(), config.seed, config.eval_episodes)?;
    if let Some(f) = files {
        let mut w = BufWriter::new(fs::File::create(f.trace())?);
        write_trace(&mut w, &rows)?;
        drop(w);
        fs::write(f.metrics(), summary_json(&summary)?)?;
        sim.save_checkpoint(&f.final_checkpoint())?;
    }
    Ok(RunOutput {
        rows,
        summary,
        simulation: sim,
    })
}

/// Baseline runs: `random`, `network_first`, or the trained `semantic_only`.
pub fn run_baseline(kind: Variant, config: &ScenarioConfig, files: Option<&RunFiles>) -> Result<RunOutput> {
    if !Variant::BASELINES.contains(&kind) {
        return Err(SimError::Usage(format!("'{kind}' is not a baseline")));
    }
    run_training(&config.with_variant(kind), files)
}

/// Ablation runs: `no_asem`, `no_cesac`, `no_mcp`.
pub fn run_ablation(kind: Variant, config: &ScenarioConfig, files: Option<&RunFiles>) -> Result<RunOutput> {
    if !Variant::ABLATIONS.contains(&kind) {
        return Err(SimError::Usage(format!("'{kind}' is not an ablation")));
    }
    run_training(&config.with_variant(kind), files)
}
