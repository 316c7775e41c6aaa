//! The closed decision loop: observe each station's state, pick examples
//! from its experience pool, prompt the model (under ε-greedy exploration),
//! evaluate the joint decision, score every station, and grow the pools.

use std::sync::Arc;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, FeedbackMemory, QLearning, QLearningConfig};
use crate::experience::{Example, ExampleSet, ExperiencePool, SelectionConfig, DEFAULT_POOL_CAPACITY};
use crate::llm::{self, ChatModel, LlmConfig};
use crate::netsim::{Case, EvalReport, NetworkConfig, NetworkState, PowerDecision, Scene};
use crate::prompting::{self, PromptTemplate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub target_power_w: f64,
    /// Subtracted when the station misses its average-rate requirement.
    pub penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { target_power_w: 1.0, penalty: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub epsilon: f64,
    /// Multiplicative per-episode decay of `epsilon`.
    pub epsilon_decay: f64,
    pub epsilon_floor: f64,
    pub episodes: usize,
    pub steps_per_episode: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { epsilon: 0.2, epsilon_decay: 0.97, epsilon_floor: 0.01, episodes: 200, steps_per_episode: 20 }
    }
}

impl PolicyConfig {
    pub fn epsilon_at(&self, episode: usize) -> f64 {
        (self.epsilon * self.epsilon_decay.powi(episode as i32)).max(self.epsilon_floor.min(self.epsilon))
    }

    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if !(0.0..=1.0).contains(&self.epsilon) {
            problems.push(format!("epsilon must be in [0, 1], got {}", self.epsilon));
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            problems.push(format!("epsilon_decay must be in (0, 1], got {}", self.epsilon_decay));
        }
        if !(0.0..=1.0).contains(&self.epsilon_floor) {
            problems.push(format!("epsilon_floor must be in [0, 1], got {}", self.epsilon_floor));
        }
        if self.episodes == 0 || self.steps_per_episode == 0 {
            problems.push("episodes and steps_per_episode must be positive".to_string());
        }
        problems
    }
}

/// `r = P_target − P_b`, less the penalty when station `bs` misses its rate floor.
pub fn compute_reward(report: &EvalReport, bs: usize, cfg: &RewardConfig) -> f64 {
    let mut r = cfg.target_power_w - report.bs_power[bs];
    if !report.constraint_ok[bs] {
        r -= cfg.penalty;
    }
    r
}

/// Every controller the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Icl,
    Exhaustive,
    Qlearning,
    Feedback,
    Random,
    IclRandomExamples,
    IclNopool,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::Icl,
        PolicyKind::Exhaustive,
        PolicyKind::Qlearning,
        PolicyKind::Feedback,
        PolicyKind::Random,
        PolicyKind::IclRandomExamples,
        PolicyKind::IclNopool,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            PolicyKind::Icl => "icl",
            PolicyKind::Exhaustive => "exhaustive",
            PolicyKind::Qlearning => "qlearning",
            PolicyKind::Feedback => "feedback",
            PolicyKind::Random => "random",
            PolicyKind::IclRandomExamples => "icl_random_examples",
            PolicyKind::IclNopool => "icl_nopool",
        }
    }

    pub fn uses_llm(self) -> bool {
        matches!(
            self,
            PolicyKind::Icl | PolicyKind::Feedback | PolicyKind::IclRandomExamples | PolicyKind::IclNopool
        )
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.tag() == s)
            .ok_or_else(|| format!("unknown policy {s:?}"))
    }
}

/// Everything one control loop needs besides the model and the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub case: Case,
    pub network: NetworkConfig,
    pub reward: RewardConfig,
    pub policy: PolicyConfig,
    pub selection: SelectionConfig,
    pub llm: LlmConfig,
    pub qlearning: QLearningConfig,
    pub pool_capacity: Option<usize>,
    pub template: PromptTemplate,
}

impl LoopConfig {
    pub fn new(case: Case) -> Self {
        Self {
            case,
            network: NetworkConfig::default(),
            reward: RewardConfig::default(),
            policy: PolicyConfig::default(),
            selection: SelectionConfig::default(),
            llm: LlmConfig::default(),
            qlearning: QLearningConfig::default(),
            pool_capacity: Some(DEFAULT_POOL_CAPACITY),
            template: PromptTemplate::default_for(case),
        }
    }
}

/// Seeded source of network states.
///
/// Discrete case: each station owns a roster of `max_users` positions drawn
/// once per run; every episode redraws the user counts and a station with
/// `U` users serves the first `U` roster entries for the whole episode.
/// Continuous case: user counts are redrawn per episode and positions every
/// step.
#[derive(Debug, Clone)]
pub struct Environment {
    config: NetworkConfig,
    case: Case,
    rng: ChaCha8Rng,
    roster: Option<NetworkState>,
    current: Option<NetworkState>,
}

impl Environment {
    pub fn new(config: NetworkConfig, case: Case, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ENV_STREAM);
        let roster = (case == Case::Discrete).then(|| {
            let full = vec![config.max_users; config.num_bs];
            NetworkState::sample_with_counts(&config, case, &full, &mut rng)
        });
        Self { config, case, rng, roster, current: None }
    }

    pub fn state(&mut self, step: usize) -> &NetworkState {
        if step > 0 && self.current.is_some() {
            if self.case == Case::Continuous {
                let next = self.current.as_ref().unwrap().resample_positions(&self.config, &mut self.rng);
                self.current = Some(next);
            }
            return self.current.as_ref().unwrap();
        }
        let next = match &self.roster {
            Some(roster) => {
                let users = roster
                    .users
                    .iter()
                    .map(|group| group[..self.rng.gen_range(self.config.min_users..=self.config.max_users)].to_vec())
                    .collect();
                NetworkState::new(self.case, roster.bs_positions.clone(), users).expect("roster entries are non-empty")
            }
            None => NetworkState::sample(&self.config, self.case, &mut self.rng),
        };
        self.current = Some(next);
        self.current.as_ref().unwrap()
    }
}

const ENV_STREAM: u64 = 0;
const POLICY_STREAM: u64 = 1;

pub fn policy_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(POLICY_STREAM);
    rng
}

pub struct DecisionContext<'a> {
    pub episode: usize,
    pub step: usize,
    pub bs: usize,
    pub state: &'a NetworkState,
    pub observation: f64,
    /// Strictly increasing across the run.
    pub stamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub level: u8,
    /// Chosen by ε-exploration.
    pub explored: bool,
    /// The model failed and a random level was substituted.
    pub fallback: bool,
}

impl Decision {
    fn chosen(level: u8) -> Self {
        Self { level, explored: false, fallback: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub reward: f64,
    pub constraint_ok: bool,
}

pub trait Controller {
    fn kind(&self) -> PolicyKind;
    fn decide(&mut self, ctx: &DecisionContext) -> Decision;
    fn observe(&mut self, ctx: &DecisionContext, decision: Decision, outcome: Outcome);

    fn pools(&self) -> Option<&[ExperiencePool]> {
        None
    }
}

fn random_level(rng: &mut ChaCha8Rng, num_levels: u8) -> u8 {
    rng.gen_range(1..=num_levels)
}

/// How the in-context controller fills its prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExampleSource {
    /// Exact-state selection (discrete) or ranking (continuous).
    Selected,
    /// Uniform draws from the pool, labeled good or bad by their constraint flag.
    Random,
    /// No pool at all; every prompt is zero-shot.
    None,
}

/// The in-context-learning controller and its ablations.
pub struct IclController {
    source: ExampleSource,
    case: Case,
    num_levels: u8,
    policy: PolicyConfig,
    selection: SelectionConfig,
    llm_cfg: LlmConfig,
    template: PromptTemplate,
    model: Arc<dyn ChatModel>,
    pools: Vec<ExperiencePool>,
    /// Added to loop stamps so new examples follow any preloaded ones.
    stamp_offset: u64,
    rng: ChaCha8Rng,
}

impl IclController {
    pub fn new(cfg: &LoopConfig, source: ExampleSource, model: Arc<dyn ChatModel>, rng: ChaCha8Rng) -> Self {
        Self {
            source,
            case: cfg.case,
            num_levels: cfg.network.num_levels(),
            policy: cfg.policy,
            selection: cfg.selection,
            llm_cfg: cfg.llm.clone(),
            template: cfg.template.clone(),
            model,
            pools: (0..cfg.network.num_bs).map(|_| ExperiencePool::with_capacity(cfg.pool_capacity)).collect(),
            stamp_offset: 0,
            rng,
        }
    }

    /// Replaces the pools, e.g. to resume from saved experience.
    pub fn with_pools(mut self, pools: Vec<ExperiencePool>) -> Self {
        self.stamp_offset = pools.iter().filter_map(ExperiencePool::last_stamp).max().unwrap_or(0);
        self.pools = pools;
        self
    }

    pub fn examples_for(&mut self, bs: usize, observation: f64) -> ExampleSet {
        let pool = &self.pools[bs];
        match self.source {
            ExampleSource::Selected => match self.case {
                Case::Discrete => pool.select_discrete(observation, &self.selection),
                Case::Continuous => pool.rank_continuous(observation, &self.selection),
            },
            ExampleSource::Random => {
                let want = (self.selection.k_recommended + self.selection.k_inadvisable).min(pool.len());
                let mut set = ExampleSet::default();
                for i in index::sample(&mut self.rng, pool.len(), want) {
                    let ex = pool.get(i).expect("sampled index in range").clone();
                    if ex.constraint_ok {
                        set.recommended.push(ex);
                    } else {
                        set.inadvisable.push(ex);
                    }
                }
                set
            }
            ExampleSource::None => ExampleSet::default(),
        }
    }
}

impl Controller for IclController {
    fn kind(&self) -> PolicyKind {
        match self.source {
            ExampleSource::Selected => PolicyKind::Icl,
            ExampleSource::Random => PolicyKind::IclRandomExamples,
            ExampleSource::None => PolicyKind::IclNopool,
        }
    }

    fn decide(&mut self, ctx: &DecisionContext) -> Decision {
        if self.rng.gen::<f64>() < self.policy.epsilon_at(ctx.episode) {
            return Decision { level: random_level(&mut self.rng, self.num_levels), explored: true, fallback: false };
        }
        let set = self.examples_for(ctx.bs, ctx.observation);
        let nonce = self.rng.gen::<u64>();
        ask_model(&*self.model, &self.template, &self.llm_cfg, &set, ctx, self.case, nonce)
            .unwrap_or_else(|| Decision { level: random_level(&mut self.rng, self.num_levels), explored: false, fallback: true })
    }

    fn observe(&mut self, ctx: &DecisionContext, decision: Decision, outcome: Outcome) {
        if self.source == ExampleSource::None {
            return;
        }
        let example = Example {
            state: ctx.observation,
            bs: ctx.bs,
            action: decision.level,
            reward: outcome.reward,
            constraint_ok: outcome.constraint_ok,
            step: ctx.stamp + self.stamp_offset,
        };
        self.pools[ctx.bs].append(example).expect("stamps increase across the run");
    }

    fn pools(&self) -> Option<&[ExperiencePool]> {
        (self.source != ExampleSource::None).then_some(&self.pools[..])
    }
}

/// Builds the prompt and asks for a level; `None` when the model fails.
fn ask_model(
    model: &dyn ChatModel,
    template: &PromptTemplate,
    llm_cfg: &LlmConfig,
    set: &ExampleSet,
    ctx: &DecisionContext,
    case: Case,
    nonce: u64,
) -> Option<Decision> {
    let bundle = prompting::build_prompt(template, set, ctx.observation, case, ctx.bs).ok()?;
    llm::query_action(model, &bundle, llm_cfg, nonce)
        .ok()
        .map(|(action, _)| Decision::chosen(action.level))
}

/// Prompts with only the previous outcome of the same station.
pub struct FeedbackController {
    case: Case,
    num_levels: u8,
    llm_cfg: LlmConfig,
    template: PromptTemplate,
    model: Arc<dyn ChatModel>,
    memory: FeedbackMemory,
    rng: ChaCha8Rng,
}

impl FeedbackController {
    pub fn new(cfg: &LoopConfig, model: Arc<dyn ChatModel>, rng: ChaCha8Rng) -> Self {
        Self {
            case: cfg.case,
            num_levels: cfg.network.num_levels(),
            llm_cfg: cfg.llm.clone(),
            template: cfg.template.clone(),
            model,
            memory: FeedbackMemory::new(cfg.network.num_bs),
            rng,
        }
    }

    pub fn memory(&self) -> &FeedbackMemory {
        &self.memory
    }
}

impl Controller for FeedbackController {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Feedback
    }

    fn decide(&mut self, ctx: &DecisionContext) -> Decision {
        let set = self.memory.example_set(ctx.bs);
        let nonce = self.rng.gen::<u64>();
        ask_model(&*self.model, &self.template, &self.llm_cfg, &set, ctx, self.case, nonce)
            .unwrap_or_else(|| Decision { level: random_level(&mut self.rng, self.num_levels), explored: false, fallback: true })
    }

    fn observe(&mut self, ctx: &DecisionContext, decision: Decision, outcome: Outcome) {
        self.memory.remember(Example {
            state: ctx.observation,
            bs: ctx.bs,
            action: decision.level,
            reward: outcome.reward,
            constraint_ok: outcome.constraint_ok,
            step: ctx.stamp,
        });
    }
}

pub struct RandomController {
    num_levels: u8,
    rng: ChaCha8Rng,
}

impl RandomController {
    pub fn new(num_levels: u8, rng: ChaCha8Rng) -> Self {
        Self { num_levels, rng }
    }
}

impl Controller for RandomController {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Random
    }

    fn decide(&mut self, _: &DecisionContext) -> Decision {
        Decision { level: random_level(&mut self.rng, self.num_levels), explored: true, fallback: false }
    }

    fn observe(&mut self, _: &DecisionContext, _: Decision, _: Outcome) {}
}

/// Plays the joint optimum of the current state, recomputed when the state changes.
pub struct ExhaustiveController {
    network: NetworkConfig,
    reward: RewardConfig,
    cached: Option<(NetworkState, PowerDecision)>,
}

impl ExhaustiveController {
    pub fn new(network: NetworkConfig, reward: RewardConfig) -> Self {
        Self { network, reward, cached: None }
    }
}

impl Controller for ExhaustiveController {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Exhaustive
    }

    fn decide(&mut self, ctx: &DecisionContext) -> Decision {
        let fresh = !matches!(&self.cached, Some((s, _)) if s == ctx.state);
        if fresh {
            let (best, _) = baselines::exhaustive_best(ctx.state, &self.network, &self.reward)
                .expect("environment states are valid for the configured network");
            self.cached = Some((ctx.state.clone(), best));
        }
        Decision::chosen(self.cached.as_ref().unwrap().1.level(ctx.bs))
    }

    fn observe(&mut self, _: &DecisionContext, _: Decision, _: Outcome) {}
}

pub struct QLearningController {
    learner: QLearning,
    policy: PolicyConfig,
    case: Case,
}

impl QLearningController {
    pub fn new(cfg: &LoopConfig, rng: ChaCha8Rng) -> Self {
        Self {
            learner: QLearning::new(cfg.qlearning, cfg.network.num_bs, cfg.network.num_levels(), rng),
            policy: cfg.policy,
            case: cfg.case,
        }
    }

    pub fn learner(&self) -> &QLearning {
        &self.learner
    }
}

impl Controller for QLearningController {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Qlearning
    }

    fn decide(&mut self, ctx: &DecisionContext) -> Decision {
        let s = baselines::discretize(ctx.observation, self.case);
        let decay = self.policy.epsilon_decay.powi(ctx.episode as i32);
        let (level, explored) = self.learner.act(ctx.bs, s, decay, self.policy.epsilon_floor);
        Decision { level, explored, fallback: false }
    }

    fn observe(&mut self, ctx: &DecisionContext, decision: Decision, outcome: Outcome) {
        let s = baselines::discretize(ctx.observation, self.case);
        self.learner.record(ctx.bs, s, decision.level, outcome.reward);
    }
}

/// Builds the controller for a policy with its seeded generator.
pub fn make_controller(cfg: &LoopConfig, kind: PolicyKind, seed: u64, model: Arc<dyn ChatModel>) -> Box<dyn Controller> {
    let rng = policy_rng(seed);
    match kind {
        PolicyKind::Icl => Box::new(IclController::new(cfg, ExampleSource::Selected, model, rng)),
        PolicyKind::IclRandomExamples => Box::new(IclController::new(cfg, ExampleSource::Random, model, rng)),
        PolicyKind::IclNopool => Box::new(IclController::new(cfg, ExampleSource::None, model, rng)),
        PolicyKind::Feedback => Box::new(FeedbackController::new(cfg, model, rng)),
        PolicyKind::Random => Box::new(RandomController::new(cfg.network.num_levels(), rng)),
        PolicyKind::Exhaustive => Box::new(ExhaustiveController::new(cfg.network.clone(), cfg.reward)),
        PolicyKind::Qlearning => Box::new(QLearningController::new(cfg, rng)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub step: usize,
    pub bs: usize,
    pub state: f64,
    pub action: u8,
    pub reward: f64,
    pub bs_power_w: f64,
    /// Sum over all stations at this step.
    pub total_power_w: f64,
    pub mean_rate_bps: f64,
    pub constraint_ok: bool,
    /// Every station met its rate floor at this step.
    pub all_ok: bool,
    pub policy: PolicyKind,
    pub explored: bool,
    pub fallback: bool,
}

/// Runs one episode: per step, every station decides in index order, the
/// joint decision is evaluated once, and each station is scored and learns.
pub fn run_episode(
    episode: usize,
    cfg: &LoopConfig,
    env: &mut Environment,
    controller: &mut dyn Controller,
) -> Vec<EpisodeRecord> {
    let num_bs = cfg.network.num_bs;
    let steps = cfg.policy.steps_per_episode;
    let mut records = Vec::with_capacity(steps * num_bs);
    for step in 0..steps {
        let state = env.state(step).clone();
        let stamp = (episode * steps + step) as u64 + 1;
        let contexts: Vec<DecisionContext> = (0..num_bs)
            .map(|bs| DecisionContext { episode, step, bs, state: &state, observation: state.observation(bs), stamp })
            .collect();
        let decisions: Vec<Decision> = contexts.iter().map(|ctx| controller.decide(ctx)).collect();
        let joint = PowerDecision::new(decisions.iter().map(|d| d.level).collect(), &cfg.network)
            .expect("controllers emit levels in range");
        let report = Scene::new(&state, &cfg.network)
            .expect("environment states are valid for the configured network")
            .evaluate(&joint);
        let all_ok = report.all_ok();
        for (ctx, decision) in contexts.iter().zip(&decisions) {
            let outcome = Outcome {
                reward: compute_reward(&report, ctx.bs, &cfg.reward),
                constraint_ok: report.constraint_ok[ctx.bs],
            };
            controller.observe(ctx, *decision, outcome);
            records.push(EpisodeRecord {
                episode,
                step,
                bs: ctx.bs,
                state: ctx.observation,
                action: decision.level,
                reward: outcome.reward,
                bs_power_w: report.bs_power[ctx.bs],
                total_power_w: report.total_power,
                mean_rate_bps: report.mean_rates[ctx.bs],
                constraint_ok: outcome.constraint_ok,
                all_ok,
                policy: controller.kind(),
                explored: decision.explored,
                fallback: decision.fallback,
            });
        }
    }
    records
}

pub struct RunOutput {
    pub records: Vec<EpisodeRecord>,
    pub controller: Box<dyn Controller>,
}

/// A full seeded run of `cfg.policy.episodes` episodes.
pub fn run(cfg: &LoopConfig, kind: PolicyKind, seed: u64, model: Arc<dyn ChatModel>) -> RunOutput {
    let controller = make_controller(cfg, kind, seed, model);
    run_with(cfg, controller, seed)
}

pub fn run_with(cfg: &LoopConfig, mut controller: Box<dyn Controller>, seed: u64) -> RunOutput {
    let mut env = Environment::new(cfg.network.clone(), cfg.case, seed);
    let mut records = Vec::with_capacity(cfg.policy.episodes * cfg.policy.steps_per_episode * cfg.network.num_bs);
    for episode in 0..cfg.policy.episodes {
        records.extend(run_episode(episode, cfg, &mut env, controller.as_mut()));
    }
    RunOutput { records, controller }
}
