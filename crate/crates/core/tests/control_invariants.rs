//! Closed-loop invariants of the controllers and the episode runner.

use std::sync::{Arc, Mutex};

use icl_power::bench::{chi_square_uniform, mann_kendall};
use icl_power::control::{
    self, policy_rng, Controller, DecisionContext, Environment, ExampleSource, FeedbackController, IclController,
    LoopConfig, PolicyKind,
};
use icl_power::experience::{Example, ExperiencePool};
use icl_power::llm::{ChatModel, CompletionResult, LlmError, MockLlm};
use icl_power::netsim::{Case, NetworkState};
use icl_power::prompting::parse_example_line;

fn small(case: Case, episodes: usize, steps: usize) -> LoopConfig {
    let mut cfg = LoopConfig::new(case);
    cfg.policy.episodes = episodes;
    cfg.policy.steps_per_episode = steps;
    cfg
}

fn one_state(cfg: &LoopConfig) -> NetworkState {
    Environment::new(cfg.network.clone(), cfg.case, 0).state(0).clone()
}

fn ctx(state: &NetworkState, episode: usize, stamp: u64) -> DecisionContext<'_> {
    DecisionContext { episode, step: 0, bs: 0, state, observation: state.observation(0), stamp }
}

#[test]
fn full_exploration_is_uniform_over_levels() {
    let mut cfg = small(Case::Discrete, 1, 1);
    cfg.policy.epsilon = 1.0;
    cfg.policy.epsilon_decay = 1.0;
    cfg.policy.epsilon_floor = 1.0;
    let state = one_state(&cfg);
    let mut icl = IclController::new(&cfg, ExampleSource::Selected, Arc::new(MockLlm::new(0)), policy_rng(7));
    let mut counts = [0usize; 4];
    for i in 0..10_000 {
        let d = icl.decide(&ctx(&state, 0, i + 1));
        assert!(d.explored);
        counts[d.level as usize - 1] += 1;
    }
    let (stat, p) = chi_square_uniform(&counts);
    assert!(p > 0.01, "chi-square {stat:.2}, p {p:.4}, counts {counts:?}");
}

#[test]
fn exploration_rate_matches_epsilon() {
    for epsilon in [0.1, 0.3, 0.6] {
        let mut cfg = small(Case::Continuous, 1, 1);
        cfg.policy.epsilon = epsilon;
        cfg.policy.epsilon_decay = 1.0;
        let state = one_state(&cfg);
        let mut icl = IclController::new(&cfg, ExampleSource::None, Arc::new(MockLlm::new(0)), policy_rng(11));
        let n = 10_000;
        let explored = (0..n).filter(|&i| icl.decide(&ctx(&state, 0, i + 1)).explored).count();
        let rate = explored as f64 / n as f64;
        assert!((rate - epsilon).abs() <= 0.02, "epsilon {epsilon}: explored {rate}");
    }
}

#[test]
fn pools_grow_by_one_per_step_up_to_capacity() {
    for (capacity, episodes, steps) in [(Some(10_000), 3, 7), (Some(15), 3, 7), (None, 2, 5)] {
        let mut cfg = small(Case::Continuous, episodes, steps);
        cfg.pool_capacity = capacity;
        let out = control::run(&cfg, PolicyKind::Icl, 3, Arc::new(MockLlm::new(3)));
        let pools = out.controller.pools().unwrap();
        let want = capacity.unwrap_or(usize::MAX).min(episodes * steps);
        assert!(pools.iter().all(|p| p.len() == want), "capacity {capacity:?}");
        assert_eq!(out.records.len(), episodes * steps * cfg.network.num_bs);
    }
}

#[test]
fn nopool_keeps_no_experience() {
    let out = control::run(&small(Case::Discrete, 2, 5), PolicyKind::IclNopool, 1, Arc::new(MockLlm::new(1)));
    assert!(out.controller.pools().is_none());
}

#[test]
fn rewards_stay_within_bounds() {
    let cfg = small(Case::Continuous, 10, 20);
    let p_min = cfg.network.power_levels_w[0];
    let p_max = *cfg.network.power_levels_w.last().unwrap();
    let (lo, hi) = (cfg.reward.target_power_w - p_max - cfg.reward.penalty, cfg.reward.target_power_w - p_min);
    for kind in [PolicyKind::Random, PolicyKind::Icl] {
        for r in control::run(&cfg, kind, 2, Arc::new(MockLlm::new(2))).records {
            assert!((lo..=hi).contains(&r.reward), "{kind}: {}", r.reward);
            let expected = cfg.reward.target_power_w - r.bs_power_w - if r.constraint_ok { 0.0 } else { cfg.reward.penalty };
            assert!((r.reward - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn greedy_loop_with_a_dominant_example_is_a_fixed_point() {
    let mut cfg = small(Case::Discrete, 5, 10);
    cfg.policy.epsilon = 0.0;
    cfg.policy.epsilon_floor = 0.0;
    let pools = (0..cfg.network.num_bs)
        .map(|bs| {
            let mut pool = ExperiencePool::with_capacity(cfg.pool_capacity);
            for users in cfg.network.min_users..=cfg.network.max_users {
                let ex = Example { state: users as f64, bs, action: 2, reward: 0.99, constraint_ok: true, step: users as u64 };
                pool.append(ex).unwrap();
            }
            pool
        })
        .collect();
    let icl = IclController::new(&cfg, ExampleSource::Selected, Arc::new(MockLlm::new(5)), policy_rng(5)).with_pools(pools);
    let out = control::run_with(&cfg, Box::new(icl), 5);
    let pools = out.controller.pools().unwrap();
    assert!(pools.iter().all(|p| p.len() == 11 + 50 && p.last_stamp() == Some(15 + 50)));
    assert!(out.records.iter().all(|r| r.action == 2 && !r.explored && !r.fallback));
}

/// Passes through to the mock and keeps every prompt it sees.
struct Spy {
    inner: MockLlm,
    prompts: Mutex<Vec<String>>,
}

impl ChatModel for Spy {
    fn complete(&self, prompt: &str, nonce: u64) -> Result<CompletionResult, LlmError> {
        self.prompts.lock().unwrap().push(prompt.to_string());
        self.inner.complete(prompt, nonce)
    }

    fn name(&self) -> &str {
        "spy"
    }
}

#[test]
fn feedback_prompts_carry_only_the_last_outcome() {
    let cfg = small(Case::Discrete, 2, 4);
    let spy = Arc::new(Spy { inner: MockLlm::new(0), prompts: Mutex::new(Vec::new()) });
    let fb = FeedbackController::new(&cfg, spy.clone(), policy_rng(0));
    let out = control::run_with(&cfg, Box::new(fb), 0);
    let prompts = spy.prompts.lock().unwrap();
    assert_eq!(prompts.len(), out.records.len());
    let num_bs = cfg.network.num_bs;
    for (i, prompt) in prompts.iter().enumerate() {
        let examples = prompt.lines().filter(|l| parse_example_line(l).is_ok()).count();
        assert_eq!(examples, usize::from(i >= num_bs), "prompt {i}");
    }
}

#[test]
fn icl_episode_means_trend_upward() {
    let cfg = small(Case::Discrete, 60, 20);
    let seeds = 30;
    let mut means = vec![0.0; cfg.policy.episodes];
    for seed in 0..seeds {
        for r in control::run(&cfg, PolicyKind::Icl, seed, Arc::new(MockLlm::new(seed))).records {
            means[r.episode] += r.reward;
        }
    }
    let per_episode = (seeds as usize * cfg.policy.steps_per_episode * cfg.network.num_bs) as f64;
    means.iter_mut().for_each(|m| *m /= per_episode);
    let trend = mann_kendall(&means);
    assert!(trend.p_increasing < 0.05, "S {}, z {:.2}, p {:.4}", trend.s, trend.z, trend.p_increasing);
}
