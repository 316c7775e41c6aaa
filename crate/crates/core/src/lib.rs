//! Base-station power control with an in-context-learning decision loop.
//!
//! - [`netsim`]: channel, RB allocation, per-user rates, and evaluation of joint power decisions.
//! - [`experience`]: the example pool and example selection.
//! - [`prompting`]: task-description template, example rendering, reply parsing.
//! - [`llm`]: chat-completion backends, including a deterministic mock.
//! - [`control`]: rewards, ε-greedy controllers, and the episode loop.
//! - [`baselines`]: exhaustive search, tabular Q-learning, feedback memory.
//! - [`bench`]: scenario configs, seeded sweeps, metrics export, and run statistics.

// Validation uses `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod bench;
pub mod control;
pub mod experience;
pub mod llm;
pub mod netsim;
pub mod prompting;
