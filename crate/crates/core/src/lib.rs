//! Multi-objective reinforcement learning with Q-snapshot memory sharing.
//!
//! The crate has two tiers. The tabular tier ([`planner`]) runs exact soft
//! policy iteration over a preference grid, where each policy improvement
//! step takes the envelope of scalarized Q-values over a neighborhood of
//! preferences and a FIFO ring of Q-table snapshots. The approximate tier
//! ([`agent`]) is an off-policy actor-critic that conditions twin vector
//! critics and a squashed-Gaussian actor on the preference and replays
//! frozen critic snapshots inside the actor objective.
//!
//! Supporting modules: [`momdp`] holds the domain types (preferences,
//! vector rewards, tabular models), [`envs`] the Deep Sea Treasure
//! environments, [`neural`] a minimal MLP with analytic gradients and Adam,
//! and [`metrics`] the hypervolume / utility / episodic-dominance
//! evaluation metrics.

pub mod agent;
pub mod envs;
pub mod metrics;
pub mod momdp;
pub mod neural;
pub mod planner;
pub mod seeding;
