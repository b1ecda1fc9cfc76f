//! Off-policy actor-critic with preference-conditioned twin vector critics
//! and a Q-snapshot replay buffer.
//!
//! The critics map `(state, action, λ)` to a d-vector and are regressed on
//! the scalarized residual `(λᵀ(Q - target))²` against twin-min targets
//! from slowly tracking target networks. The actor minimizes
//! `α log π(a|s;λ) − max over candidates of λᵀ Q'(s, a; λ')` where the
//! candidate set couples every preference in the sampled neighborhood `W`
//! with every frozen critic snapshot in the ring plus the current twin-min
//! critic. With `n_lambda = 1` and the snapshot ring disabled this is
//! exactly the plain preference-conditioned soft actor-critic update.
//!
//! All randomness flows through explicit RNG streams, so a run is a pure
//! function of its configuration and master seed.

use std::collections::VecDeque;
use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::{ControlEnv, EnvError};
use crate::metrics::{self, MetricsError};
use crate::momdp::{dot_product as dot, uniform_simplex_sample, MomdpError, Preference, RewardVector};
use crate::neural::{
    adam_step, read_network_bundle, write_network_bundle, AdamState, GaussianTanhActor, Mlp,
    MlpCache, NeuralError,
};
use crate::seeding::{stream, RngState, SeedSplitter};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Momdp(#[from] MomdpError),
    #[error("non-finite {what} at gradient step {step}")]
    NonFinite { what: String, step: u64 },
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
    #[error("replay buffer holds {len} transitions, need {need} for a batch")]
    NotEnoughData { len: usize, need: usize },
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
}

/// Training hyperparameters. `Default` is the paper-scale configuration;
/// desk-scale runs shrink the network and batch through the harness config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    /// Number of reward objectives.
    pub d: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub gamma: f64,
    /// Entropy temperature (fixed; no auto-tuning).
    pub alpha: f64,
    /// Target smoothing coefficient.
    pub tau: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Size of the preference neighborhood W sampled per gradient step,
    /// including the episode's own preference.
    pub n_lambda: usize,
    /// Q-snapshot ring capacity; 0 disables the ring entirely.
    pub snapshot_capacity: usize,
    /// Gradient steps between snapshot pushes.
    pub snapshot_cadence: u64,
    pub target_update_interval: u64,
    pub gradient_steps_per_env_step: u64,
    /// Uniform-random action steps before updates begin.
    pub warmup_steps: u64,
    pub total_env_steps: u64,
    /// Environment steps between learning-curve evaluations.
    pub eval_cadence: u64,
    pub curve_episodes_per_pref: usize,
    /// Evaluate with the deterministic mean action instead of sampling.
    pub deterministic_eval: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            d: 2,
            hidden: vec![256, 256],
            learning_rate: 0.0003,
            gamma: 0.99,
            alpha: 0.2,
            tau: 0.005,
            replay_capacity: 1_000_000,
            batch_size: 256,
            n_lambda: 5,
            snapshot_capacity: 4,
            snapshot_cadence: 1000,
            target_update_interval: 1,
            gradient_steps_per_env_step: 1,
            warmup_steps: 1000,
            total_env_steps: 100_000,
            eval_cadence: 5000,
            curve_episodes_per_pref: 1,
            deterministic_eval: false,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.d == 0 {
            return Err(AgentError::InvalidConfig("d must be at least 1".into()));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(AgentError::InvalidConfig(format!("gamma {} outside [0,1)", self.gamma)));
        }
        if self.alpha <= 0.0 {
            return Err(AgentError::InvalidConfig("alpha must be positive".into()));
        }
        if self.n_lambda == 0 {
            return Err(AgentError::InvalidConfig("n_lambda must be at least 1".into()));
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return Err(AgentError::InvalidConfig("replay must hold at least one batch".into()));
        }
        Ok(())
    }
}

/// One stored environment transition. Actions are the actor's squashed
/// outputs in `(-1,1)^k`, which is what the critics condition on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: RewardVector,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity ring with uniform minibatch sampling (with replacement).
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    ring: Vec<Transition>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self { ring: Vec::new(), capacity, next: 0 }
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.ring.len() < self.capacity {
            self.ring.push(t);
        } else {
            self.ring[self.next] = t;
            self.next = (self.next + 1) % self.capacity;
        }
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.ring[i]
    }

    pub fn sample_indices(&self, rng: &mut ChaCha8Rng, k: usize) -> Vec<usize> {
        (0..k).map(|_| rng.gen_range(0..self.ring.len())).collect()
    }
}

/// A frozen critic with the preference that was being trained when it was
/// stored.
#[derive(Debug, Clone)]
pub struct QSnapshot {
    pub critic: Mlp,
    pub preference: Preference,
    pub gradient_step: u64,
}

/// FIFO ring of frozen critics. Capacity 0 keeps the ring permanently
/// empty (the no-snapshot ablation).
#[derive(Debug, Clone, Default)]
pub struct QSnapshotBuffer {
    ring: VecDeque<QSnapshot>,
    capacity: usize,
}

impl QSnapshotBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { ring: VecDeque::new(), capacity }
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &QSnapshot> {
        self.ring.iter()
    }

    fn push(&mut self, snap: QSnapshot) {
        if self.capacity == 0 {
            return;
        }
        self.ring.push_back(snap);
        while self.ring.len() > self.capacity {
            self.ring.pop_front();
        }
    }
}

/// Twin critics, their targets, the actor, and optimizer state.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub config: AgentConfig,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub target1: Mlp,
    pub target2: Mlp,
    pub actor: GaussianTanhActor,
    pub critic1_opt: AdamState,
    pub critic2_opt: AdamState,
    pub actor_opt: AdamState,
    pub gradient_step: u64,
}

impl AgentState {
    pub fn new(
        config: AgentConfig,
        obs_dim: usize,
        action_dim: usize,
        actor_rng: &mut ChaCha8Rng,
        critic_rng: &mut ChaCha8Rng,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        let mut critic_sizes = vec![obs_dim + action_dim + config.d];
        critic_sizes.extend_from_slice(&config.hidden);
        critic_sizes.push(config.d);
        let critic1 = Mlp::init(&critic_sizes, critic_rng);
        let critic2 = Mlp::init(&critic_sizes, critic_rng);
        let actor =
            GaussianTanhActor::init(obs_dim + config.d, &config.hidden, action_dim, actor_rng);
        let lr = config.learning_rate;
        Ok(Self {
            target1: critic1.clone(),
            target2: critic2.clone(),
            critic1_opt: AdamState::for_mlp(&critic1, lr),
            critic2_opt: AdamState::for_mlp(&critic2, lr),
            actor_opt: AdamState::for_mlp(&actor.trunk, lr),
            critic1,
            critic2,
            actor,
            config,
            obs_dim,
            action_dim,
            gradient_step: 0,
        })
    }

    fn critic_input(&self, state: &[f64], action: &[f64], pref: &Preference, buf: &mut Vec<f64>) {
        buf.clear();
        buf.extend_from_slice(state);
        buf.extend_from_slice(action);
        buf.extend_from_slice(pref.weights());
    }

    fn actor_input(&self, state: &[f64], pref: &Preference, buf: &mut Vec<f64>) {
        buf.clear();
        buf.extend_from_slice(state);
        buf.extend_from_slice(pref.weights());
    }

    /// Blends targets toward the critics: `target <- tau*critic + (1-tau)*target`.
    pub fn soft_update_targets(&mut self) {
        let tau = self.config.tau;
        for (t, c) in [(&mut self.target1, &self.critic1), (&mut self.target2, &self.critic2)] {
            for (tp, cp) in t.params_mut().iter_mut().zip(c.params()) {
                *tp = tau * cp + (1.0 - tau) * *tp;
            }
        }
    }

    /// Serializes the five networks in a fixed order.
    pub fn write_networks<W: Write>(&self, w: W) -> Result<(), NeuralError> {
        write_network_bundle(
            w,
            &[
                ("critic1", &self.critic1),
                ("critic2", &self.critic2),
                ("target1", &self.target1),
                ("target2", &self.target2),
                ("actor", &self.actor.trunk),
            ],
        )
    }

    /// Rebuilds an agent from a network bundle plus its configuration.
    pub fn from_networks<R: std::io::Read>(
        config: AgentConfig,
        obs_dim: usize,
        action_dim: usize,
        gradient_step: u64,
        r: R,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        let nets = read_network_bundle(r)?;
        let expect = ["critic1", "critic2", "target1", "target2", "actor"];
        if nets.len() != expect.len() {
            return Err(AgentError::CheckpointMismatch(format!(
                "expected {} networks, found {}",
                expect.len(),
                nets.len()
            )));
        }
        let mut by_name = std::collections::HashMap::new();
        for (name, net) in nets {
            by_name.insert(name, net);
        }
        let mut take = |name: &str| {
            by_name
                .remove(name)
                .ok_or_else(|| AgentError::CheckpointMismatch(format!("missing network {name}")))
        };
        let critic1 = take("critic1")?;
        let critic2 = take("critic2")?;
        let target1 = take("target1")?;
        let target2 = take("target2")?;
        let actor_trunk = take("actor")?;
        let lr = config.learning_rate;
        Ok(Self {
            critic1_opt: AdamState::for_mlp(&critic1, lr),
            critic2_opt: AdamState::for_mlp(&critic2, lr),
            actor_opt: AdamState::for_mlp(&actor_trunk, lr),
            actor: GaussianTanhActor::new(actor_trunk, action_dim),
            critic1,
            critic2,
            target1,
            target2,
            config,
            obs_dim,
            action_dim,
            gradient_step,
        })
    }
}

/// A Q-function candidate in the actor objective: either a frozen snapshot
/// or the live twin pair reduced by scalarized minimum.
#[derive(Debug, Clone, Copy)]
pub enum CandidateQ<'a> {
    Snapshot(&'a Mlp),
    TwinMin(&'a Mlp, &'a Mlp),
}

/// Per-transition d-vector regression targets
/// `r + γ (Q̄_min(s', a'; λ) − α log π(a'|s'; λ) 1_d)` with one sampled
/// `a'` per transition; terminal transitions keep the bare reward.
pub fn critic_target(
    agent: &AgentState,
    batch: &[&Transition],
    pref: &Preference,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>, AgentError> {
    let d = agent.config.d;
    let gamma = agent.config.gamma;
    let alpha = agent.config.alpha;
    let lambda = pref.weights();
    let mut targets = Vec::with_capacity(batch.len());
    let mut a_in = Vec::new();
    let mut c_in = Vec::new();
    let mut trunk_cache = MlpCache::for_net(&agent.actor.trunk);
    let mut critic_cache = MlpCache::for_net(&agent.target1);
    let mut q1 = vec![0.0; d];
    for t in batch {
        if t.done || gamma == 0.0 {
            targets.push(t.reward.values.clone());
            continue;
        }
        agent.actor_input(&t.next_state, pref, &mut a_in);
        let sample = agent.actor.sample_cached(&a_in, rng, &mut trunk_cache)?;
        agent.critic_input(&t.next_state, &sample.action, pref, &mut c_in);
        agent.target1.forward_cached(&c_in, &mut critic_cache)?;
        q1.copy_from_slice(critic_cache.output());
        agent.target2.forward_cached(&c_in, &mut critic_cache)?;
        let q2 = critic_cache.output();
        let q = if dot(lambda, &q1) <= dot(lambda, q2) { &q1[..] } else { q2 };
        let mut target = t.reward.values.clone();
        for k in 0..d {
            target[k] += gamma * (q[k] - alpha * sample.log_prob);
        }
        targets.push(target);
    }
    Ok(targets)
}

/// Mean squared scalarized residual between critic outputs and targets.
/// Factored out so tests can probe it with perturbed outputs directly.
pub fn scalarized_sq_loss(outputs: &[Vec<f64>], targets: &[Vec<f64>], lambda: &[f64]) -> f64 {
    let mut loss = 0.0;
    for (q, t) in outputs.iter().zip(targets) {
        let e = dot(lambda, q) - dot(lambda, t);
        loss += e * e;
    }
    loss / outputs.len() as f64
}

/// Critic loss for a fixed batch and targets, without touching parameters.
pub fn critic_loss_value(
    critic: &Mlp,
    agent: &AgentState,
    batch: &[&Transition],
    targets: &[Vec<f64>],
    pref: &Preference,
) -> Result<f64, AgentError> {
    let mut c_in = Vec::new();
    let mut outputs = Vec::with_capacity(batch.len());
    for t in batch {
        agent.critic_input(&t.state, &t.action, pref, &mut c_in);
        outputs.push(critic.forward(&c_in)?);
    }
    Ok(scalarized_sq_loss(&outputs, targets, pref.weights()))
}

/// Critic loss and its parameter gradient for a fixed batch and targets;
/// the update path applies exactly this gradient.
pub fn critic_loss_and_grads(
    critic: &Mlp,
    agent: &AgentState,
    batch: &[&Transition],
    targets: &[Vec<f64>],
    pref: &Preference,
) -> Result<(f64, Vec<f64>), AgentError> {
    let lambda = pref.weights();
    let b = batch.len() as f64;
    let mut grads = vec![0.0; critic.param_count()];
    let mut cache = MlpCache::for_net(critic);
    let mut c_in = Vec::new();
    let mut loss = 0.0;
    let d = agent.config.d;
    let mut upstream = vec![0.0; d];
    for (t, target) in batch.iter().zip(targets) {
        agent.critic_input(&t.state, &t.action, pref, &mut c_in);
        critic.forward_cached(&c_in, &mut cache)?;
        let e = dot(lambda, cache.output()) - dot(lambda, target);
        loss += e * e;
        let scale = 2.0 * e / b;
        for k in 0..d {
            upstream[k] = scale * lambda[k];
        }
        critic.backward(&cache, &upstream, &mut grads, None)?;
    }
    Ok((loss / b, grads))
}

/// Pre-step losses of the two critic twins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticLosses {
    pub twin1: f64,
    pub twin2: f64,
}

impl CriticLosses {
    pub fn mean(&self) -> f64 {
        0.5 * (self.twin1 + self.twin2)
    }
}

/// Computes shared targets, regresses both twins on them, and applies one
/// Adam step per twin. Returns the pre-step losses.
pub fn critic_update(
    agent: &mut AgentState,
    batch: &[&Transition],
    pref: &Preference,
    rng: &mut ChaCha8Rng,
) -> Result<CriticLosses, AgentError> {
    if batch.is_empty() {
        return Err(AgentError::NotEnoughData { len: 0, need: 1 });
    }
    let targets = critic_target(agent, batch, pref, rng)?;
    let (l1, g1) = critic_loss_and_grads(&agent.critic1, agent, batch, &targets, pref)?;
    let (l2, g2) = critic_loss_and_grads(&agent.critic2, agent, batch, &targets, pref)?;
    if !l1.is_finite() || !l2.is_finite() {
        return Err(AgentError::NonFinite {
            what: format!("critic loss ({l1}, {l2})"),
            step: agent.gradient_step,
        });
    }
    adam_step(&mut agent.critic1_opt, agent.critic1.params_mut(), &g1)?;
    adam_step(&mut agent.critic2_opt, agent.critic2.params_mut(), &g2)?;
    Ok(CriticLosses { twin1: l1, twin2: l2 })
}

fn candidate_value(
    candidate: &CandidateQ<'_>,
    input: &[f64],
    lambda: &[f64],
    cache: &mut MlpCache,
) -> Result<f64, NeuralError> {
    match candidate {
        CandidateQ::Snapshot(net) => {
            net.forward_cached(input, cache)?;
            Ok(dot(lambda, cache.output()))
        }
        CandidateQ::TwinMin(a, b) => {
            a.forward_cached(input, cache)?;
            let va = dot(lambda, cache.output());
            b.forward_cached(input, cache)?;
            let vb = dot(lambda, cache.output());
            Ok(va.min(vb))
        }
    }
}

/// Actor objective value for a fixed batch, candidate set, and noise draws:
/// `mean_j [ α log π(a_j|s_j;λ) − max_{λ' ∈ W, Q'} λᵀ Q'(s_j, a_j; λ') ]`.
///
/// Pure in all arguments; the gradient path and the finite-difference
/// oracle both evaluate exactly this.
#[allow(clippy::too_many_arguments)]
pub fn actor_loss(
    actor: &GaussianTanhActor,
    agent: &AgentState,
    states: &[&[f64]],
    pref: &Preference,
    w_prefs: &[Preference],
    candidates: &[CandidateQ<'_>],
    noises: &[Vec<f64>],
    alpha: f64,
) -> Result<f64, AgentError> {
    let lambda = pref.weights();
    let mut a_in = Vec::new();
    let mut c_in = Vec::new();
    let mut trunk_cache = MlpCache::for_net(&actor.trunk);
    let mut scratch = MlpCache::default();
    let mut total = 0.0;
    for (s, noise) in states.iter().zip(noises) {
        agent.actor_input(s, pref, &mut a_in);
        let sample = actor.sample_with_noise_cached(&a_in, noise, &mut trunk_cache)?;
        let mut best = f64::NEG_INFINITY;
        for candidate in candidates {
            for w in w_prefs {
                agent.critic_input(s, &sample.action, w, &mut c_in);
                best = best.max(candidate_value(candidate, &c_in, lambda, &mut scratch)?);
            }
        }
        total += alpha * sample.log_prob - best;
    }
    Ok(total / states.len() as f64)
}

/// Actor loss plus the gradient with respect to the actor trunk. Gradients
/// flow through the reparameterized action into the trunk only; candidate
/// critics are frozen. At a per-sample argmax tie the first maximizer in
/// (candidate order, neighborhood order) provides the subgradient.
#[allow(clippy::too_many_arguments)]
pub fn actor_loss_and_grads(
    actor: &GaussianTanhActor,
    agent: &AgentState,
    states: &[&[f64]],
    pref: &Preference,
    w_prefs: &[Preference],
    candidates: &[CandidateQ<'_>],
    noises: &[Vec<f64>],
    alpha: f64,
) -> Result<(f64, Vec<f64>), AgentError> {
    let lambda = pref.weights();
    let k = actor.action_dim;
    let b = states.len() as f64;
    let obs = agent.obs_dim;
    let mut grads = vec![0.0; actor.trunk.param_count()];
    let mut trunk_cache = MlpCache::for_net(&actor.trunk);
    let mut scratch = MlpCache::default();
    let mut c_cache = MlpCache::default();
    let mut a_in = Vec::new();
    let mut c_in = Vec::new();
    let mut in_grad: Vec<f64> = Vec::new();
    let mut total = 0.0;
    for (s, noise) in states.iter().zip(noises) {
        agent.actor_input(s, pref, &mut a_in);
        let sample = actor.sample_with_noise_cached(&a_in, noise, &mut trunk_cache)?;

        // Envelope over candidates, tracking the argmax and (inside the
        // twin pair) the argmin twin for the gradient path.
        let mut best = f64::NEG_INFINITY;
        let mut best_net: Option<&Mlp> = None;
        let mut best_w: Option<&Preference> = None;
        for candidate in candidates {
            for w in w_prefs {
                agent.critic_input(s, &sample.action, w, &mut c_in);
                let (v, net) = match candidate {
                    CandidateQ::Snapshot(net) => {
                        net.forward_cached(&c_in, &mut scratch)?;
                        (dot(lambda, scratch.output()), *net)
                    }
                    CandidateQ::TwinMin(n1, n2) => {
                        n1.forward_cached(&c_in, &mut scratch)?;
                        let v1 = dot(lambda, scratch.output());
                        n2.forward_cached(&c_in, &mut scratch)?;
                        let v2 = dot(lambda, scratch.output());
                        if v1 <= v2 {
                            (v1, *n1)
                        } else {
                            (v2, *n2)
                        }
                    }
                };
                if v > best {
                    best = v;
                    best_net = Some(net);
                    best_w = Some(w);
                }
            }
        }
        total += alpha * sample.log_prob - best;

        // dV/da of the argmax candidate at the sampled action.
        let best_net = best_net.expect("candidate set is non-empty");
        let best_w = best_w.expect("candidate set is non-empty");
        agent.critic_input(s, &sample.action, best_w, &mut c_in);
        best_net.forward_cached(&c_in, &mut c_cache)?;
        in_grad.clear();
        in_grad.resize(c_in.len(), 0.0);
        best_net.backward_input(&c_cache, lambda, &mut in_grad)?;
        let dv_da = &in_grad[obs..obs + k];

        // Chain through a = tanh(u), u = mean + exp(log_std) * noise into
        // the trunk head [mean; raw log_std]; the clamp gates the log-std
        // path, which also carries the explicit -log_std density term.
        let mut upstream = vec![0.0; 2 * k];
        for j in 0..k {
            let tanh_u = sample.action[j];
            let sech2 = 1.0 - tanh_u * tanh_u;
            let dlogp_du = 2.0 * tanh_u;
            let dloss_du = (alpha * dlogp_du - dv_da[j] * sech2) / b;
            upstream[j] = dloss_du;
            if sample.std_grad_gate[j] {
                let du_ds = sample.log_std[j].exp() * noise[j];
                upstream[k + j] = dloss_du * du_ds - alpha / b;
            }
        }
        actor.trunk.backward(&trunk_cache, &upstream, &mut grads, None)?;
    }
    Ok((total / b, grads))
}

/// One actor update: reparameterized samples, envelope over
/// `snapshots ∪ {current twin-min critic}` crossed with `w_prefs`, one Adam
/// step on the trunk. Returns the pre-step loss.
pub fn actor_update(
    agent: &mut AgentState,
    batch: &[&Transition],
    pref: &Preference,
    w_prefs: &[Preference],
    snapshots: &QSnapshotBuffer,
    rng: &mut ChaCha8Rng,
) -> Result<f64, AgentError> {
    if batch.is_empty() {
        return Err(AgentError::NotEnoughData { len: 0, need: 1 });
    }
    debug_assert!(
        w_prefs.iter().any(|w| w.weights() == pref.weights()),
        "the neighborhood must contain the preference itself"
    );
    let k = agent.action_dim;
    let noises: Vec<Vec<f64>> = batch
        .iter()
        .map(|_| (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
    let critic1 = agent.critic1.clone();
    let critic2 = agent.critic2.clone();
    let mut candidates: Vec<CandidateQ<'_>> =
        snapshots.iter().map(|s| CandidateQ::Snapshot(&s.critic)).collect();
    candidates.push(CandidateQ::TwinMin(&critic1, &critic2));
    let (loss, grads) = actor_loss_and_grads(
        &agent.actor,
        agent,
        &states,
        pref,
        w_prefs,
        &candidates,
        &noises,
        agent.config.alpha,
    )?;
    if !loss.is_finite() {
        return Err(AgentError::NonFinite {
            what: format!("actor loss {loss}"),
            step: agent.gradient_step,
        });
    }
    adam_step(&mut agent.actor_opt, agent.actor.trunk.params_mut(), &grads)?;
    Ok(loss)
}

/// Deep-copies the first critic and the current sampling preference into
/// the ring, evicting the oldest snapshot beyond capacity.
pub fn snapshot_push(agent: &AgentState, snapshots: &mut QSnapshotBuffer, pref: &Preference) {
    snapshots.push(QSnapshot {
        critic: agent.critic1.clone(),
        preference: pref.clone(),
        gradient_step: agent.gradient_step,
    });
}

/// One learning-curve row: evaluation of one preference at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub env_step: u64,
    pub preference: Preference,
    pub scalarized_return: f64,
    pub critic_loss: f64,
    pub actor_loss: f64,
}

/// CSV with columns `env_step,pref_0..,scalarized_return,critic_loss,actor_loss`.
pub fn write_curve_csv<W: Write>(
    records: &[CurveRecord],
    d: usize,
    mut w: W,
) -> std::io::Result<()> {
    let prefs: Vec<String> = (0..d).map(|i| format!("pref_{i}")).collect();
    writeln!(w, "env_step,{},scalarized_return,critic_loss,actor_loss", prefs.join(","))?;
    for r in records {
        let pref: Vec<String> = r.preference.weights().iter().map(|x| x.to_string()).collect();
        writeln!(
            w,
            "{},{},{},{},{}",
            r.env_step,
            pref.join(","),
            r.scalarized_return,
            r.critic_loss,
            r.actor_loss
        )?;
    }
    Ok(())
}

/// Everything a finished training run hands back.
#[derive(Debug)]
pub struct TrainOutput {
    pub agent: AgentState,
    pub snapshots: QSnapshotBuffer,
    pub curve: Vec<CurveRecord>,
    pub env_steps: u64,
    /// Final positions of the named RNG streams, for checkpoint manifests.
    pub rng_states: Vec<(String, RngState)>,
}

/// Undiscounted return of the current policy on one preference, averaged
/// over `episodes` rollouts.
pub fn evaluate_policy<E: ControlEnv>(
    env: &E,
    agent: &AgentState,
    pref: &Preference,
    episodes: usize,
    deterministic: bool,
    rng: &mut ChaCha8Rng,
) -> Result<RewardVector, AgentError> {
    let d = agent.config.d;
    let mut total = vec![0.0; d];
    for _ in 0..episodes {
        let mut a_in = Vec::new();
        let actor = &agent.actor;
        let mut policy = |s: &E::State, p: &Preference, rng: &mut ChaCha8Rng| {
            a_in.clear();
            a_in.extend_from_slice(&env.encode_state(s));
            a_in.extend_from_slice(p.weights());
            let squashed = if deterministic {
                actor.mean_action(&a_in).expect("actor forward")
            } else {
                actor.sample(&a_in, rng).expect("actor forward").action
            };
            env.action_from_squashed(&squashed)
        };
        let traj = crate::envs::rollout(env, &mut policy, pref, agent.config.gamma, rng)?;
        let ret = traj.undiscounted_return(d);
        for (acc, v) in total.iter_mut().zip(&ret.values) {
            *acc += v;
        }
    }
    Ok(RewardVector::new(total.into_iter().map(|x| x / episodes as f64).collect()))
}

/// Full training loop over one environment.
///
/// Per outer iteration a preference is drawn, one episode is collected
/// under it, and one gradient phase runs per environment step: sample the
/// neighborhood `W`, update the critics, update the actor against the
/// snapshot envelope, soft-update targets, and push a snapshot every
/// `snapshot_cadence` gradient steps. Learning-curve evaluations fire every
/// `eval_cadence` environment steps; `on_eval` sees each fresh batch of
/// records together with the current agent (the harness checkpoint hook).
pub fn train<E, F>(
    env: &E,
    config: &AgentConfig,
    splitter: SeedSplitter,
    mut on_eval: F,
) -> Result<TrainOutput, AgentError>
where
    E: ControlEnv,
    F: FnMut(&AgentState, &[CurveRecord]) -> Result<(), AgentError>,
{
    config.validate()?;
    if config.d != env.spec().d {
        return Err(AgentError::InvalidConfig(format!(
            "config d = {} but environment has {} objectives",
            config.d,
            env.spec().d
        )));
    }
    let mut actor_rng = splitter.stream(stream::ACTOR_INIT);
    let mut critic_rng = splitter.stream(stream::CRITIC_INIT);
    let mut env_rng = splitter.stream(stream::ENV);
    let mut pref_rng = splitter.stream(stream::PREFERENCE);
    let mut replay_rng = splitter.stream(stream::REPLAY);
    let mut warmup_rng = splitter.stream(stream::WARMUP);
    let mut noise_rng = splitter.stream(stream::NOISE);
    let mut neighborhood_rng = splitter.stream(stream::NEIGHBORHOOD);

    let mut agent = AgentState::new(
        config.clone(),
        env.obs_dim(),
        env.action_dim(),
        &mut actor_rng,
        &mut critic_rng,
    )?;
    let mut replay = ReplayBuffer::new(config.replay_capacity);
    let mut snapshots = QSnapshotBuffer::new(config.snapshot_capacity);
    let eval_prefs = metrics::default_preference_set(config.d);

    let mut curve: Vec<CurveRecord> = Vec::new();
    let mut env_step: u64 = 0;
    let mut eval_index: u64 = 0;
    let mut closs_sum = 0.0;
    let mut aloss_sum = 0.0;
    let mut loss_count = 0u64;
    let mut a_in = Vec::new();

    'outer: while env_step < config.total_env_steps {
        let lambda = uniform_simplex_sample(&mut pref_rng, config.d);
        let mut state = env.reset(&mut env_rng);
        for _ in 0..env.spec().max_episode_steps {
            let squashed: Vec<f64> = if env_step < config.warmup_steps {
                (0..env.action_dim()).map(|_| warmup_rng.gen_range(-1.0..1.0)).collect()
            } else {
                agent.actor_input(&env.encode_state(&state), &lambda, &mut a_in);
                agent.actor.sample(&a_in, &mut noise_rng)?.action
            };
            let action = env.action_from_squashed(&squashed);
            let step = env.step(&state, &action)?;
            replay.push(Transition {
                state: env.encode_state(&state),
                action: squashed,
                reward: step.reward.clone(),
                next_state: env.encode_state(&step.next_state),
                done: step.done,
            });
            env_step += 1;

            if env_step >= config.warmup_steps && replay.len() >= config.batch_size {
                for _ in 0..config.gradient_steps_per_env_step {
                    agent.gradient_step += 1;
                    let mut w_prefs = Vec::with_capacity(config.n_lambda);
                    w_prefs.push(lambda.clone());
                    for _ in 1..config.n_lambda {
                        w_prefs.push(uniform_simplex_sample(&mut neighborhood_rng, config.d));
                    }
                    let idx = replay.sample_indices(&mut replay_rng, config.batch_size);
                    let batch: Vec<&Transition> = idx.iter().map(|&i| replay.get(i)).collect();
                    let closs = critic_update(&mut agent, &batch, &lambda, &mut noise_rng)?;
                    let aloss = actor_update(
                        &mut agent,
                        &batch,
                        &lambda,
                        &w_prefs,
                        &snapshots,
                        &mut noise_rng,
                    )?;
                    if agent.gradient_step % config.target_update_interval == 0 {
                        agent.soft_update_targets();
                    }
                    if config.snapshot_cadence > 0
                        && agent.gradient_step % config.snapshot_cadence == 0
                    {
                        snapshot_push(&agent, &mut snapshots, &lambda);
                    }
                    closs_sum += closs.mean();
                    aloss_sum += aloss;
                    loss_count += 1;
                }
            }

            if env_step % config.eval_cadence == 0 {
                let mut eval_rng = splitter.substream(stream::EVAL, eval_index);
                eval_index += 1;
                let critic_loss = if loss_count > 0 { closs_sum / loss_count as f64 } else { 0.0 };
                let actor_loss = if loss_count > 0 { aloss_sum / loss_count as f64 } else { 0.0 };
                closs_sum = 0.0;
                aloss_sum = 0.0;
                loss_count = 0;
                let mut fresh = Vec::with_capacity(eval_prefs.len());
                for pref in &eval_prefs {
                    let ret = evaluate_policy(
                        env,
                        &agent,
                        pref,
                        config.curve_episodes_per_pref,
                        config.deterministic_eval,
                        &mut eval_rng,
                    )?;
                    fresh.push(CurveRecord {
                        env_step,
                        preference: pref.clone(),
                        scalarized_return: crate::momdp::scalarize(pref, &ret)?,
                        critic_loss,
                        actor_loss,
                    });
                }
                on_eval(&agent, &fresh)?;
                curve.extend(fresh);
            }

            if env_step >= config.total_env_steps {
                break 'outer;
            }
            if step.done {
                break;
            }
            state = step.next_state;
        }
    }
    let rng_states = vec![
        ("env".to_string(), RngState::capture(&env_rng)),
        ("preference".to_string(), RngState::capture(&pref_rng)),
        ("replay".to_string(), RngState::capture(&replay_rng)),
        ("warmup".to_string(), RngState::capture(&warmup_rng)),
        ("noise".to_string(), RngState::capture(&noise_rng)),
        ("neighborhood".to_string(), RngState::capture(&neighborhood_rng)),
    ];
    Ok(TrainOutput { agent, snapshots, curve, env_steps: env_step, rng_states })
}
