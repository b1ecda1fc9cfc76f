//! Environment contract and the two Deep Sea Treasure environments.
//!
//! Both environments are value types with pure `step` functions: a rollout
//! owns its RNG and environment reference, so parallel rollouts need no
//! coordination. Rewards are two-objective throughout: component 0 is the
//! treasure value collected on capture, component 1 is a constant -1 time
//! penalty per action.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::momdp::{MomdpError, Preference, RewardVector};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid state index {index} for {n_states} states")]
    InvalidStateIndex { index: usize, n_states: usize },
    #[error("state {index} is not reachable water (seabed or terminal)")]
    UnreachableState { index: usize },
    #[error("invalid action index {index} for {n_actions} actions")]
    InvalidActionIndex { index: usize, n_actions: usize },
    #[error("action has wrong dimension: expected {expected}, got {got}")]
    ActionDimension { expected: usize, got: usize },
    #[error("position outside the environment box: ({0}, {1})")]
    PositionOutOfBounds(f64, f64),
    #[error("rollout discount must lie in (0,1), got {0}")]
    InvalidGamma(f64),
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error(transparent)]
    Momdp(#[from] MomdpError),
}

/// Observation-space description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsSpace {
    Discrete { n_states: usize },
    Continuous { dim: usize },
}

/// Action-space description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActSpace {
    Discrete { n_actions: usize },
    /// Continuous displacement vector; anything with a larger Euclidean
    /// norm is rescaled onto the ball of radius `max_norm`.
    Ball { dim: usize, max_norm: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub observation: ObsSpace,
    pub action: ActSpace,
    /// Number of reward objectives.
    pub d: usize,
    pub max_episode_steps: usize,
}

/// Outcome of one transition; `executed` is the action as actually applied
/// (e.g. after rescaling an over-long displacement).
#[derive(Debug, Clone)]
pub struct Step<S, A> {
    pub next_state: S,
    pub reward: RewardVector,
    pub done: bool,
    pub executed: A,
}

/// A multi-objective environment with a pure transition function.
pub trait Environment {
    type State: Clone + std::fmt::Debug + PartialEq;
    type Action: Clone + std::fmt::Debug;

    fn spec(&self) -> &EnvSpec;
    /// Start state. The RNG is reserved for environments with stochastic
    /// starts; both treasure environments start deterministically.
    fn reset<R: Rng>(&self, rng: &mut R) -> Self::State;
    fn step(
        &self,
        state: &Self::State,
        action: &Self::Action,
    ) -> Result<Step<Self::State, Self::Action>, EnvError>;
    /// Numeric encoding of a state for CSV export and feature vectors.
    fn encode_state(&self, state: &Self::State) -> Vec<f64>;
    fn encode_action(&self, action: &Self::Action) -> Vec<f64>;
}

/// Extra surface needed by the actor-critic agent: feature vectors and a
/// mapping from the actor's squashed `(-1,1)^k` output to an env action.
pub trait ControlEnv: Environment {
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn action_from_squashed(&self, squashed: &[f64]) -> Self::Action;
}

/// Treasure layout shared by both environments. The conventional layout is
/// [`DstMap::classic`]; alternative maps can be loaded from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DstMap {
    pub rows: usize,
    pub cols: usize,
    /// Row of the treasure in each column; cells below it are seabed.
    pub depths: Vec<usize>,
    pub values: Vec<f64>,
}

impl DstMap {
    /// The conventional 10-treasure map on an 11x10 grid.
    pub fn classic() -> Self {
        Self {
            rows: 11,
            cols: 10,
            depths: vec![1, 2, 3, 4, 4, 4, 7, 7, 9, 10],
            values: vec![0.7, 8.2, 11.5, 14.0, 15.1, 16.1, 19.6, 20.3, 22.4, 23.7],
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.depths.len() != self.cols || self.values.len() != self.cols {
            return Err(EnvError::InvalidMap("depths/values must have one entry per column".into()));
        }
        if self.depths.iter().any(|&d| d == 0 || d >= self.rows) {
            return Err(EnvError::InvalidMap("treasure depths must lie inside the grid".into()));
        }
        // Pareto structure: value and cost (shortest path length from the
        // start) must both be strictly increasing across columns.
        for c in 1..self.cols {
            if self.values[c] <= self.values[c - 1] {
                return Err(EnvError::InvalidMap(format!(
                    "treasure values must strictly increase (column {c})"
                )));
            }
            if self.depths[c] + c <= self.depths[c - 1] + (c - 1) {
                return Err(EnvError::InvalidMap(format!(
                    "treasure step costs must strictly increase (column {c})"
                )));
            }
        }
        Ok(())
    }
}

/// Cell classification on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Water,
    Treasure,
    Seabed,
}

/// Grid-world Deep Sea Treasure. States are row-major cell indices, the
/// start is the top-left surface cell, and the four actions move one cell
/// up/down/left/right with walls (grid edge or seabed) clipping movement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabularDST {
    pub map: DstMap,
    spec: EnvSpec,
}

/// Action indices for [`TabularDST`].
pub const DST_UP: usize = 0;
pub const DST_DOWN: usize = 1;
pub const DST_LEFT: usize = 2;
pub const DST_RIGHT: usize = 3;

impl TabularDST {
    pub fn new(map: DstMap, max_episode_steps: usize) -> Result<Self, EnvError> {
        map.validate()?;
        let spec = EnvSpec {
            observation: ObsSpace::Discrete { n_states: map.rows * map.cols },
            action: ActSpace::Discrete { n_actions: 4 },
            d: 2,
            max_episode_steps,
        };
        Ok(Self { map, spec })
    }

    pub fn classic() -> Self {
        Self::new(DstMap::classic(), 1000).expect("classic map is valid")
    }

    pub fn n_states(&self) -> usize {
        self.map.rows * self.map.cols
    }

    pub fn cell(&self, row: usize, col: usize) -> Cell {
        match row.cmp(&self.map.depths[col]) {
            std::cmp::Ordering::Less => Cell::Water,
            std::cmp::Ordering::Equal => Cell::Treasure,
            std::cmp::Ordering::Greater => Cell::Seabed,
        }
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.map.cols + col
    }

    pub fn coords(&self, state: usize) -> (usize, usize) {
        (state / self.map.cols, state % self.map.cols)
    }
}

impl Environment for TabularDST {
    type State = usize;
    type Action = usize;

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset<R: Rng>(&self, _rng: &mut R) -> usize {
        self.index(0, 0)
    }

    fn step(&self, state: &usize, action: &usize) -> Result<Step<usize, usize>, EnvError> {
        let s = *state;
        if s >= self.n_states() {
            return Err(EnvError::InvalidStateIndex { index: s, n_states: self.n_states() });
        }
        let (row, col) = self.coords(s);
        if self.cell(row, col) != Cell::Water {
            return Err(EnvError::UnreachableState { index: s });
        }
        if *action >= 4 {
            return Err(EnvError::InvalidActionIndex { index: *action, n_actions: 4 });
        }
        let (mut nr, mut nc) = (row as isize, col as isize);
        match *action {
            DST_UP => nr -= 1,
            DST_DOWN => nr += 1,
            DST_LEFT => nc -= 1,
            _ => nc += 1,
        }
        let blocked = nr < 0
            || nc < 0
            || nr >= self.map.rows as isize
            || nc >= self.map.cols as isize
            || self.cell(nr as usize, nc as usize) == Cell::Seabed;
        if blocked {
            return Ok(Step {
                next_state: s,
                reward: RewardVector::new(vec![0.0, -1.0]),
                done: false,
                executed: *action,
            });
        }
        let (nr, nc) = (nr as usize, nc as usize);
        let next = self.index(nr, nc);
        if self.cell(nr, nc) == Cell::Treasure {
            Ok(Step {
                next_state: next,
                reward: RewardVector::new(vec![self.map.values[nc], -1.0]),
                done: true,
                executed: *action,
            })
        } else {
            Ok(Step {
                next_state: next,
                reward: RewardVector::new(vec![0.0, -1.0]),
                done: false,
                executed: *action,
            })
        }
    }

    fn encode_state(&self, state: &usize) -> Vec<f64> {
        let (r, c) = self.coords(*state);
        vec![r as f64, c as f64]
    }

    fn encode_action(&self, action: &usize) -> Vec<f64> {
        vec![*action as f64]
    }
}

/// Geometry and episode parameters of [`ContinuousDST`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousDstConfig {
    pub map: DstMap,
    pub capture_radius: f64,
    pub max_episode_steps: usize,
}

impl Default for ContinuousDstConfig {
    fn default() -> Self {
        Self { map: DstMap::classic(), capture_radius: 0.4, max_episode_steps: 100 }
    }
}

/// Continuous-motion Deep Sea Treasure: the agent moves freely inside the
/// grid's bounding box by a displacement of norm at most 1 per step, and an
/// episode ends when the position lands inside a treasure circle centered
/// on a treasure cell.
///
/// Coordinates are `(x, y)` with `x` along the columns in `[0, cols]` and
/// `y` the depth in `[0, rows]`; the start is the surface corner `(0, 0)`
/// and the treasure of column `c` sits at `(c + 0.5, depth_c + 0.5)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuousDST {
    pub config: ContinuousDstConfig,
    spec: EnvSpec,
}

impl ContinuousDST {
    pub fn new(config: ContinuousDstConfig) -> Result<Self, EnvError> {
        config.map.validate()?;
        if !(config.capture_radius > 0.0) || config.capture_radius >= 0.5 {
            return Err(EnvError::InvalidMap(
                "capture radius must lie in (0, 0.5) so circles stay disjoint".into(),
            ));
        }
        let spec = EnvSpec {
            observation: ObsSpace::Continuous { dim: 2 },
            action: ActSpace::Ball { dim: 2, max_norm: 1.0 },
            d: 2,
            max_episode_steps: config.max_episode_steps,
        };
        Ok(Self { config, spec })
    }

    pub fn classic() -> Self {
        Self::new(ContinuousDstConfig::default()).expect("default config is valid")
    }

    pub fn width(&self) -> f64 {
        self.config.map.cols as f64
    }

    pub fn height(&self) -> f64 {
        self.config.map.rows as f64
    }

    fn treasure_at(&self, pos: &[f64; 2]) -> Option<usize> {
        let r = self.config.capture_radius;
        for (c, &depth) in self.config.map.depths.iter().enumerate() {
            let cx = c as f64 + 0.5;
            let cy = depth as f64 + 0.5;
            let dx = pos[0] - cx;
            let dy = pos[1] - cy;
            if dx * dx + dy * dy <= r * r {
                return Some(c);
            }
        }
        None
    }
}

/// Rescales a displacement onto the unit disc when its norm exceeds 1.
pub fn clip_to_unit_disc(action: &[f64; 2]) -> [f64; 2] {
    let norm = (action[0] * action[0] + action[1] * action[1]).sqrt();
    if norm > 1.0 {
        [action[0] / norm, action[1] / norm]
    } else {
        *action
    }
}

impl Environment for ContinuousDST {
    type State = [f64; 2];
    type Action = [f64; 2];

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset<R: Rng>(&self, _rng: &mut R) -> [f64; 2] {
        [0.0, 0.0]
    }

    fn step(
        &self,
        state: &[f64; 2],
        action: &[f64; 2],
    ) -> Result<Step<[f64; 2], [f64; 2]>, EnvError> {
        if !(0.0..=self.width()).contains(&state[0]) || !(0.0..=self.height()).contains(&state[1])
        {
            return Err(EnvError::PositionOutOfBounds(state[0], state[1]));
        }
        let executed = clip_to_unit_disc(action);
        let next = [
            (state[0] + executed[0]).clamp(0.0, self.width()),
            (state[1] + executed[1]).clamp(0.0, self.height()),
        ];
        match self.treasure_at(&next) {
            Some(c) => Ok(Step {
                next_state: next,
                reward: RewardVector::new(vec![self.config.map.values[c], -1.0]),
                done: true,
                executed,
            }),
            None => Ok(Step {
                next_state: next,
                reward: RewardVector::new(vec![0.0, -1.0]),
                done: false,
                executed,
            }),
        }
    }

    fn encode_state(&self, state: &[f64; 2]) -> Vec<f64> {
        state.to_vec()
    }

    fn encode_action(&self, action: &[f64; 2]) -> Vec<f64> {
        action.to_vec()
    }
}

impl ControlEnv for ContinuousDST {
    fn obs_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn action_from_squashed(&self, squashed: &[f64]) -> [f64; 2] {
        [squashed[0], squashed[1]]
    }
}

/// One recorded transition of a rollout.
#[derive(Debug, Clone)]
pub struct TrajectoryStep<S, A> {
    pub state: S,
    pub action: A,
    pub reward: RewardVector,
    pub next_state: S,
    pub done: bool,
}

/// Episode record with its discounted return.
#[derive(Debug, Clone)]
pub struct Trajectory<S, A> {
    pub steps: Vec<TrajectoryStep<S, A>>,
    pub discounted_return: RewardVector,
    pub gamma: f64,
}

impl<S, A> Trajectory<S, A> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Recomputes `Σ γ^t r_t` from the step list.
    pub fn recompute_discounted_return(&self, d: usize) -> RewardVector {
        let mut out = vec![0.0; d];
        let mut g = 1.0;
        for step in &self.steps {
            for k in 0..d {
                out[k] += g * step.reward.values[k];
            }
            g *= self.gamma;
        }
        RewardVector::new(out)
    }

    /// Plain undiscounted sum of rewards, the quantity the evaluation
    /// metrics aggregate.
    pub fn undiscounted_return(&self, d: usize) -> RewardVector {
        let mut out = vec![0.0; d];
        for step in &self.steps {
            for k in 0..d {
                out[k] += step.reward.values[k];
            }
        }
        RewardVector::new(out)
    }
}

/// Runs one episode to termination or the step cap, recording executed
/// actions and accumulating the discounted return.
pub fn rollout<E, R, F>(
    env: &E,
    policy: &mut F,
    pref: &Preference,
    gamma: f64,
    rng: &mut R,
) -> Result<Trajectory<E::State, E::Action>, EnvError>
where
    E: Environment,
    R: Rng,
    F: FnMut(&E::State, &Preference, &mut R) -> E::Action,
{
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(EnvError::InvalidGamma(gamma));
    }
    let d = env.spec().d;
    let mut state = env.reset(rng);
    let mut steps = Vec::new();
    let mut ret = vec![0.0; d];
    let mut g = 1.0;
    for _ in 0..env.spec().max_episode_steps {
        let action = policy(&state, pref, rng);
        let step = env.step(&state, &action)?;
        for k in 0..d {
            ret[k] += g * step.reward.values[k];
        }
        g *= gamma;
        let done = step.done;
        steps.push(TrajectoryStep {
            state: state.clone(),
            action: step.executed,
            reward: step.reward,
            next_state: step.next_state.clone(),
            done,
        });
        state = step.next_state;
        if done {
            break;
        }
    }
    Ok(Trajectory { steps, discounted_return: RewardVector::new(ret), gamma })
}

/// CSV export: `step,state...,action...,reward_0..,next_state...,done`.
pub fn write_trajectory_csv<E: Environment, W: std::io::Write>(
    env: &E,
    traj: &Trajectory<E::State, E::Action>,
    mut w: W,
) -> std::io::Result<()> {
    let d = env.spec().d;
    let sdim = env.encode_state(&traj.steps[0].state).len();
    let adim = env.encode_action(&traj.steps[0].action).len();
    let mut header = vec!["step".to_string()];
    header.extend((0..sdim).map(|i| format!("state_{i}")));
    header.extend((0..adim).map(|i| format!("action_{i}")));
    header.extend((0..d).map(|i| format!("reward_{i}")));
    header.extend((0..sdim).map(|i| format!("next_state_{i}")));
    header.push("done".to_string());
    writeln!(w, "{}", header.join(","))?;
    for (t, step) in traj.steps.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(env.encode_state(&step.state).iter().map(|x| x.to_string()));
        row.extend(env.encode_action(&step.action).iter().map(|x| x.to_string()));
        row.extend(step.reward.values.iter().map(|x| x.to_string()));
        row.extend(env.encode_state(&step.next_state).iter().map(|x| x.to_string()));
        row.push((step.done as u8).to_string());
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
