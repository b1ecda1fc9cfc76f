//! Domain types for multi-objective MDPs: preference vectors on the unit
//! simplex, vector rewards, finite tabular models, and the preference-indexed
//! value/policy tables used by the planner.
//!
//! Simplex membership is checked everywhere with the same tolerance,
//! [`SIMPLEX_TOL`]. Constructors renormalize preference weights whose sum
//! drifts by at most [`RENORM_TOL`] and reject anything farther out, so
//! floating-point drift is absorbed without masking logic errors.

use rand::Rng;
use rand_distr::{Dirichlet, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for simplex membership and row-stochasticity checks.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Maximum deviation of a preference's weight sum from 1 that constructors
/// silently renormalize away.
pub const RENORM_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MomdpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("preference must have at least one component")]
    EmptyPreference,
    #[error("preference component {index} is negative ({value})")]
    NegativeWeight { index: usize, value: f64 },
    #[error("preference weights sum to {sum}, outside the renormalization tolerance")]
    WeightSumOutOfRange { sum: f64 },
    #[error("{what} must be at least 1")]
    ZeroSize { what: &'static str },
    #[error("gamma must lie in (0,1), got {0}")]
    InvalidGamma(f64),
    #[error("transition row ({state},{action}) sums to {sum}")]
    BadTransitionRow { state: usize, action: usize, sum: f64 },
    #[error("transition entry ({state},{action},{next}) is negative ({value})")]
    NegativeTransition { state: usize, action: usize, next: usize, value: f64 },
    #[error("initial distribution sums to {sum}")]
    BadInitialDist { sum: f64 },
    #[error("reward component out of range at ({state},{action}): |{value}| > r_max {r_max}")]
    RewardOutOfRange { state: usize, action: usize, value: f64, r_max: f64 },
    #[error("non-finite entry in {what}")]
    NonFinite { what: &'static str },
    #[error("preference grid must be non-empty")]
    EmptyGrid,
    #[error("preference grid entries {a} and {b} coincide within tolerance")]
    DuplicatePreference { a: usize, b: usize },
    #[error("policy row ({state}) for preference {pref} sums to {sum}")]
    BadPolicyRow { pref: usize, state: usize, sum: f64 },
}

/// A point on the d-dimensional unit simplex: non-negative weights summing
/// to one, used to scalarize vector rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Preference {
    weights: Vec<f64>,
}

impl Preference {
    /// Builds a preference, renormalizing sums within [`RENORM_TOL`] of 1.
    pub fn new(weights: Vec<f64>) -> Result<Self, MomdpError> {
        if weights.is_empty() {
            return Err(MomdpError::EmptyPreference);
        }
        for (i, &w) in weights.iter().enumerate() {
            if !w.is_finite() {
                return Err(MomdpError::NonFinite { what: "preference weights" });
            }
            if w < 0.0 {
                return Err(MomdpError::NegativeWeight { index: i, value: w });
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > RENORM_TOL {
            return Err(MomdpError::WeightSumOutOfRange { sum });
        }
        let weights = if sum == 1.0 {
            weights
        } else {
            weights.iter().map(|w| w / sum).collect()
        };
        Ok(Self { weights })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Euclidean distance between two preferences of equal dimension.
    pub fn distance(&self, other: &Preference) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Max-norm distance, used for the grid duplicate check.
    pub fn max_norm_distance(&self, other: &Preference) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<f64>> for Preference {
    type Error = MomdpError;
    fn try_from(weights: Vec<f64>) -> Result<Self, Self::Error> {
        Preference::new(weights)
    }
}

impl From<Preference> for Vec<f64> {
    fn from(p: Preference) -> Self {
        p.weights
    }
}

/// A d-dimensional reward sample, one component per objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RewardVector {
    pub values: Vec<f64>,
}

impl RewardVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(d: usize) -> Self {
        Self { values: vec![0.0; d] }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Inner product of a preference with a reward vector.
///
/// This is the linear scalarization used throughout: a preference on the
/// simplex collapses any constant vector `c·1_d` to the scalar `c`, which is
/// what lets the entropy term of the vector Bellman backup act like an
/// ordinary scalar entropy bonus.
pub fn scalarize(pref: &Preference, v: &RewardVector) -> Result<f64, MomdpError> {
    if pref.dim() != v.dim() {
        return Err(MomdpError::DimensionMismatch { expected: pref.dim(), got: v.dim() });
    }
    Ok(dot_product(pref.weights(), &v.values))
}

/// Plain inner product over raw slices; the unchecked core of
/// [`scalarize`], exposed for value-table arithmetic.
pub fn dot_product(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Finite-state, finite-action MDP with vector rewards.
///
/// `transition[s][a][s']` is the probability of moving to `s'`;
/// `reward[s][a]` is the d-vector reward. Row stochasticity and the reward
/// bound `r_max` are validated at construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabularMOMDP {
    pub n_states: usize,
    pub n_actions: usize,
    pub d: usize,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<RewardVector>>,
    pub gamma: f64,
    pub initial_dist: Vec<f64>,
    pub r_max: f64,
}

impl TabularMOMDP {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        d: usize,
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<RewardVector>>,
        gamma: f64,
        initial_dist: Vec<f64>,
        r_max: f64,
    ) -> Result<Self, MomdpError> {
        let m = Self { n_states, n_actions, d, transition, reward, gamma, initial_dist, r_max };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), MomdpError> {
        if self.n_states == 0 {
            return Err(MomdpError::ZeroSize { what: "n_states" });
        }
        if self.n_actions == 0 {
            return Err(MomdpError::ZeroSize { what: "n_actions" });
        }
        if self.d == 0 {
            return Err(MomdpError::ZeroSize { what: "d" });
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(MomdpError::InvalidGamma(self.gamma));
        }
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = &self.transition[s][a];
                let mut sum = 0.0;
                for (sp, &p) in row.iter().enumerate() {
                    if !p.is_finite() {
                        return Err(MomdpError::NonFinite { what: "transition" });
                    }
                    if p < 0.0 {
                        return Err(MomdpError::NegativeTransition {
                            state: s,
                            action: a,
                            next: sp,
                            value: p,
                        });
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > SIMPLEX_TOL {
                    return Err(MomdpError::BadTransitionRow { state: s, action: a, sum });
                }
                for &rv in &self.reward[s][a].values {
                    if !rv.is_finite() {
                        return Err(MomdpError::NonFinite { what: "reward" });
                    }
                    if rv.abs() > self.r_max {
                        return Err(MomdpError::RewardOutOfRange {
                            state: s,
                            action: a,
                            value: rv,
                            r_max: self.r_max,
                        });
                    }
                }
            }
        }
        let init_sum: f64 = self.initial_dist.iter().sum();
        if (init_sum - 1.0).abs() > SIMPLEX_TOL || self.initial_dist.iter().any(|&p| p < 0.0) {
            return Err(MomdpError::BadInitialDist { sum: init_sum });
        }
        Ok(())
    }
}

/// Ordered list of distinct preferences; the finite discretization of the
/// simplex on which the tabular planner operates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreferenceGrid {
    preferences: Vec<Preference>,
}

impl PreferenceGrid {
    pub fn new(preferences: Vec<Preference>) -> Result<Self, MomdpError> {
        if preferences.is_empty() {
            return Err(MomdpError::EmptyGrid);
        }
        for i in 0..preferences.len() {
            for j in (i + 1)..preferences.len() {
                if preferences[i].max_norm_distance(&preferences[j]) <= SIMPLEX_TOL {
                    return Err(MomdpError::DuplicatePreference { a: i, b: j });
                }
            }
        }
        Ok(Self { preferences })
    }

    /// Evenly spaced two-objective grid `[1,0], ..., [0,1]` with `count` points.
    pub fn even_2d(count: usize) -> Result<Self, MomdpError> {
        if count < 2 {
            return Err(MomdpError::ZeroSize { what: "grid count" });
        }
        let prefs = (0..count)
            .map(|i| {
                let w = i as f64 / (count - 1) as f64;
                Preference::new(vec![1.0 - w, w])
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(prefs)
    }

    pub fn len(&self) -> usize {
        self.preferences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preferences.is_empty()
    }

    pub fn get(&self, i: usize) -> &Preference {
        &self.preferences[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Preference> {
        self.preferences.iter()
    }

    pub fn dim(&self) -> usize {
        self.preferences[0].dim()
    }
}

/// One preference's Q-values: a `[n_states][n_actions]` table of d-vectors,
/// stored flat as `data[(s * n_actions + a) * d + k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QSlice {
    pub n_states: usize,
    pub n_actions: usize,
    pub d: usize,
    pub data: Vec<f64>,
}

impl QSlice {
    pub fn zeros(n_states: usize, n_actions: usize, d: usize) -> Self {
        Self { n_states, n_actions, d, data: vec![0.0; n_states * n_actions * d] }
    }

    #[inline]
    pub fn at(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.d;
        &self.data[base..base + self.d]
    }

    #[inline]
    pub fn at_mut(&mut self, s: usize, a: usize) -> &mut [f64] {
        let base = (s * self.n_actions + a) * self.d;
        &mut self.data[base..base + self.d]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Max-norm distance to another slice of the same shape.
    pub fn max_abs_diff(&self, other: &QSlice) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Preference-indexed Q-values: `slices[i]` belongs to grid preference `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub slices: Vec<QSlice>,
}

impl QTable {
    pub fn zeros(grid_len: usize, n_states: usize, n_actions: usize, d: usize) -> Self {
        Self { slices: vec![QSlice::zeros(n_states, n_actions, d); grid_len] }
    }
}

/// One preference's policy: `probs[(s * n_actions) + a]`, each state row a
/// distribution over actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySlice {
    pub n_states: usize,
    pub n_actions: usize,
    pub probs: Vec<f64>,
}

impl PolicySlice {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, probs: vec![1.0 / n_actions as f64; n_states * n_actions] }
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn validate(&self, pref_index: usize) -> Result<(), MomdpError> {
        for s in 0..self.n_states {
            let sum: f64 = self.row(s).iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL || self.row(s).iter().any(|&p| p < 0.0) {
                return Err(MomdpError::BadPolicyRow { pref: pref_index, state: s, sum });
            }
        }
        Ok(())
    }
}

/// Preference-indexed policy table, aligned with a [`PreferenceGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub slices: Vec<PolicySlice>,
}

impl PolicyTable {
    pub fn uniform(grid_len: usize, n_states: usize, n_actions: usize) -> Self {
        Self { slices: vec![PolicySlice::uniform(n_states, n_actions); grid_len] }
    }
}

/// Seeded random MOMDP generator for property tests and the planning
/// harness: transition rows from a flat Dirichlet, rewards uniform in
/// `[-1,1]^d`, uniform initial distribution, `r_max = 1`.
pub fn random_momdp(
    seed: u64,
    n_states: usize,
    n_actions: usize,
    d: usize,
    gamma: f64,
) -> Result<TabularMOMDP, MomdpError> {
    if n_states == 0 {
        return Err(MomdpError::ZeroSize { what: "n_states" });
    }
    if n_actions == 0 {
        return Err(MomdpError::ZeroSize { what: "n_actions" });
    }
    if d == 0 {
        return Err(MomdpError::ZeroSize { what: "d" });
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(MomdpError::InvalidGamma(gamma));
    }
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let unit = Uniform::new_inclusive(-1.0, 1.0);

    let mut transition = Vec::with_capacity(n_states);
    let mut reward = Vec::with_capacity(n_states);
    for _ in 0..n_states {
        let mut t_row = Vec::with_capacity(n_actions);
        let mut r_row = Vec::with_capacity(n_actions);
        for _ in 0..n_actions {
            t_row.push(dirichlet_row(&mut rng, n_states));
            r_row.push(RewardVector::new((0..d).map(|_| rng.sample(unit)).collect()));
        }
        transition.push(t_row);
        reward.push(r_row);
    }
    TabularMOMDP::new(
        n_states,
        n_actions,
        d,
        transition,
        reward,
        gamma,
        vec![1.0 / n_states as f64; n_states],
        1.0,
    )
}

fn dirichlet_row<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let dir = Dirichlet::new_with_size(1.0, n).expect("n >= 2");
    let mut row = rng.sample(dir);
    // Guard against rounding in the sampler's own normalization.
    let sum: f64 = row.iter().sum();
    for p in &mut row {
        *p /= sum;
    }
    row
}

/// Uniform sample from the d-dimensional unit simplex via sorted-uniform
/// spacings.
pub fn uniform_simplex_sample<R: Rng>(rng: &mut R, d: usize) -> Preference {
    assert!(d >= 1, "preference dimension must be at least 1");
    if d == 1 {
        return Preference::new(vec![1.0]).expect("valid");
    }
    let unit = Uniform::new(0.0, 1.0);
    let mut cuts: Vec<f64> = (0..d - 1).map(|_| rng.sample(unit)).collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let mut weights = Vec::with_capacity(d);
    let mut prev = 0.0;
    for &c in &cuts {
        weights.push(c - prev);
        prev = c;
    }
    weights.push(1.0 - prev);
    Preference::new(weights).expect("spacings lie on the simplex")
}
