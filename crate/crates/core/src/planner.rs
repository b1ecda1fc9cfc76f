//! Exact tabular soft policy iteration with Q-snapshot envelopes.
//!
//! Policy evaluation iterates the vector softmax Bellman backup
//! `(T Q)(s,a) = r(s,a) + γ E_{s',a'}[Q(s',a') − α log π(a'|s') 1_d]`
//! to its fixed point. Policy improvement projects, per grid preference λ,
//! onto the softmax of the envelope energy
//! `e(s,a) = sup_{λ' ∈ W(λ), Q' ∈ snapshots} λᵀ Q'(s,a;λ')`,
//! where the snapshot set always contains the current iteration's Q-table
//! (it is injected at query time, so FIFO eviction can never drop it).
//! With `w_size = 1` and `snapshot_capacity = 1` the envelope degenerates
//! to the current table alone and the loop is plain per-preference soft
//! policy iteration.
//!
//! The scalarized soft value iteration in [`scalarized_soft_vi`] is kept as
//! an independent optimality oracle: for λ on the simplex the entropy term
//! scalarizes to an ordinary scalar bonus, so the λ-scalarized problem is a
//! standard entropy-regularized MDP whose optimal soft Q-function the
//! converged planner must match.

use std::collections::VecDeque;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::momdp::{
    dot_product as dot, MomdpError, PolicySlice, PolicyTable, Preference, PreferenceGrid, QSlice, QTable,
    TabularMOMDP,
};

/// Two candidate energies within this distance count as a tie; the earliest
/// candidate in (snapshot order, neighborhood order) is recorded as argmax.
pub const SUP_TIE_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error(transparent)]
    Momdp(#[from] MomdpError),
    #[error("policy evaluation did not converge: residual {residual} after {iterations} sweeps")]
    EvaluationDiverged { residual: f64, iterations: usize },
    #[error("scalarized value iteration did not converge: residual {residual} after {iterations} sweeps")]
    OracleDiverged { residual: f64, iterations: usize },
    #[error("policy iteration did not converge: max delta {max_delta} after {iterations} iterations")]
    IterationDiverged { max_delta: f64, iterations: usize, diagnostics: Box<PlannerDiagnostics> },
    #[error("snapshot set is empty")]
    EmptySnapshotSet,
    #[error("snapshot capacity must be at least 1")]
    ZeroSnapshotCapacity,
    #[error("neighborhood size must be at least 1")]
    ZeroNeighborhood,
    #[error("neighborhood of preference {pref} does not contain the preference itself")]
    MissingSelf { pref: usize },
    #[error("neighborhood member {member} out of range for grid of {grid}")]
    MemberOutOfRange { member: usize, grid: usize },
}

/// FIFO ring of past Q-tables. The ring itself holds at most
/// `capacity − 1` entries; [`SnapshotSet::view`] appends the current
/// iteration's table, so a queried set has at most `capacity` members and
/// always contains the current one.
#[derive(Debug, Clone)]
pub struct SnapshotSet {
    stored: VecDeque<(usize, QTable)>,
    capacity: usize,
}

impl SnapshotSet {
    pub fn new(capacity: usize) -> Result<Self, PlannerError> {
        if capacity == 0 {
            return Err(PlannerError::ZeroSnapshotCapacity);
        }
        Ok(Self { stored: VecDeque::new(), capacity })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn stored_len(&self) -> usize {
        self.stored.len()
    }

    /// Pushes a past iterate, evicting the oldest entries beyond the ring's
    /// share of the capacity.
    pub fn push(&mut self, iteration: usize, q: QTable) {
        self.stored.push_back((iteration, q));
        while self.stored.len() > self.capacity.saturating_sub(1) {
            self.stored.pop_front();
        }
    }

    /// Candidate list for one improvement step: stored snapshots oldest
    /// first, then the injected current table.
    pub fn view<'a>(&'a self, current_iteration: usize, current: &'a QTable) -> SnapshotView<'a> {
        let mut entries: Vec<(usize, &QTable)> =
            self.stored.iter().map(|(i, q)| (*i, q)).collect();
        entries.push((current_iteration, current));
        SnapshotView { entries }
    }
}

/// Immutable candidate list handed to the improvement step. Constructed
/// only through [`SnapshotSet::view`], which guarantees the current table
/// is a member.
#[derive(Debug, Clone)]
pub struct SnapshotView<'a> {
    pub(crate) entries: Vec<(usize, &'a QTable)>,
}

impl<'a> SnapshotView<'a> {
    pub fn entries(&self) -> &[(usize, &'a QTable)] {
        &self.entries
    }
}

/// For each grid preference, the subset of grid indices whose Q-slices
/// participate in that preference's envelope. Self-inclusion is enforced at
/// construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreferenceNeighborhood {
    members: Vec<Vec<usize>>,
}

impl PreferenceNeighborhood {
    /// `w_size`-nearest construction: the preference itself first, then the
    /// `w_size − 1` grid preferences closest in Euclidean distance, ties
    /// broken by grid index.
    pub fn nearest(grid: &PreferenceGrid, w_size: usize) -> Result<Self, PlannerError> {
        if w_size == 0 {
            return Err(PlannerError::ZeroNeighborhood);
        }
        let n = grid.len();
        let take = w_size.min(n);
        let mut members = Vec::with_capacity(n);
        for i in 0..n {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| {
                let da = grid.get(i).distance(grid.get(a));
                let db = grid.get(i).distance(grid.get(b));
                da.partial_cmp(&db).expect("finite distances").then(a.cmp(&b))
            });
            let mut set = Vec::with_capacity(take);
            set.push(i);
            set.extend(others.into_iter().take(take - 1));
            members.push(set);
        }
        Ok(Self { members })
    }

    /// Explicit sets; rejects any set missing its own preference.
    pub fn from_sets(members: Vec<Vec<usize>>, grid_len: usize) -> Result<Self, PlannerError> {
        for (i, set) in members.iter().enumerate() {
            if set.is_empty() {
                return Err(PlannerError::ZeroNeighborhood);
            }
            if !set.contains(&i) {
                return Err(PlannerError::MissingSelf { pref: i });
            }
            for &m in set {
                if m >= grid_len {
                    return Err(PlannerError::MemberOutOfRange { member: m, grid: grid_len });
                }
            }
        }
        Ok(Self { members })
    }

    pub fn members(&self, pref_index: usize) -> &[usize] {
        &self.members[pref_index]
    }
}

/// Per-iteration convergence bookkeeping for one planner run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PlannerDiagnostics {
    /// Completed improvement+evaluation iterations.
    pub iterations: usize,
    /// `max_{s,a,λ} |λᵀ(Q_k − Q_{k−1})|` per iteration.
    pub max_deltas: Vec<f64>,
    /// `min_{s,a,λ} λᵀ(Q_k − Q_{k−1})` per iteration; theory says this stays
    /// above a small negative numerical tolerance.
    pub min_margins: Vec<f64>,
    /// Cells per iteration whose envelope argmax was not the current
    /// table paired with the preference's own slice.
    pub snapshot_hits: Vec<u64>,
    /// Sup-norm residual trace of every evaluation sweep, including the
    /// bootstrap evaluation of the initial policy.
    pub eval_residuals: Vec<EvalTrace>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalTrace {
    pub iteration: usize,
    pub pref_index: usize,
    pub residuals: Vec<f64>,
}

impl PlannerDiagnostics {
    /// CSV with one row per iteration: `iteration,max_delta,min_improvement_margin`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iteration,max_delta,min_improvement_margin")?;
        for i in 0..self.iterations {
            writeln!(w, "{},{},{}", i + 1, self.max_deltas[i], self.min_margins[i])?;
        }
        Ok(())
    }
}

/// Result of one evaluation run: fixed point, sweep count, residual trace.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub q: QSlice,
    pub iterations: usize,
    pub residuals: Vec<f64>,
}

/// One application of the vector softmax Bellman backup for a fixed policy
/// slice. Zero-probability actions contribute nothing (x·log x → 0).
pub fn mo_soft_backup(
    momdp: &TabularMOMDP,
    policy: &PolicySlice,
    q: &QSlice,
    alpha: f64,
) -> QSlice {
    let (ns, na, d) = (momdp.n_states, momdp.n_actions, momdp.d);
    // next_value[s'] = E_{a'~π}[Q(s',a') − α log π(a'|s') 1_d]
    let mut next_value = vec![0.0; ns * d];
    for sp in 0..ns {
        let row = policy.row(sp);
        let nv = &mut next_value[sp * d..(sp + 1) * d];
        for (ap, &p) in row.iter().enumerate() {
            if p > 0.0 {
                let ent = alpha * p.ln();
                let qv = q.at(sp, ap);
                for k in 0..d {
                    nv[k] += p * (qv[k] - ent);
                }
            }
        }
    }
    let mut out = QSlice::zeros(ns, na, d);
    for s in 0..ns {
        for a in 0..na {
            let trans = &momdp.transition[s][a];
            let dest = out.at_mut(s, a);
            dest.copy_from_slice(&momdp.reward[s][a].values);
            for (sp, &p) in trans.iter().enumerate() {
                if p > 0.0 {
                    let nv = &next_value[sp * d..(sp + 1) * d];
                    for k in 0..d {
                        dest[k] += momdp.gamma * p * nv[k];
                    }
                }
            }
        }
    }
    out
}

/// Iterates [`mo_soft_backup`] from all zeros until the sup-norm change
/// drops below `tol`. Residuals of every sweep are returned for the
/// contraction diagnostics.
pub fn soft_policy_evaluation(
    momdp: &TabularMOMDP,
    policy: &PolicySlice,
    alpha: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Evaluation, PlannerError> {
    assert!(tol > 0.0, "tolerance must be positive");
    let mut q = QSlice::zeros(momdp.n_states, momdp.n_actions, momdp.d);
    let mut residuals = Vec::new();
    for i in 1..=max_iter {
        let next = mo_soft_backup(momdp, policy, &q, alpha);
        let residual = next.max_abs_diff(&q);
        residuals.push(residual);
        q = next;
        if residual < tol {
            return Ok(Evaluation { q, iterations: i, residuals });
        }
    }
    Err(PlannerError::EvaluationDiverged {
        residual: residuals.last().copied().unwrap_or(f64::INFINITY),
        iterations: max_iter,
    })
}

/// Envelope statistics from one improvement step.
#[derive(Debug, Clone, Default)]
pub struct ImproveStats {
    /// Cells whose argmax was a snapshot other than the current table, or a
    /// neighborhood preference other than the preference itself.
    pub snapshot_hits: u64,
}

/// Softmax policy for one grid preference from the envelope energy over
/// `(λ' ∈ W(λ)) × (Q' ∈ snapshots)`.
///
/// The policy depends only on the envelope's value; the argmax is resolved
/// to the earliest candidate in (snapshot order, neighborhood order) within
/// [`SUP_TIE_TOL`] purely for diagnostics.
pub fn pensieve_improve(
    grid: &PreferenceGrid,
    pref_index: usize,
    neighborhood: &PreferenceNeighborhood,
    snapshots: &SnapshotView<'_>,
    alpha: f64,
) -> Result<(PolicySlice, ImproveStats), PlannerError> {
    assert!(alpha > 0.0, "temperature must be positive");
    if snapshots.entries.is_empty() {
        return Err(PlannerError::EmptySnapshotSet);
    }
    let lambda = grid.get(pref_index).weights();
    let members = neighborhood.members(pref_index);
    let current_pos = snapshots.entries.len() - 1;

    let first = snapshots.entries[0].1;
    let (ns, na) = {
        let s = &first.slices[pref_index];
        (s.n_states, s.n_actions)
    };
    let mut stats = ImproveStats::default();
    let mut policy = PolicySlice { n_states: ns, n_actions: na, probs: vec![0.0; ns * na] };
    let mut energy = vec![0.0; na];
    for s in 0..ns {
        for a in 0..na {
            let mut best = f64::NEG_INFINITY;
            for (_, table) in &snapshots.entries {
                for &m in members {
                    let v = dot(lambda, table.slices[m].at(s, a));
                    if v > best {
                        best = v;
                    }
                }
            }
            // Earliest candidate within the tie tolerance, for diagnostics.
            'scan: for (snap_pos, (_, table)) in snapshots.entries.iter().enumerate() {
                for (w_pos, &m) in members.iter().enumerate() {
                    let v = dot(lambda, table.slices[m].at(s, a));
                    if v >= best - SUP_TIE_TOL {
                        if snap_pos != current_pos || w_pos != 0 {
                            stats.snapshot_hits += 1;
                        }
                        break 'scan;
                    }
                }
            }
            energy[a] = best;
        }
        // Softmax with max subtraction.
        let row_max = energy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        let row = &mut policy.probs[s * na..(s + 1) * na];
        for a in 0..na {
            let e = ((energy[a] - row_max) / alpha).exp();
            row[a] = e;
            z += e;
        }
        for p in row.iter_mut() {
            *p /= z;
        }
    }
    Ok((policy, stats))
}

/// Expected state values `V(s) = E_{a~π}[Q(s,a) − α log π(a|s) 1_d]`.
pub fn value_from_q(q: &QSlice, policy: &PolicySlice, alpha: f64) -> Vec<crate::momdp::RewardVector> {
    let (ns, d) = (q.n_states, q.d);
    let mut values = Vec::with_capacity(ns);
    for s in 0..ns {
        let mut v = vec![0.0; d];
        for (a, &p) in policy.row(s).iter().enumerate() {
            if p > 0.0 {
                let ent = alpha * p.ln();
                let qv = q.at(s, a);
                for k in 0..d {
                    v[k] += p * (qv[k] - ent);
                }
            }
        }
        values.push(crate::momdp::RewardVector::new(v));
    }
    values
}

/// Knobs for [`q_pensieve_policy_iteration`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlannerParams {
    pub alpha: f64,
    pub w_size: usize,
    pub snapshot_capacity: usize,
    /// Sup-norm tolerance for each inner policy evaluation.
    pub eval_tol: f64,
    /// Scalarized sup-norm tolerance on successive Q-tables for the outer loop.
    pub outer_tol: f64,
    pub eval_max_iter: usize,
    pub max_iter: usize,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            w_size: 1,
            snapshot_capacity: 1,
            eval_tol: 1e-8,
            outer_tol: 1e-6,
            eval_max_iter: 200_000,
            max_iter: 50_000,
        }
    }
}

/// Converged planner state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlannerOutput {
    pub policy: PolicyTable,
    pub q: QTable,
    pub diagnostics: PlannerDiagnostics,
}

fn evaluate_all(
    momdp: &TabularMOMDP,
    policy: &PolicyTable,
    grid_len: usize,
    params: &PlannerParams,
) -> Result<Vec<Evaluation>, PlannerError> {
    // Preferences are independent here; evaluate them in parallel and join
    // before anything touches the snapshot ring.
    (0..grid_len)
        .into_par_iter()
        .map(|i| {
            soft_policy_evaluation(
                momdp,
                &policy.slices[i],
                params.alpha,
                params.eval_tol,
                params.eval_max_iter,
            )
        })
        .collect()
}

fn scalarized_delta_bounds(
    grid: &PreferenceGrid,
    current: &QTable,
    previous: &QTable,
) -> (f64, f64) {
    let mut max_delta: f64 = 0.0;
    let mut min_margin = f64::INFINITY;
    for (i, pref) in grid.iter().enumerate() {
        let lambda = pref.weights();
        let cur = &current.slices[i];
        let prev = &previous.slices[i];
        for s in 0..cur.n_states {
            for a in 0..cur.n_actions {
                let delta = dot(lambda, cur.at(s, a)) - dot(lambda, prev.at(s, a));
                max_delta = max_delta.max(delta.abs());
                min_margin = min_margin.min(delta);
            }
        }
    }
    (max_delta, min_margin)
}

/// Full planning loop: evaluate every grid preference, improve every grid
/// preference against the snapshot envelope, repeat until the scalarized
/// Q-tables stop moving.
pub fn q_pensieve_policy_iteration(
    momdp: &TabularMOMDP,
    grid: &PreferenceGrid,
    params: &PlannerParams,
) -> Result<PlannerOutput, PlannerError> {
    if grid.dim() != momdp.d {
        return Err(MomdpError::DimensionMismatch { expected: momdp.d, got: grid.dim() }.into());
    }
    let neighborhood = PreferenceNeighborhood::nearest(grid, params.w_size)?;
    let mut ring = SnapshotSet::new(params.snapshot_capacity)?;
    let mut diag = PlannerDiagnostics::default();

    let mut policy = PolicyTable::uniform(grid.len(), momdp.n_states, momdp.n_actions);
    let evals = evaluate_all(momdp, &policy, grid.len(), params)?;
    let mut q_prev = QTable { slices: Vec::with_capacity(grid.len()) };
    for (i, e) in evals.into_iter().enumerate() {
        diag.eval_residuals.push(EvalTrace { iteration: 0, pref_index: i, residuals: e.residuals });
        q_prev.slices.push(e.q);
    }

    for k in 1..=params.max_iter {
        let improved: Vec<(PolicySlice, ImproveStats)> = {
            let view = ring.view(k - 1, &q_prev);
            (0..grid.len())
                .into_par_iter()
                .map(|i| pensieve_improve(grid, i, &neighborhood, &view, params.alpha))
                .collect::<Result<_, _>>()?
        };
        let mut hits = 0;
        policy = PolicyTable {
            slices: improved
                .into_iter()
                .map(|(slice, stats)| {
                    hits += stats.snapshot_hits;
                    slice
                })
                .collect(),
        };

        let evals = evaluate_all(momdp, &policy, grid.len(), params)?;
        let mut q = QTable { slices: Vec::with_capacity(grid.len()) };
        for (i, e) in evals.into_iter().enumerate() {
            diag.eval_residuals.push(EvalTrace {
                iteration: k,
                pref_index: i,
                residuals: e.residuals,
            });
            q.slices.push(e.q);
        }

        let (max_delta, min_margin) = scalarized_delta_bounds(grid, &q, &q_prev);
        diag.iterations = k;
        diag.max_deltas.push(max_delta);
        diag.min_margins.push(min_margin);
        diag.snapshot_hits.push(hits);

        ring.push(k - 1, q_prev);
        q_prev = q;

        if max_delta < params.outer_tol {
            return Ok(PlannerOutput { policy, q: q_prev, diagnostics: diag });
        }
    }
    let max_delta = diag.max_deltas.last().copied().unwrap_or(f64::INFINITY);
    Err(PlannerError::IterationDiverged {
        max_delta,
        iterations: params.max_iter,
        diagnostics: Box::new(diag),
    })
}

/// Scalar Q-table produced by [`scalarized_soft_vi`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalarQ {
    pub n_states: usize,
    pub n_actions: usize,
    pub data: Vec<f64>,
}

impl ScalarQ {
    #[inline]
    pub fn at(&self, s: usize, a: usize) -> f64 {
        self.data[s * self.n_actions + a]
    }
}

/// Standard soft value iteration on the λ-scalarized reward:
/// `Q ← λᵀr + γ E_{s'}[α log Σ_a exp(Q(s',a)/α)]`, log-sum-exp computed
/// with max subtraction. Serves as the independent optimality oracle.
pub fn scalarized_soft_vi(
    momdp: &TabularMOMDP,
    pref: &Preference,
    alpha: f64,
    tol: f64,
    max_iter: usize,
) -> Result<ScalarQ, PlannerError> {
    assert!(alpha > 0.0 && tol > 0.0);
    if pref.dim() != momdp.d {
        return Err(MomdpError::DimensionMismatch { expected: momdp.d, got: pref.dim() }.into());
    }
    let (ns, na) = (momdp.n_states, momdp.n_actions);
    let lambda = pref.weights();
    let r_scalar: Vec<f64> = (0..ns)
        .flat_map(|s| (0..na).map(move |a| (s, a)))
        .map(|(s, a)| dot(lambda, &momdp.reward[s][a].values))
        .collect();

    let mut q = vec![0.0; ns * na];
    let mut v = vec![0.0; ns];
    let mut residual = f64::INFINITY;
    for i in 1..=max_iter {
        for s in 0..ns {
            let row = &q[s * na..(s + 1) * na];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|&x| ((x - m) / alpha).exp()).sum();
            v[s] = m + alpha * z.ln();
        }
        residual = 0.0;
        for s in 0..ns {
            for a in 0..na {
                let mut next = r_scalar[s * na + a];
                for (sp, &p) in momdp.transition[s][a].iter().enumerate() {
                    if p > 0.0 {
                        next += momdp.gamma * p * v[sp];
                    }
                }
                let idx = s * na + a;
                residual = residual.max((next - q[idx]).abs());
                q[idx] = next;
            }
        }
        if residual < tol {
            let _ = i;
            return Ok(ScalarQ { n_states: ns, n_actions: na, data: q });
        }
    }
    Err(PlannerError::OracleDiverged { residual, iterations: max_iter })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::momdp::{random_momdp, Preference, RewardVector};

    fn single_state_momdp(gamma: f64) -> TabularMOMDP {
        TabularMOMDP::new(
            1,
            1,
            2,
            vec![vec![vec![1.0]]],
            vec![vec![RewardVector::new(vec![1.0, 0.0])]],
            gamma,
            vec![1.0],
            1.0,
        )
        .unwrap()
    }

    fn deterministic_policy(ns: usize, na: usize) -> PolicySlice {
        let mut probs = vec![0.0; ns * na];
        for s in 0..ns {
            probs[s * na] = 1.0;
        }
        PolicySlice { n_states: ns, n_actions: na, probs }
    }

    #[test]
    fn backup_fixed_point_self_loop() {
        let m = single_state_momdp(0.5);
        let policy = deterministic_policy(1, 1);
        let mut q = QSlice::zeros(1, 1, 2);
        for _ in 0..200 {
            q = mo_soft_backup(&m, &policy, &q, 0.7);
        }
        assert!((q.at(0, 0)[0] - 2.0).abs() < 1e-12);
        assert!(q.at(0, 0)[1].abs() < 1e-12);
    }

    #[test]
    fn backup_with_zero_discount_returns_reward() {
        // gamma = 0 cannot pass TabularMOMDP validation, so build the struct
        // directly: the backup only reads fields.
        let mut m = random_momdp(3, 3, 2, 2, 0.9).unwrap();
        m.gamma = 0.0;
        let policy = PolicySlice::uniform(3, 2);
        let q = {
            let mut q = QSlice::zeros(3, 2, 2);
            q.data.iter_mut().enumerate().for_each(|(i, x)| *x = i as f64);
            q
        };
        let out = mo_soft_backup(&m, &policy, &q, 0.3);
        for s in 0..3 {
            for a in 0..2 {
                assert_eq!(out.at(s, a), &m.reward[s][a].values[..]);
            }
        }
    }

    #[test]
    fn backup_matches_brute_force_summation() {
        let m = random_momdp(17, 4, 3, 2, 0.9).unwrap();
        let policy = {
            // A non-uniform valid policy.
            let mut probs = Vec::new();
            for s in 0..4 {
                let raw = [0.5 + s as f64, 1.0, 2.0];
                let z: f64 = raw.iter().sum();
                probs.extend(raw.iter().map(|x| x / z));
            }
            PolicySlice { n_states: 4, n_actions: 3, probs }
        };
        let mut q = QSlice::zeros(4, 3, 2);
        q.data.iter_mut().enumerate().for_each(|(i, x)| *x = (i as f64 * 0.37).sin());
        let alpha = 0.25;
        let got = mo_soft_backup(&m, &policy, &q, alpha);

        // Independent double loop over (s', a') per (s, a).
        for s in 0..4 {
            for a in 0..3 {
                for k in 0..2 {
                    let mut expected = m.reward[s][a].values[k];
                    for sp in 0..4 {
                        for ap in 0..3 {
                            let p = m.transition[s][a][sp] * policy.row(sp)[ap];
                            if p > 0.0 {
                                expected += m.gamma
                                    * p
                                    * (q.at(sp, ap)[k] - alpha * policy.row(sp)[ap].ln());
                            }
                        }
                    }
                    assert!(
                        (got.at(s, a)[k] - expected).abs() < 1e-12,
                        "mismatch at ({s},{a},{k})"
                    );
                }
            }
        }
    }

    #[test]
    fn evaluation_reaches_geometric_fixed_point() {
        let m = single_state_momdp(0.5);
        let policy = deterministic_policy(1, 1);
        let eval = soft_policy_evaluation(&m, &policy, 1.0, 1e-10, 10_000).unwrap();
        assert!((eval.q.at(0, 0)[0] - 2.0).abs() < 1e-9);
        assert!(eval.q.at(0, 0)[1].abs() < 1e-9);
    }

    #[test]
    fn evaluation_residuals_contract() {
        for seed in 0..5 {
            let m = random_momdp(seed, 5, 3, 2, 0.9).unwrap();
            let policy = PolicySlice::uniform(5, 3);
            let eval = soft_policy_evaluation(&m, &policy, 0.2, 1e-9, 100_000).unwrap();
            for w in eval.residuals.windows(2) {
                assert!(w[1] <= m.gamma * w[0] + 1e-12, "ratio {} vs {}", w[1], w[0]);
            }
        }
    }

    #[test]
    fn evaluation_nonconvergence_reports_residual() {
        let m = single_state_momdp(0.9);
        let policy = deterministic_policy(1, 1);
        let err = soft_policy_evaluation(&m, &policy, 1.0, 1e-12, 3).unwrap_err();
        match err {
            PlannerError::EvaluationDiverged { residual, iterations } => {
                assert!(residual > 0.0);
                assert_eq!(iterations, 3);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn contraction_property_on_random_pairs() {
        let m = random_momdp(5, 4, 3, 3, 0.85).unwrap();
        let policy = PolicySlice::uniform(4, 3);
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let mut q1 = QSlice::zeros(4, 3, 3);
            let mut q2 = QSlice::zeros(4, 3, 3);
            for x in q1.data.iter_mut() {
                *x = rng.gen_range(-10.0..10.0);
            }
            for x in q2.data.iter_mut() {
                *x = rng.gen_range(-10.0..10.0);
            }
            let t1 = mo_soft_backup(&m, &policy, &q1, 0.3);
            let t2 = mo_soft_backup(&m, &policy, &q2, 0.3);
            assert!(t1.max_abs_diff(&t2) <= m.gamma * q1.max_abs_diff(&q2) + 1e-12);
        }
    }

    fn one_state_table(grid_len: usize, values: &[[f64; 2]]) -> QTable {
        // One state, two actions, d = 2; same slice for every grid index.
        let na = values.len();
        let mut slice = QSlice::zeros(1, na, 2);
        for (a, v) in values.iter().enumerate() {
            slice.at_mut(0, a).copy_from_slice(v);
        }
        QTable { slices: vec![slice; grid_len] }
    }

    #[test]
    fn improve_two_point_softmax() {
        let grid = PreferenceGrid::new(vec![Preference::new(vec![1.0, 0.0]).unwrap()]).unwrap();
        let nbhd = PreferenceNeighborhood::nearest(&grid, 1).unwrap();
        let table = one_state_table(1, &[[1.0, 0.0], [0.0, 0.0]]);
        let ring = SnapshotSet::new(1).unwrap();
        let view = ring.view(0, &table);
        let (policy, _) = pensieve_improve(&grid, 0, &nbhd, &view, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((policy.row(0)[0] - e / (1.0 + e)).abs() < 1e-12);
        assert!((policy.row(0)[1] - 1.0 / (1.0 + e)).abs() < 1e-12);
    }

    #[test]
    fn improve_takes_envelope_over_snapshots() {
        let grid = PreferenceGrid::new(vec![Preference::new(vec![1.0, 0.0]).unwrap()]).unwrap();
        let nbhd = PreferenceNeighborhood::nearest(&grid, 1).unwrap();
        let snap_a = one_state_table(1, &[[1.0, 0.0], [0.0, 0.0]]);
        let snap_b = one_state_table(1, &[[0.0, 0.0], [2.0, 0.0]]);
        let mut ring = SnapshotSet::new(2).unwrap();
        ring.push(0, snap_a);
        let view = ring.view(1, &snap_b);
        let (policy, stats) = pensieve_improve(&grid, 0, &nbhd, &view, 1.0).unwrap();
        // Brute-force the envelope: e = [max(1,0), max(0,2)] = [1, 2].
        let z = 1.0f64.exp() + 2.0f64.exp();
        assert!((policy.row(0)[0] - 1.0f64.exp() / z).abs() < 1e-12);
        assert!((policy.row(0)[1] - 2.0f64.exp() / z).abs() < 1e-12);
        // Action 0's argmax is the old snapshot.
        assert_eq!(stats.snapshot_hits, 1);
    }

    #[test]
    fn improve_high_temperature_is_uniform() {
        let grid = PreferenceGrid::new(vec![Preference::new(vec![0.5, 0.5]).unwrap()]).unwrap();
        let nbhd = PreferenceNeighborhood::nearest(&grid, 1).unwrap();
        let table = one_state_table(1, &[[3.0, 1.0], [-2.0, 0.5], [0.0, 0.0]]);
        let ring = SnapshotSet::new(1).unwrap();
        let view = ring.view(0, &table);
        let (policy, _) = pensieve_improve(&grid, 0, &nbhd, &view, 1e6).unwrap();
        for a in 0..3 {
            assert!((policy.row(0)[a] - 1.0 / 3.0).abs() < 1e-5);
        }
    }

    #[test]
    fn improve_rejects_empty_candidates() {
        let grid = PreferenceGrid::new(vec![Preference::new(vec![0.5, 0.5]).unwrap()]).unwrap();
        let nbhd = PreferenceNeighborhood::nearest(&grid, 1).unwrap();
        let view = SnapshotView { entries: vec![] };
        assert!(matches!(
            pensieve_improve(&grid, 0, &nbhd, &view, 1.0),
            Err(PlannerError::EmptySnapshotSet)
        ));
    }

    #[test]
    fn neighborhood_requires_self_inclusion() {
        let err = PreferenceNeighborhood::from_sets(vec![vec![1], vec![1]], 2).unwrap_err();
        assert!(matches!(err, PlannerError::MissingSelf { pref: 0 }));
        assert!(PreferenceNeighborhood::from_sets(vec![vec![0], vec![1, 0]], 2).is_ok());
        assert!(matches!(
            PreferenceNeighborhood::from_sets(vec![vec![0, 5]], 1),
            Err(PlannerError::MemberOutOfRange { .. })
        ));
    }

    #[test]
    fn snapshot_ring_keeps_room_for_current() {
        let mut ring = SnapshotSet::new(3).unwrap();
        let t = one_state_table(1, &[[0.0, 0.0]]);
        for i in 0..5 {
            ring.push(i, t.clone());
        }
        assert_eq!(ring.stored_len(), 2);
        let view = ring.view(5, &t);
        let ids: Vec<usize> = view.entries().iter().map(|(i, _)| *i).collect();
        assert_eq!(ids, vec![3, 4, 5]);
        assert!(SnapshotSet::new(0).is_err());
    }

    #[test]
    fn value_from_q_matches_closed_forms() {
        let mut q = QSlice::zeros(1, 2, 2);
        q.at_mut(0, 0).copy_from_slice(&[1.5, -0.5]);
        q.at_mut(0, 1).copy_from_slice(&[1.5, -0.5]);
        let alpha = 0.3;

        // Deterministic policy: V = Q of the chosen action.
        let det = deterministic_policy(1, 2);
        let v = value_from_q(&q, &det, alpha);
        assert_eq!(v[0].values, vec![1.5, -0.5]);

        // Uniform over two equal actions: V = q + alpha ln 2.
        let uni = PolicySlice::uniform(1, 2);
        let v = value_from_q(&q, &uni, alpha);
        assert!((v[0].values[0] - (1.5 + alpha * 2.0f64.ln())).abs() < 1e-12);
        assert!((v[0].values[1] - (-0.5 + alpha * 2.0f64.ln())).abs() < 1e-12);

        // Random instance against an independent summation.
        let mut q = QSlice::zeros(2, 3, 2);
        q.data.iter_mut().enumerate().for_each(|(i, x)| *x = (i as f64).cos());
        let probs: Vec<f64> = vec![0.2, 0.3, 0.5, 0.6, 0.4, 0.0];
        let policy = PolicySlice { n_states: 2, n_actions: 3, probs };
        let v = value_from_q(&q, &policy, alpha);
        for s in 0..2 {
            for k in 0..2 {
                let mut expected = 0.0;
                for a in 0..3 {
                    let p = policy.row(s)[a];
                    if p > 0.0 {
                        expected += p * (q.at(s, a)[k] - alpha * p.ln());
                    }
                }
                assert!((v[s].values[k] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scalarized_vi_closed_forms() {
        // Self-loop: optimal soft Q equals r/(1-gamma) when only one action.
        let m = single_state_momdp(0.5);
        let pref = Preference::new(vec![1.0, 0.0]).unwrap();
        let oracle = scalarized_soft_vi(&m, &pref, 0.7, 1e-12, 100_000).unwrap();
        assert!((oracle.at(0, 0) - 2.0).abs() < 1e-10);

        // One-state two-action bandit with tiny discount: V* ~ lse of rewards.
        let m = TabularMOMDP::new(
            1,
            2,
            2,
            vec![vec![vec![1.0], vec![1.0]]],
            vec![vec![
                RewardVector::new(vec![1.0, 0.0]),
                RewardVector::new(vec![0.0, 0.0]),
            ]],
            1e-9,
            vec![1.0],
            1.0,
        )
        .unwrap();
        let oracle = scalarized_soft_vi(&m, &pref, 1.0, 1e-13, 100_000).unwrap();
        let v = {
            let m0 = oracle.at(0, 0).max(oracle.at(0, 1));
            m0 + ((oracle.at(0, 0) - m0).exp() + (oracle.at(0, 1) - m0).exp()).ln()
        };
        assert!((v - (1.0f64.exp() + 1.0).ln()).abs() < 1e-8, "V* = {v}");
    }

    #[test]
    fn planner_matches_scalarized_oracle() {
        let m = random_momdp(42, 4, 3, 2, 0.9).unwrap();
        let grid = PreferenceGrid::even_2d(5).unwrap();
        let params = PlannerParams {
            alpha: 0.1,
            w_size: 3,
            snapshot_capacity: 3,
            eval_tol: 1e-12,
            outer_tol: 1e-8,
            ..Default::default()
        };
        let out = q_pensieve_policy_iteration(&m, &grid, &params).unwrap();
        for (i, pref) in grid.iter().enumerate() {
            let oracle = scalarized_soft_vi(&m, pref, params.alpha, 1e-13, 500_000).unwrap();
            let slice = &out.q.slices[i];
            let mut gap: f64 = 0.0;
            for s in 0..m.n_states {
                for a in 0..m.n_actions {
                    let v = dot(pref.weights(), slice.at(s, a));
                    gap = gap.max((v - oracle.at(s, a)).abs());
                }
            }
            assert!(gap <= 1e-6, "pref {i}: oracle gap {gap}");
        }
        // Monotone improvement margins from the diagnostics.
        for &m in &out.diagnostics.min_margins {
            assert!(m >= -1e-8, "margin {m}");
        }
    }

    #[test]
    fn planner_optimality_within_ten_tol() {
        let m = random_momdp(100, 5, 3, 2, 0.9).unwrap();
        let grid = PreferenceGrid::even_2d(4).unwrap();
        let params = PlannerParams {
            alpha: 0.2,
            w_size: 2,
            snapshot_capacity: 2,
            eval_tol: 1e-12,
            outer_tol: 1e-6,
            ..Default::default()
        };
        let out = q_pensieve_policy_iteration(&m, &grid, &params).unwrap();
        for (i, pref) in grid.iter().enumerate() {
            let oracle = scalarized_soft_vi(&m, pref, params.alpha, 1e-13, 500_000).unwrap();
            let slice = &out.q.slices[i];
            for s in 0..m.n_states {
                for a in 0..m.n_actions {
                    let v = dot(pref.weights(), slice.at(s, a));
                    assert!((v - oracle.at(s, a)).abs() <= 10.0 * params.outer_tol);
                }
            }
        }
    }

    #[test]
    fn planner_nonconvergence_attaches_diagnostics() {
        let m = random_momdp(1, 3, 2, 2, 0.95).unwrap();
        let grid = PreferenceGrid::even_2d(3).unwrap();
        let params = PlannerParams { max_iter: 2, ..Default::default() };
        match q_pensieve_policy_iteration(&m, &grid, &params) {
            Err(PlannerError::IterationDiverged { diagnostics, .. }) => {
                assert_eq!(diagnostics.iterations, 2);
                assert_eq!(diagnostics.max_deltas.len(), 2);
                assert_eq!(diagnostics.min_margins.len(), 2);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn diagnostics_csv_schema() {
        let diag = PlannerDiagnostics {
            iterations: 2,
            max_deltas: vec![0.5, 0.25],
            min_margins: vec![0.1, 0.05],
            snapshot_hits: vec![0, 1],
            eval_residuals: vec![],
        };
        let mut buf = Vec::new();
        diag.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "iteration,max_delta,min_improvement_margin");
        assert_eq!(lines.next().unwrap(), "1,0.5,0.1");
        assert_eq!(lines.next().unwrap(), "2,0.25,0.05");
    }
}
