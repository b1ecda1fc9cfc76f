//! Evaluation metrics over sets of return vectors: hypervolume above a
//! reference point, expected scalarized utility under sampled preferences,
//! pairwise episodic dominance, and Pareto filtering.
//!
//! Hypervolume is exact for two objectives (sorted sweep) and for small
//! three-objective fronts (inclusion-exclusion over the Pareto-filtered
//! set); larger instances fall back to Monte Carlo with a reported standard
//! error.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::momdp::{scalarize, uniform_simplex_sample, MomdpError, Preference, RewardVector};

/// Seed for the fixed metric preference samples and the Monte Carlo
/// hypervolume fallback inside [`hypervolume`].
pub const METRIC_SEED: u64 = 0x51D5_EED;

/// Samples used by the Monte Carlo fallback of [`hypervolume`].
pub const DEFAULT_MC_SAMPLES: usize = 200_000;

/// Fronts up to this size use exact inclusion-exclusion in three or more
/// dimensions.
pub const INCLUSION_EXCLUSION_MAX_POINTS: usize = 20;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("preference sample set is empty")]
    EmptyPreferenceSet,
    #[error("return sets have mismatched lengths: {a} vs {b}")]
    MismatchedReturns { a: usize, b: usize },
    #[error(transparent)]
    Momdp(#[from] MomdpError),
}

/// A labelled return vector: where it came from (preference, seed) travels
/// with the point through filtering and reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnPoint {
    pub value: RewardVector,
    pub preference: Option<Preference>,
    pub seed: Option<u64>,
}

impl ReturnPoint {
    pub fn unlabelled(value: RewardVector) -> Self {
        Self { value, preference: None, seed: None }
    }
}

/// Set of return vectors of uniform dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSet {
    pub points: Vec<ReturnPoint>,
}

impl ReturnSet {
    pub fn from_vectors(values: Vec<RewardVector>) -> Self {
        Self { points: values.into_iter().map(ReturnPoint::unlabelled).collect() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map(|p| p.value.dim()).unwrap_or(0)
    }
}

/// Hypervolume reference point; only points componentwise above it
/// contribute volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReferencePoint(pub Vec<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HvMethod {
    Sweep2d,
    InclusionExclusion,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HvEstimate {
    pub value: f64,
    /// Present only for the Monte Carlo method.
    pub std_error: Option<f64>,
    pub method: HvMethod,
}

fn strictly_dominates_ref(p: &[f64], r: &[f64]) -> bool {
    p.iter().zip(r).all(|(a, b)| a > b)
}

/// `a` dominates `b`: componentwise >= with at least one strict component.
fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return false;
        }
        if x > y {
            strict = true;
        }
    }
    strict
}

/// Maximal (non-dominated) subset in stable input order.
pub fn pareto_filter(set: &ReturnSet) -> ReturnSet {
    let points = &set.points;
    let kept = points
        .iter()
        .enumerate()
        .filter(|(i, p)| {
            !points
                .iter()
                .enumerate()
                .any(|(j, q)| j != *i && dominates(&q.value.values, &p.value.values))
        })
        .map(|(_, p)| p.clone())
        .collect();
    ReturnSet { points: kept }
}

/// Exact two-objective hypervolume by descending sweep over the first
/// coordinate.
pub fn hypervolume_sweep_2d(set: &ReturnSet, reference: &ReferencePoint) -> f64 {
    let r = &reference.0;
    let mut pts: Vec<[f64; 2]> = set
        .points
        .iter()
        .map(|p| [p.value.values[0], p.value.values[1]])
        .filter(|p| strictly_dominates_ref(p, r))
        .collect();
    pts.sort_by(|a, b| b[0].partial_cmp(&a[0]).unwrap().then(b[1].partial_cmp(&a[1]).unwrap()));
    let mut hv = 0.0;
    let mut last_y = r[1];
    for p in pts {
        if p[1] > last_y {
            hv += (p[0] - r[0]) * (p[1] - last_y);
            last_y = p[1];
        }
    }
    hv
}

/// Exact hypervolume in any dimension by inclusion-exclusion over the
/// Pareto-filtered contributing points. Exponential in the front size.
pub fn hypervolume_inclusion_exclusion(set: &ReturnSet, reference: &ReferencePoint) -> f64 {
    let r = &reference.0;
    let front = pareto_filter(set);
    let pts: Vec<&Vec<f64>> = front
        .points
        .iter()
        .map(|p| &p.value.values)
        .filter(|p| strictly_dominates_ref(p, r))
        .collect();
    let n = pts.len();
    assert!(n <= 30, "inclusion-exclusion limited to small fronts");
    let d = r.len();
    let mut hv = 0.0;
    for mask in 1u32..(1u32 << n) {
        let mut vol = 1.0;
        for k in 0..d {
            let mut m = f64::INFINITY;
            let mut bits = mask;
            while bits != 0 {
                let i = bits.trailing_zeros() as usize;
                m = m.min(pts[i][k]);
                bits &= bits - 1;
            }
            vol *= m - r[k];
        }
        if mask.count_ones() % 2 == 1 {
            hv += vol;
        } else {
            hv -= vol;
        }
    }
    hv
}

/// Monte Carlo hypervolume estimate with its binomial standard error.
pub fn hypervolume_monte_carlo(
    set: &ReturnSet,
    reference: &ReferencePoint,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> (f64, f64) {
    use rand::Rng;
    let r = &reference.0;
    let d = r.len();
    let pts: Vec<&Vec<f64>> = set
        .points
        .iter()
        .map(|p| &p.value.values)
        .filter(|p| strictly_dominates_ref(p, r))
        .collect();
    if pts.is_empty() {
        return (0.0, 0.0);
    }
    let mut upper = vec![f64::NEG_INFINITY; d];
    for p in &pts {
        for k in 0..d {
            upper[k] = upper[k].max(p[k]);
        }
    }
    let box_vol: f64 = upper.iter().zip(r).map(|(u, l)| u - l).product();
    let mut hits = 0usize;
    let mut z = vec![0.0; d];
    for _ in 0..samples {
        for k in 0..d {
            z[k] = rng.gen_range(r[k]..upper[k]);
        }
        if pts.iter().any(|p| z.iter().zip(p.iter()).all(|(zi, pi)| zi <= pi)) {
            hits += 1;
        }
    }
    let frac = hits as f64 / samples as f64;
    let se = box_vol * (frac * (1.0 - frac) / samples as f64).sqrt();
    (box_vol * frac, se)
}

/// Hypervolume of the region dominated by `set` above `reference`.
///
/// Dispatch: exact sweep for d = 2, exact inclusion-exclusion for d = 3
/// with a small front, Monte Carlo (fixed seed, [`DEFAULT_MC_SAMPLES`])
/// otherwise. Empty or fully dominated-by-reference sets yield zero.
pub fn hypervolume(set: &ReturnSet, reference: &ReferencePoint) -> HvEstimate {
    let d = reference.0.len();
    if d == 2 {
        return HvEstimate {
            value: hypervolume_sweep_2d(set, reference),
            std_error: None,
            method: HvMethod::Sweep2d,
        };
    }
    let front = pareto_filter(set);
    if d == 3 && front.len() <= INCLUSION_EXCLUSION_MAX_POINTS {
        return HvEstimate {
            value: hypervolume_inclusion_exclusion(&front, reference),
            std_error: None,
            method: HvMethod::InclusionExclusion,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(METRIC_SEED);
    let (value, se) = hypervolume_monte_carlo(&front, reference, DEFAULT_MC_SAMPLES, &mut rng);
    HvEstimate { value, std_error: Some(se), method: HvMethod::MonteCarlo }
}

/// Expected scalarized return over a preference sample set:
/// the mean of `λᵀ evaluate(λ)`.
pub fn utility<F>(mut evaluate: F, preferences: &[Preference]) -> Result<f64, MetricsError>
where
    F: FnMut(&Preference) -> RewardVector,
{
    if preferences.is_empty() {
        return Err(MetricsError::EmptyPreferenceSet);
    }
    let mut total = 0.0;
    for pref in preferences {
        total += scalarize(pref, &evaluate(pref))?;
    }
    Ok(total / preferences.len() as f64)
}

/// Fraction of preferences where the first algorithm's scalarized return
/// strictly exceeds the second's. Ties count for neither direction.
pub fn episodic_dominance(
    returns_1: &[RewardVector],
    returns_2: &[RewardVector],
    preferences: &[Preference],
) -> Result<f64, MetricsError> {
    if preferences.is_empty() {
        return Err(MetricsError::EmptyPreferenceSet);
    }
    if returns_1.len() != preferences.len() || returns_2.len() != preferences.len() {
        return Err(MetricsError::MismatchedReturns {
            a: returns_1.len().min(returns_2.len()),
            b: preferences.len(),
        });
    }
    let mut wins = 0usize;
    for ((r1, r2), pref) in returns_1.iter().zip(returns_2).zip(preferences) {
        if scalarize(pref, r1)? > scalarize(pref, r2)? {
            wins += 1;
        }
    }
    Ok(wins as f64 / preferences.len() as f64)
}

/// The 19-vector two-objective evaluation grid
/// `[0.05, 0.95], [0.10, 0.90], ..., [0.95, 0.05]`.
pub fn preference_grid_19() -> Vec<Preference> {
    (1..=19)
        .map(|i| {
            let w = i as f64 * 0.05;
            Preference::new(vec![w, 1.0 - w]).expect("valid grid entry")
        })
        .collect()
}

/// Default metric preference set: the 19-grid for two objectives, otherwise
/// 100 uniform simplex samples drawn with [`METRIC_SEED`].
pub fn default_preference_set(d: usize) -> Vec<Preference> {
    if d == 2 {
        preference_grid_19()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(METRIC_SEED);
        (0..100).map(|_| uniform_simplex_sample(&mut rng, d)).collect()
    }
}

/// Serializable metric result for run artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_point: Option<Vec<f64>>,
    pub preference_set_id: String,
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn set(points: &[&[f64]]) -> ReturnSet {
        ReturnSet::from_vectors(points.iter().map(|p| RewardVector::new(p.to_vec())).collect())
    }

    #[test]
    fn hypervolume_unit_square() {
        let hv = hypervolume(&set(&[&[1.0, 1.0]]), &ReferencePoint(vec![0.0, 0.0]));
        assert_eq!(hv.value, 1.0);
        assert_eq!(hv.method, HvMethod::Sweep2d);
    }

    #[test]
    fn hypervolume_rectangle_union() {
        let hv = hypervolume(&set(&[&[2.0, 1.0], &[1.0, 2.0]]), &ReferencePoint(vec![0.0, 0.0]));
        assert!((hv.value - 3.0).abs() < 1e-12);
    }

    #[test]
    fn hypervolume_empty_or_dominated_is_zero() {
        let r = ReferencePoint(vec![0.0, 0.0]);
        assert_eq!(hypervolume(&set(&[]), &r).value, 0.0);
        assert_eq!(hypervolume(&set(&[&[-1.0, 5.0]]), &r).value, 0.0);
    }

    #[test]
    fn sweep_matches_inclusion_exclusion_2d() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = ReferencePoint(vec![0.0, 0.0]);
        for _ in 0..50 {
            let n = rng.gen_range(1..10);
            let pts: Vec<Vec<f64>> = (0..n)
                .map(|_| vec![rng.gen_range(-0.5..3.0), rng.gen_range(-0.5..3.0)])
                .collect();
            let s = ReturnSet::from_vectors(pts.into_iter().map(RewardVector::new).collect());
            let a = hypervolume_sweep_2d(&s, &r);
            let b = hypervolume_inclusion_exclusion(&s, &r);
            assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn exact_3d_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = ReferencePoint(vec![0.0, 0.0, 0.0]);
        let pts: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..3).map(|_| rng.gen_range(0.1..2.0)).collect())
            .collect();
        let s = ReturnSet::from_vectors(pts.into_iter().map(RewardVector::new).collect());
        let exact = hypervolume(&s, &r);
        assert_eq!(exact.method, HvMethod::InclusionExclusion);
        let mut mc_rng = ChaCha8Rng::seed_from_u64(3);
        let (mc, se) = hypervolume_monte_carlo(&s, &r, 1_000_000, &mut mc_rng);
        assert!((exact.value - mc).abs() <= 3.0 * se, "exact {} mc {mc} se {se}", exact.value);
    }

    #[test]
    fn hypervolume_monotone_and_dominated_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = ReferencePoint(vec![0.0, 0.0]);
        for _ in 0..50 {
            let n = rng.gen_range(1..8);
            let pts: Vec<Vec<f64>> =
                (0..n).map(|_| vec![rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0)]).collect();
            let s =
                ReturnSet::from_vectors(pts.clone().into_iter().map(RewardVector::new).collect());
            let base = hypervolume_sweep_2d(&s, &r);
            // Adding any point never decreases the volume.
            let extra = vec![rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0)];
            let mut grown = pts.clone();
            grown.push(extra.clone());
            let s2 = ReturnSet::from_vectors(grown.into_iter().map(RewardVector::new).collect());
            let bigger = hypervolume_sweep_2d(&s2, &r);
            assert!(bigger + 1e-12 >= base);
            // A dominated point leaves it exactly unchanged.
            let dominated = vec![pts[0][0] - 0.5, pts[0][1] - 0.5];
            let mut same = pts.clone();
            same.push(dominated);
            let s3 = ReturnSet::from_vectors(same.into_iter().map(RewardVector::new).collect());
            assert!((hypervolume_sweep_2d(&s3, &r) - base).abs() <= 1e-12);
            // Filtering never changes the volume.
            let filtered = pareto_filter(&s);
            assert!((hypervolume_sweep_2d(&filtered, &r) - base).abs() <= 1e-12);
        }
    }

    #[test]
    fn utility_constant_returns() {
        let prefs = preference_grid_19();
        let ut = utility(|_| RewardVector::new(vec![1.0, 1.0]), &prefs).unwrap();
        assert!((ut - 1.0).abs() < 1e-12);
    }

    #[test]
    fn utility_basis_payoff_scales_with_mean_weight() {
        let prefs = preference_grid_19();
        let c = 4.0;
        let ut = utility(|_| RewardVector::new(vec![c, 0.0]), &prefs).unwrap();
        let mean_w0: f64 = prefs.iter().map(|p| p.weights()[0]).sum::<f64>() / prefs.len() as f64;
        assert!((ut - c * mean_w0).abs() < 1e-12);
        // On this symmetric grid the mean first weight is exactly one half.
        assert!((mean_w0 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn utility_rejects_empty_preferences() {
        assert!(matches!(
            utility(|_| RewardVector::new(vec![1.0]), &[]),
            Err(MetricsError::EmptyPreferenceSet)
        ));
    }

    #[test]
    fn utility_scales_linearly_in_returns() {
        let prefs = default_preference_set(3);
        let returns: Vec<RewardVector> = (0..prefs.len())
            .map(|i| RewardVector::new(vec![i as f64, 1.0, -0.5 * i as f64]))
            .collect();
        let mut i = 0;
        let base = utility(
            |_| {
                let r = returns[i].clone();
                i += 1;
                r
            },
            &prefs,
        )
        .unwrap();
        let c = 2.5;
        let mut j = 0;
        let scaled = utility(
            |_| {
                let r = RewardVector::new(returns[j].values.iter().map(|x| c * x).collect());
                j += 1;
                r
            },
            &prefs,
        )
        .unwrap();
        assert!((scaled - c * base).abs() <= 1e-12 * (1.0 + (base * c).abs()));
    }

    #[test]
    fn dominance_identical_streams_is_zero() {
        let prefs = preference_grid_19();
        let rs: Vec<RewardVector> =
            prefs.iter().map(|_| RewardVector::new(vec![1.0, 2.0])).collect();
        let ed = episodic_dominance(&rs, &rs, &prefs).unwrap();
        assert_eq!(ed, 0.0);
    }

    #[test]
    fn dominance_of_componentwise_better_stream_is_one() {
        let prefs = preference_grid_19();
        let good: Vec<RewardVector> =
            prefs.iter().map(|_| RewardVector::new(vec![2.0, 3.0])).collect();
        let bad: Vec<RewardVector> =
            prefs.iter().map(|_| RewardVector::new(vec![1.0, 2.0])).collect();
        assert_eq!(episodic_dominance(&good, &bad, &prefs).unwrap(), 1.0);
        assert_eq!(episodic_dominance(&bad, &good, &prefs).unwrap(), 0.0);
    }

    #[test]
    fn dominance_directions_sum_to_at_most_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let prefs = preference_grid_19();
        for _ in 0..20 {
            let a: Vec<RewardVector> = prefs
                .iter()
                .map(|_| {
                    RewardVector::new(vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)])
                })
                .collect();
            let b: Vec<RewardVector> = prefs
                .iter()
                .map(|_| {
                    RewardVector::new(vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)])
                })
                .collect();
            let e12 = episodic_dominance(&a, &b, &prefs).unwrap();
            let e21 = episodic_dominance(&b, &a, &prefs).unwrap();
            let ties = prefs
                .iter()
                .zip(a.iter().zip(&b))
                .filter(|(p, (x, y))| scalarize(p, x).unwrap() == scalarize(p, y).unwrap())
                .count();
            assert!(e12 + e21 <= 1.0 + 1e-12);
            let total = e12 + e21 + ties as f64 / prefs.len() as f64;
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dominance_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let prefs = preference_grid_19();
        let a: Vec<RewardVector> = prefs
            .iter()
            .map(|_| RewardVector::new(vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]))
            .collect();
        let b: Vec<RewardVector> = prefs
            .iter()
            .map(|_| RewardVector::new(vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]))
            .collect();
        let scale = |rs: &[RewardVector], c: f64| -> Vec<RewardVector> {
            rs.iter()
                .map(|r| RewardVector::new(r.values.iter().map(|x| c * x).collect()))
                .collect()
        };
        let base = episodic_dominance(&a, &b, &prefs).unwrap();
        let scaled = episodic_dominance(&scale(&a, 3.0), &scale(&b, 3.0), &prefs).unwrap();
        assert_eq!(base, scaled);
    }

    #[test]
    fn pareto_filter_examples() {
        let s = set(&[&[1.0, 2.0], &[2.0, 1.0], &[0.0, 0.0]]);
        let f = pareto_filter(&s);
        assert_eq!(f.len(), 2);
        assert_eq!(f.points[0].value.values, vec![1.0, 2.0]);
        assert_eq!(f.points[1].value.values, vec![2.0, 1.0]);
        let single = set(&[&[5.0, -1.0]]);
        assert_eq!(pareto_filter(&single), single);
    }

    #[test]
    fn pareto_filter_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Vec<f64>> =
            (0..100).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let s = ReturnSet::from_vectors(pts.clone().into_iter().map(RewardVector::new).collect());
        let filtered = pareto_filter(&s);
        // O(n^2) reference: point i survives iff nothing dominates it.
        let mut expected = Vec::new();
        for (i, p) in pts.iter().enumerate() {
            let mut dominated = false;
            for (j, q) in pts.iter().enumerate() {
                if i != j {
                    let ge = q.iter().zip(p).all(|(a, b)| a >= b);
                    let strict = q.iter().zip(p).any(|(a, b)| a > b);
                    if ge && strict {
                        dominated = true;
                        break;
                    }
                }
            }
            if !dominated {
                expected.push(p.clone());
            }
        }
        let got: Vec<Vec<f64>> = filtered.points.iter().map(|p| p.value.values.clone()).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn nineteen_grid_shape() {
        let g = preference_grid_19();
        assert_eq!(g.len(), 19);
        assert!((g[0].weights()[0] - 0.05).abs() < 1e-12);
        assert!((g[18].weights()[0] - 0.95).abs() < 1e-12);
        assert_eq!(default_preference_set(3).len(), 100);
    }

    #[test]
    fn metric_report_serialization() {
        let report = MetricReport {
            metric: "hypervolume".into(),
            value: 3.25,
            std_error: None,
            reference_point: Some(vec![0.0, -100.0]),
            preference_set_id: "grid19".into(),
            seed: 7,
        };
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"metric\":\"hypervolume\""));
        assert!(!json.contains("std_error"));
        let back: MetricReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }
}
