//! Mode dispatch: tabular planning runs, seeded training runs, checkpoint
//! evaluation, and the paired-seed ablation.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use qpensieve_core::agent::{self, AgentState, CurveRecord};
use qpensieve_core::envs::{ContinuousDST, Environment};
use qpensieve_core::metrics::{
    episodic_dominance, hypervolume, pareto_filter, utility, MetricReport, ReferencePoint,
    ReturnPoint, ReturnSet,
};
use qpensieve_core::momdp::{random_momdp, scalarize, Preference, RewardVector, TabularMOMDP};
use qpensieve_core::planner::{q_pensieve_policy_iteration, scalarized_soft_vi, PlannerOutput};
use qpensieve_core::seeding::{stream, SeedSplitter};

use crate::config::{EnvironmentConfig, ExperimentConfig, Mode};
use crate::records::{
    collect_artifacts, run_dir_for_seed, CheckpointManifest, RunRecord, sha256_file,
};
use crate::HarnessError;

/// Index for the final-evaluation RNG substream, distinct from the
/// in-training curve evaluations.
const FINAL_EVAL_SUBSTREAM: u64 = u32::MAX as u64;

#[derive(Debug, Clone)]
pub struct RunRequest {
    pub mode: Mode,
    pub config: ExperimentConfig,
    pub out_dir: PathBuf,
    /// Checkpoint directory (evaluate mode).
    pub checkpoint: Option<PathBuf>,
    /// Baseline checkpoint directory for dominance comparison.
    pub baseline: Option<PathBuf>,
}

pub fn run(req: &RunRequest) -> Result<Vec<RunRecord>, HarnessError> {
    req.config.validate(req.mode)?;
    fs::create_dir_all(&req.out_dir)?;
    match req.mode {
        Mode::TabularPlan => run_tabular_plan(req),
        Mode::AgentTrain => run_agent_train(req),
        Mode::Evaluate => run_evaluate(req),
        Mode::Ablate => run_ablate(req),
    }
}

fn write_config_copy(config: &ExperimentConfig, dir: &Path) -> Result<(), HarnessError> {
    let json = serde_json::to_string_pretty(config)
        .map_err(|e| HarnessError::config(format!("config serialization: {e}")))?;
    fs::write(dir.join("config.json"), json)?;
    Ok(())
}

fn build_momdp(config: &ExperimentConfig) -> Result<TabularMOMDP, HarnessError> {
    match &config.environment {
        EnvironmentConfig::RandomMomdp { seed, n_states, n_actions, d, gamma } => {
            random_momdp(*seed, *n_states, *n_actions, *d, *gamma)
                .map_err(|e| HarnessError::config(format!("environment: {e}")))
        }
        _ => Err(HarnessError::config("tabular planning requires random-momdp".into())),
    }
}

fn build_continuous_env(config: &ExperimentConfig) -> Result<ContinuousDST, HarnessError> {
    match &config.environment {
        EnvironmentConfig::ContinuousDst { config: env } => ContinuousDST::new(env.clone())
            .map_err(|e| HarnessError::config(format!("environment: {e}"))),
        _ => Err(HarnessError::config("this mode requires the continuous environment".into())),
    }
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct EquivalenceReport {
    per_pref_gap: Vec<f64>,
    max_gap: f64,
    iterations: usize,
}

fn run_tabular_plan(req: &RunRequest) -> Result<Vec<RunRecord>, HarnessError> {
    let config = &req.config;
    let t0 = Instant::now();
    let seed = config.seeds[0];
    let run_dir = run_dir_for_seed(&req.out_dir, seed);
    fs::create_dir_all(&run_dir)?;
    write_config_copy(config, &run_dir)?;

    let momdp = build_momdp(config)?;
    let grid = config.planner.grid.build(momdp.d)?;
    let params = config.planner.to_params();
    let output: PlannerOutput = q_pensieve_policy_iteration(&momdp, &grid, &params)?;

    // Independent optimality check per grid preference.
    let oracle_tol = (params.outer_tol * 1e-3).max(1e-13);
    let mut per_pref_gap = Vec::with_capacity(grid.len());
    for (i, pref) in grid.iter().enumerate() {
        let oracle = scalarized_soft_vi(&momdp, pref, params.alpha, oracle_tol, params.eval_max_iter)?;
        let slice = &output.q.slices[i];
        let mut gap: f64 = 0.0;
        for s in 0..momdp.n_states {
            for a in 0..momdp.n_actions {
                let v = scalarize(pref, &RewardVector::new(slice.at(s, a).to_vec()))
                    .map_err(|e| HarnessError::config(e.to_string()))?;
                gap = gap.max((v - oracle.at(s, a)).abs());
            }
        }
        per_pref_gap.push(gap);
    }
    let max_gap = per_pref_gap.iter().copied().fold(0.0, f64::max);
    let report = EquivalenceReport { per_pref_gap, max_gap, iterations: output.diagnostics.iterations };

    fs::write(
        run_dir.join("planner_result.json"),
        serde_json::to_string(&output)
            .map_err(|e| HarnessError::config(format!("planner serialization: {e}")))?,
    )?;
    let mut diag_csv = Vec::new();
    output.diagnostics.write_csv(&mut diag_csv)?;
    fs::write(run_dir.join("diagnostics.csv"), diag_csv)?;
    fs::write(
        run_dir.join("equivalence_report.json"),
        serde_json::to_string_pretty(&report)
            .map_err(|e| HarnessError::config(format!("report serialization: {e}")))?,
    )?;

    let record = RunRecord {
        mode: Mode::TabularPlan,
        config_hash: config.hash(),
        seed,
        metrics: vec![MetricReport {
            metric: "max_oracle_gap".into(),
            value: max_gap,
            std_error: None,
            reference_point: None,
            preference_set_id: "planner-grid".into(),
            seed,
        }],
        artifacts: collect_artifacts(
            &run_dir,
            &["config.json", "planner_result.json", "diagnostics.csv", "equivalence_report.json"],
        )?,
        wall_clock_seconds: t0.elapsed().as_secs_f64(),
    };
    record.save(&run_dir)?;
    Ok(vec![record])
}

/// Per-preference mean undiscounted returns of a policy.
fn rollout_returns(
    env: &ContinuousDST,
    agent: &AgentState,
    prefs: &[Preference],
    episodes: usize,
    deterministic: bool,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Vec<RewardVector>, HarnessError> {
    prefs
        .iter()
        .map(|p| {
            agent::evaluate_policy(env, agent, p, episodes, deterministic, rng)
                .map_err(HarnessError::from)
        })
        .collect()
}

/// Hypervolume reference point: componentwise minimum observed return
/// minus one.
fn reference_below(returns: &[RewardVector]) -> ReferencePoint {
    let d = returns[0].dim();
    let mut lo = vec![f64::INFINITY; d];
    for r in returns {
        for k in 0..d {
            lo[k] = lo[k].min(r.values[k]);
        }
    }
    ReferencePoint(lo.into_iter().map(|x| x - 1.0).collect())
}

fn labelled_set(prefs: &[Preference], returns: &[RewardVector], seed: u64) -> ReturnSet {
    ReturnSet {
        points: prefs
            .iter()
            .zip(returns)
            .map(|(p, r)| ReturnPoint {
                value: r.clone(),
                preference: Some(p.clone()),
                seed: Some(seed),
            })
            .collect(),
    }
}

fn write_front_csv(front: &ReturnSet, d: usize, path: &Path) -> Result<(), HarnessError> {
    let mut out = Vec::new();
    let pref_cols: Vec<String> = (0..d).map(|i| format!("pref_{i}")).collect();
    let ret_cols: Vec<String> = (0..d).map(|i| format!("ret_{i}")).collect();
    writeln!(out, "{},{},seed", pref_cols.join(","), ret_cols.join(","))?;
    for p in &front.points {
        let pref = p
            .preference
            .as_ref()
            .map(|x| x.weights().iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","))
            .unwrap_or_else(|| vec!["".to_string(); d].join(","));
        let ret: Vec<String> = p.value.values.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{},{},{}", pref, ret.join(","), p.seed.map_or(String::new(), |s| s.to_string()))?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Computes the standard metric bundle from labelled per-preference
/// returns and writes `front.csv` + `metrics.json`.
fn metric_bundle(
    run_dir: &Path,
    prefs: &[Preference],
    returns: &[RewardVector],
    pref_set_id: &str,
    seed: u64,
    baseline_returns: Option<&[RewardVector]>,
) -> Result<Vec<MetricReport>, HarnessError> {
    let d = returns[0].dim();
    let set = labelled_set(prefs, returns, seed);
    let front = pareto_filter(&set);
    write_front_csv(&front, d, &run_dir.join("front.csv"))?;

    let reference = reference_below(returns);
    let hv = hypervolume(&set, &reference);
    let mut lookup = returns.iter();
    let ut = utility(|_| lookup.next().expect("aligned").clone(), prefs)?;
    let mut metrics = vec![
        MetricReport {
            metric: "hypervolume".into(),
            value: hv.value,
            std_error: hv.std_error,
            reference_point: Some(reference.0.clone()),
            preference_set_id: pref_set_id.into(),
            seed,
        },
        MetricReport {
            metric: "utility".into(),
            value: ut,
            std_error: None,
            reference_point: None,
            preference_set_id: pref_set_id.into(),
            seed,
        },
    ];
    if let Some(base) = baseline_returns {
        let ed = episodic_dominance(returns, base, prefs)?;
        metrics.push(MetricReport {
            metric: "episodic_dominance_vs_baseline".into(),
            value: ed,
            std_error: None,
            reference_point: None,
            preference_set_id: pref_set_id.into(),
            seed,
        });
    }
    fs::write(
        run_dir.join("metrics.json"),
        serde_json::to_string_pretty(&metrics)
            .map_err(|e| HarnessError::config(format!("metrics serialization: {e}")))?,
    )?;
    Ok(metrics)
}

fn save_checkpoint(
    run_dir: &Path,
    agent: &AgentState,
    config_hash: &str,
    seed: u64,
    env_step: u64,
    rng_states: Vec<(String, qpensieve_core::seeding::RngState)>,
) -> Result<(), HarnessError> {
    let mut bytes = Vec::new();
    agent.write_networks(&mut bytes)?;
    fs::write(run_dir.join("checkpoint.bin"), bytes)?;
    CheckpointManifest {
        config_hash: config_hash.to_string(),
        seed,
        env_step,
        gradient_step: agent.gradient_step,
        obs_dim: agent.obs_dim,
        action_dim: agent.action_dim,
        rng_states,
    }
    .save(&run_dir.join("checkpoint_manifest.json"))?;
    Ok(())
}

/// One seeded training run; returns the record plus the final
/// per-preference mean returns for downstream comparison.
fn run_one_training(
    config: &ExperimentConfig,
    out_dir: &Path,
    seed: u64,
) -> Result<(RunRecord, Vec<Preference>, Vec<RewardVector>), HarnessError> {
    let t0 = Instant::now();
    let run_dir = run_dir_for_seed(out_dir, seed);
    fs::create_dir_all(&run_dir)?;
    write_config_copy(config, &run_dir)?;
    let config_hash = config.hash();

    let env = build_continuous_env(config)?;
    let d = env.spec().d;
    let agent_config = config.algorithm.to_agent_config(d, &config.evaluation);
    let splitter = SeedSplitter::new(seed);

    let run_dir_hook = run_dir.clone();
    let hash_hook = config_hash.clone();
    let output = agent::train(&env, &agent_config, splitter, |agent, _records| {
        // Rolling checkpoint so an interrupted run still leaves a loadable
        // agent; the final write below adds the RNG states.
        save_checkpoint(&run_dir_hook, agent, &hash_hook, seed, 0, vec![])
            .map_err(|e| qpensieve_core::agent::AgentError::InvalidConfig(e.to_string()))?;
        Ok(())
    })?;

    let mut curve_csv = Vec::new();
    agent::write_curve_csv(&output.curve, d, &mut curve_csv)?;
    fs::write(run_dir.join("learning_curve.csv"), curve_csv)?;
    save_checkpoint(
        &run_dir,
        &output.agent,
        &config_hash,
        seed,
        output.env_steps,
        output.rng_states.clone(),
    )?;

    // Final evaluation on the metric preference set.
    let prefs = config.evaluation.preference_set.build(d)?;
    let mut eval_rng = splitter.substream(stream::EVAL, FINAL_EVAL_SUBSTREAM);
    let returns = rollout_returns(
        &env,
        &output.agent,
        &prefs,
        config.evaluation.episodes_per_pref,
        config.evaluation.deterministic,
        &mut eval_rng,
    )?;
    let metrics = metric_bundle(
        &run_dir,
        &prefs,
        &returns,
        &config.evaluation.preference_set.id(),
        seed,
        None,
    )?;

    let record = RunRecord {
        mode: Mode::AgentTrain,
        config_hash,
        seed,
        metrics,
        artifacts: collect_artifacts(
            &run_dir,
            &[
                "config.json",
                "learning_curve.csv",
                "checkpoint.bin",
                "checkpoint_manifest.json",
                "front.csv",
                "metrics.json",
            ],
        )?,
        wall_clock_seconds: t0.elapsed().as_secs_f64(),
    };
    record.save(&run_dir)?;
    Ok((record, prefs, returns))
}

fn run_agent_train(req: &RunRequest) -> Result<Vec<RunRecord>, HarnessError> {
    let results: Vec<Result<RunRecord, HarnessError>> = req
        .config
        .seeds
        .par_iter()
        .map(|&seed| run_one_training(&req.config, &req.out_dir, seed).map(|(r, _, _)| r))
        .collect();
    results.into_iter().collect()
}

fn load_checkpoint_agent(
    config: &ExperimentConfig,
    dir: &Path,
) -> Result<(AgentState, CheckpointManifest), HarnessError> {
    let manifest = CheckpointManifest::load(&dir.join("checkpoint_manifest.json"))?;
    let d = config.objective_count();
    let agent_config = config.algorithm.to_agent_config(d, &config.evaluation);
    let bytes = fs::read(dir.join("checkpoint.bin"))?;
    let agent = AgentState::from_networks(
        agent_config,
        manifest.obs_dim,
        manifest.action_dim,
        manifest.gradient_step,
        bytes.as_slice(),
    )?;
    Ok((agent, manifest))
}

fn run_evaluate(req: &RunRequest) -> Result<Vec<RunRecord>, HarnessError> {
    let t0 = Instant::now();
    let config = &req.config;
    let checkpoint = req
        .checkpoint
        .as_ref()
        .ok_or_else(|| HarnessError::config("evaluate requires --checkpoint".into()))?;
    let seed = config.seeds[0];
    let run_dir = run_dir_for_seed(&req.out_dir, seed);
    fs::create_dir_all(&run_dir)?;
    write_config_copy(config, &run_dir)?;

    let env = build_continuous_env(config)?;
    let d = env.spec().d;
    let (agent, _manifest) = load_checkpoint_agent(config, checkpoint)?;
    let prefs = config.evaluation.preference_set.build(d)?;
    let splitter = SeedSplitter::new(seed);
    let mut eval_rng = splitter.substream(stream::EVAL, 0);
    let returns = rollout_returns(
        &env,
        &agent,
        &prefs,
        config.evaluation.episodes_per_pref,
        config.evaluation.deterministic,
        &mut eval_rng,
    )?;

    let baseline_returns = match &req.baseline {
        Some(base_dir) => {
            let (base_agent, _) = load_checkpoint_agent(config, base_dir)?;
            let mut base_rng = splitter.substream(stream::EVAL, 1);
            Some(rollout_returns(
                &env,
                &base_agent,
                &prefs,
                config.evaluation.episodes_per_pref,
                config.evaluation.deterministic,
                &mut base_rng,
            )?)
        }
        None => None,
    };

    let metrics = metric_bundle(
        &run_dir,
        &prefs,
        &returns,
        &config.evaluation.preference_set.id(),
        seed,
        baseline_returns.as_deref(),
    )?;
    let record = RunRecord {
        mode: Mode::Evaluate,
        config_hash: config.hash(),
        seed,
        metrics,
        artifacts: collect_artifacts(&run_dir, &["config.json", "front.csv", "metrics.json"])?,
        wall_clock_seconds: t0.elapsed().as_secs_f64(),
    };
    record.save(&run_dir)?;
    Ok(vec![record])
}

/// Per-seed ablation outcome.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SeedComparison {
    pub seed: u64,
    pub utility_pensieve: f64,
    pub utility_vanilla: f64,
    pub dominance_pensieve_over_vanilla: f64,
    pub dominance_vanilla_over_pensieve: f64,
}

/// Aggregate ablation report across paired seeds.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ComparisonReport {
    pub seeds: Vec<SeedComparison>,
    pub median_utility_pensieve: f64,
    pub median_utility_vanilla: f64,
    pub mean_dominance_pensieve_over_vanilla: f64,
}

fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn run_ablate(req: &RunRequest) -> Result<Vec<RunRecord>, HarnessError> {
    let config = &req.config;
    let pensieve_dir = req.out_dir.join("pensieve");
    let vanilla_dir = req.out_dir.join("vanilla");
    fs::create_dir_all(&pensieve_dir)?;
    fs::create_dir_all(&vanilla_dir)?;

    let mut vanilla_config = config.clone();
    vanilla_config.algorithm = config.algorithm.vanilla();

    // Paired seeds: both arms reuse the same master seed, so environment,
    // initialization, replay and evaluation streams coincide.
    type ArmOutcome = (RunRecord, Vec<Preference>, Vec<RewardVector>);
    let outcomes: Vec<Result<(ArmOutcome, ArmOutcome), HarnessError>> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let p = run_one_training(config, &pensieve_dir, seed)?;
            let v = run_one_training(&vanilla_config, &vanilla_dir, seed)?;
            Ok((p, v))
        })
        .collect();

    let mut records = Vec::new();
    let mut seed_reports = Vec::new();
    let mut pref_axis: Option<Vec<Preference>> = None;
    let mut delta_acc: Vec<f64> = Vec::new();
    let mut pens_acc: Vec<f64> = Vec::new();
    let mut van_acc: Vec<f64> = Vec::new();

    for outcome in outcomes {
        let ((p_rec, prefs, p_ret), (v_rec, _, v_ret)) = outcome?;
        let seed = p_rec.seed;
        let ed_pv = episodic_dominance(&p_ret, &v_ret, &prefs)?;
        let ed_vp = episodic_dominance(&v_ret, &p_ret, &prefs)?;
        let mut p_lookup = p_ret.iter();
        let ut_p = utility(|_| p_lookup.next().expect("aligned").clone(), &prefs)?;
        let mut v_lookup = v_ret.iter();
        let ut_v = utility(|_| v_lookup.next().expect("aligned").clone(), &prefs)?;
        if pref_axis.is_none() {
            pref_axis = Some(prefs.clone());
            delta_acc = vec![0.0; prefs.len()];
            pens_acc = vec![0.0; prefs.len()];
            van_acc = vec![0.0; prefs.len()];
        }
        for (i, pref) in prefs.iter().enumerate() {
            let sp = scalarize(pref, &p_ret[i]).map_err(|e| HarnessError::config(e.to_string()))?;
            let sv = scalarize(pref, &v_ret[i]).map_err(|e| HarnessError::config(e.to_string()))?;
            delta_acc[i] += sp - sv;
            pens_acc[i] += sp;
            van_acc[i] += sv;
        }
        seed_reports.push(SeedComparison {
            seed,
            utility_pensieve: ut_p,
            utility_vanilla: ut_v,
            dominance_pensieve_over_vanilla: ed_pv,
            dominance_vanilla_over_pensieve: ed_vp,
        });
        records.push(p_rec);
        records.push(v_rec);
    }

    let n = seed_reports.len() as f64;
    let report = ComparisonReport {
        median_utility_pensieve: median(
            &mut seed_reports.iter().map(|s| s.utility_pensieve).collect(),
        ),
        median_utility_vanilla: median(
            &mut seed_reports.iter().map(|s| s.utility_vanilla).collect(),
        ),
        mean_dominance_pensieve_over_vanilla: seed_reports
            .iter()
            .map(|s| s.dominance_pensieve_over_vanilla)
            .sum::<f64>()
            / n,
        seeds: seed_reports,
    };
    fs::write(
        req.out_dir.join("comparison.json"),
        serde_json::to_string_pretty(&report)
            .map_err(|e| HarnessError::config(format!("report serialization: {e}")))?,
    )?;

    let prefs = pref_axis.expect("at least one seed");
    let d = prefs[0].dim();
    let mut csv = Vec::new();
    let cols: Vec<String> = (0..d).map(|i| format!("pref_{i}")).collect();
    writeln!(csv, "{},mean_return_pensieve,mean_return_vanilla,mean_delta", cols.join(","))?;
    for (i, pref) in prefs.iter().enumerate() {
        let w: Vec<String> = pref.weights().iter().map(|x| x.to_string()).collect();
        writeln!(
            csv,
            "{},{},{},{}",
            w.join(","),
            pens_acc[i] / n,
            van_acc[i] / n,
            delta_acc[i] / n
        )?;
    }
    fs::write(req.out_dir.join("per_pref_delta.csv"), csv)?;
    Ok(records)
}

/// Reads an ablation comparison back; used by tests and reporting.
pub fn load_comparison(out_dir: &Path) -> Result<ComparisonReport, HarnessError> {
    let text = fs::read_to_string(out_dir.join("comparison.json"))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::config(format!("comparison parse: {e}")))
}

/// Re-reads a front CSV and recomputes its hypervolume; lets tests confirm
/// the reported value matches the artifact.
pub fn hypervolume_from_front_csv(
    path: &Path,
    reference: &ReferencePoint,
) -> Result<f64, HarnessError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| {
        HarnessError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, "empty front CSV"))
    })?;
    let ret_cols: Vec<usize> = header
        .split(',')
        .enumerate()
        .filter(|(_, name)| name.starts_with("ret_"))
        .map(|(i, _)| i)
        .collect();
    let mut points = Vec::new();
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        let values: Vec<f64> = ret_cols
            .iter()
            .map(|&i| fields[i].parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| {
                HarnessError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e))
            })?;
        points.push(RewardVector::new(values));
    }
    Ok(hypervolume(&ReturnSet::from_vectors(points), reference).value)
}

/// Reads the learning-curve records back from a run directory.
pub fn load_curve(run_dir: &Path) -> Result<Vec<CurveRecord>, HarnessError> {
    let text = fs::read_to_string(run_dir.join("learning_curve.csv"))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let d = header.split(',').filter(|c| c.starts_with("pref_")).count();
    let mut records = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let parse = |s: &str| -> Result<f64, HarnessError> {
            s.parse::<f64>().map_err(|e| {
                HarnessError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e))
            })
        };
        let weights: Vec<f64> = f[1..1 + d].iter().map(|s| parse(s)).collect::<Result<_, _>>()?;
        records.push(CurveRecord {
            env_step: f[0].parse().map_err(|e: std::num::ParseIntError| {
                HarnessError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e))
            })?,
            preference: Preference::new(weights)
                .map_err(|e| HarnessError::config(e.to_string()))?,
            scalarized_return: parse(f[1 + d])?,
            critic_loss: parse(f[2 + d])?,
            actor_loss: parse(f[3 + d])?,
        });
    }
    Ok(records)
}

/// Byte checksum of a run's learning curve, for reproducibility checks.
pub fn curve_checksum(run_dir: &Path) -> Result<String, HarnessError> {
    sha256_file(&run_dir.join("learning_curve.csv"))
}
