//! Experiment configuration: environment selection, algorithm and planner
//! hyperparameters, seeding, evaluation protocol, and the `--override`
//! mechanism. Defaults reproduce the reference hyperparameter table
//! exactly and are pinned by a snapshot test.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use qpensieve_core::agent::AgentConfig;
use qpensieve_core::envs::ContinuousDstConfig;
use qpensieve_core::momdp::{Preference, PreferenceGrid};
use qpensieve_core::planner::PlannerParams;

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    TabularPlan,
    AgentTrain,
    Evaluate,
    Ablate,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Mode::TabularPlan => "tabular-plan",
            Mode::AgentTrain => "agent-train",
            Mode::Evaluate => "evaluate",
            Mode::Ablate => "ablate",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "kebab-case")]
pub enum EnvironmentConfig {
    ContinuousDst {
        #[serde(default)]
        config: ContinuousDstConfig,
    },
    RandomMomdp {
        seed: u64,
        n_states: usize,
        n_actions: usize,
        d: usize,
        gamma: f64,
    },
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        EnvironmentConfig::ContinuousDst { config: ContinuousDstConfig::default() }
    }
}

/// Agent hyperparameters, named after the reference table. `hidden_layers`
/// and `hidden_units` expand to a uniform stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub optimizer: String,
    pub learning_rate: f64,
    pub discount_factor: f64,
    pub replay_buffer_size: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub minibatch_size: usize,
    pub nonlinearity: String,
    pub target_smoothing_coefficient: f64,
    pub target_update_interval: u64,
    pub gradient_steps: u64,
    pub alpha: f64,
    pub n_lambda: usize,
    pub q_snapshot_capacity: usize,
    pub q_snapshot_cadence: u64,
    pub warmup_steps: u64,
    pub total_env_steps: u64,
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        Self {
            optimizer: "adam".into(),
            learning_rate: 0.0003,
            discount_factor: 0.99,
            replay_buffer_size: 1_000_000,
            hidden_layers: 2,
            hidden_units: 256,
            minibatch_size: 256,
            nonlinearity: "relu".into(),
            target_smoothing_coefficient: 0.005,
            target_update_interval: 1,
            gradient_steps: 1,
            alpha: 0.2,
            n_lambda: 5,
            q_snapshot_capacity: 4,
            q_snapshot_cadence: 1000,
            warmup_steps: 1000,
            total_env_steps: 100_000,
        }
    }
}

impl AlgorithmConfig {
    pub fn to_agent_config(&self, d: usize, evaluation: &EvaluationConfig) -> AgentConfig {
        AgentConfig {
            d,
            hidden: vec![self.hidden_units; self.hidden_layers],
            learning_rate: self.learning_rate,
            gamma: self.discount_factor,
            alpha: self.alpha,
            tau: self.target_smoothing_coefficient,
            replay_capacity: self.replay_buffer_size,
            batch_size: self.minibatch_size,
            n_lambda: self.n_lambda,
            snapshot_capacity: self.q_snapshot_capacity,
            snapshot_cadence: self.q_snapshot_cadence,
            target_update_interval: self.target_update_interval,
            gradient_steps_per_env_step: self.gradient_steps,
            warmup_steps: self.warmup_steps,
            total_env_steps: self.total_env_steps,
            eval_cadence: evaluation.cadence,
            curve_episodes_per_pref: evaluation.curve_episodes_per_pref,
            deterministic_eval: evaluation.deterministic,
        }
    }

    /// The degenerate single-preference, no-snapshot configuration used as
    /// the ablation baseline.
    pub fn vanilla(&self) -> Self {
        Self { n_lambda: 1, q_snapshot_capacity: 0, ..self.clone() }
    }
}

/// Which preference set metrics are computed on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PreferenceSetSpec {
    /// The fixed 19-vector grid (two objectives).
    Grid19,
    /// `count` uniform simplex samples with the given seed.
    Uniform { count: usize, seed: u64 },
    /// Dimension-driven default: the 19-grid for d = 2, 100 seeded uniform
    /// samples otherwise.
    Default,
}

impl PreferenceSetSpec {
    pub fn id(&self) -> String {
        match self {
            PreferenceSetSpec::Grid19 => "grid19".into(),
            PreferenceSetSpec::Uniform { count, seed } => format!("uniform{count}-seed{seed}"),
            PreferenceSetSpec::Default => "default".into(),
        }
    }

    pub fn build(&self, d: usize) -> Result<Vec<Preference>, HarnessError> {
        use qpensieve_core::momdp::uniform_simplex_sample;
        use rand_chacha::ChaCha8Rng;
        match self {
            PreferenceSetSpec::Grid19 => {
                if d != 2 {
                    return Err(HarnessError::config(format!(
                        "evaluation.preference_set: grid19 requires 2 objectives, got {d}"
                    )));
                }
                Ok(qpensieve_core::metrics::preference_grid_19())
            }
            PreferenceSetSpec::Uniform { count, seed } => {
                use rand::SeedableRng;
                if *count == 0 {
                    return Err(HarnessError::config(
                        "evaluation.preference_set: count must be positive".into(),
                    ));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                Ok((0..*count).map(|_| uniform_simplex_sample(&mut rng, d)).collect())
            }
            PreferenceSetSpec::Default => Ok(qpensieve_core::metrics::default_preference_set(d)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Environment steps between learning-curve evaluations.
    pub cadence: u64,
    /// Episodes per preference for final/standalone evaluation.
    pub episodes_per_pref: usize,
    /// Episodes per preference for in-training curve points.
    pub curve_episodes_per_pref: usize,
    /// Use the deterministic mean action instead of sampling.
    pub deterministic: bool,
    pub preference_set: PreferenceSetSpec,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            cadence: 5000,
            episodes_per_pref: 5,
            curve_episodes_per_pref: 1,
            deterministic: false,
            preference_set: PreferenceSetSpec::Default,
        }
    }
}

/// Preference grid for the tabular planner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GridSpec {
    Even { count: usize },
    Sampled { count: usize, seed: u64 },
    Explicit { preferences: Vec<Vec<f64>> },
}

impl GridSpec {
    pub fn build(&self, d: usize) -> Result<PreferenceGrid, HarnessError> {
        match self {
            GridSpec::Even { count } => {
                if d != 2 {
                    return Err(HarnessError::config(format!(
                        "planner.grid: even spacing requires 2 objectives, got {d}"
                    )));
                }
                PreferenceGrid::even_2d(*count)
                    .map_err(|e| HarnessError::config(format!("planner.grid: {e}")))
            }
            GridSpec::Sampled { count, seed } => {
                use qpensieve_core::momdp::uniform_simplex_sample;
                use rand::SeedableRng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(*seed);
                let prefs = (0..*count).map(|_| uniform_simplex_sample(&mut rng, d)).collect();
                PreferenceGrid::new(prefs)
                    .map_err(|e| HarnessError::config(format!("planner.grid: {e}")))
            }
            GridSpec::Explicit { preferences } => {
                let prefs = preferences
                    .iter()
                    .map(|w| Preference::new(w.clone()))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| HarnessError::config(format!("planner.grid: {e}")))?;
                PreferenceGrid::new(prefs)
                    .map_err(|e| HarnessError::config(format!("planner.grid: {e}")))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub grid: GridSpec,
    pub w_size: usize,
    pub snapshot_capacity: usize,
    pub alpha: f64,
    pub eval_tol: f64,
    pub outer_tol: f64,
    pub eval_max_iter: usize,
    pub max_iter: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::Even { count: 5 },
            w_size: 3,
            snapshot_capacity: 3,
            alpha: 0.1,
            eval_tol: 1e-8,
            outer_tol: 1e-6,
            eval_max_iter: 200_000,
            max_iter: 50_000,
        }
    }
}

impl PlannerConfig {
    pub fn to_params(&self) -> PlannerParams {
        PlannerParams {
            alpha: self.alpha,
            w_size: self.w_size,
            snapshot_capacity: self.snapshot_capacity,
            eval_tol: self.eval_tol,
            outer_tol: self.outer_tol,
            eval_max_iter: self.eval_max_iter,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Option<Mode>,
    pub environment: EnvironmentConfig,
    pub algorithm: AlgorithmConfig,
    pub planner: PlannerConfig,
    pub evaluation: EvaluationConfig,
    pub seeds: Vec<u64>,
    pub out_dir: Option<std::path::PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: None,
            environment: EnvironmentConfig::default(),
            algorithm: AlgorithmConfig::default(),
            planner: PlannerConfig::default(),
            evaluation: EvaluationConfig::default(),
            seeds: vec![0],
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &std::path::Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::config(format!("{}: {e}", path.display())))
    }

    /// Applies a dotted-path override such as
    /// `algorithm.learning_rate=0.001`. The value is parsed as JSON when
    /// possible, otherwise taken as a string.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), HarnessError> {
        let (path, raw) = spec
            .split_once('=')
            .ok_or_else(|| HarnessError::config(format!("override '{spec}' is not key=value")))?;
        if path.is_empty() {
            return Err(HarnessError::config(format!("override '{spec}' has an empty key")));
        }
        let value: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        let mut tree = serde_json::to_value(&*self)
            .map_err(|e| HarnessError::config(format!("config serialization: {e}")))?;
        let parts: Vec<&str> = path.split('.').collect();
        let mut node = &mut tree;
        for part in &parts[..parts.len() - 1] {
            let obj = node.as_object_mut().ok_or_else(|| {
                HarnessError::config(format!("override key '{path}': '{part}' is not an object"))
            })?;
            node = obj
                .entry(part.to_string())
                .or_insert(serde_json::Value::Object(Default::default()));
        }
        let last = parts.last().expect("non-empty key");
        let obj = node.as_object_mut().ok_or_else(|| {
            HarnessError::config(format!("override key '{path}' does not reach an object"))
        })?;
        obj.insert(last.to_string(), value);
        *self = serde_json::from_value(tree)
            .map_err(|e| HarnessError::config(format!("override '{spec}': {e}")))?;
        Ok(())
    }

    pub fn validate(&self, mode: Mode) -> Result<(), HarnessError> {
        let mut bad = Vec::new();
        if let Some(m) = self.mode {
            if m != mode {
                bad.push(format!("mode: config says {m} but the {mode} command was invoked"));
            }
        }
        if self.seeds.is_empty() {
            bad.push("seeds: must list at least one seed".into());
        }
        match mode {
            Mode::TabularPlan => {
                if !matches!(self.environment, EnvironmentConfig::RandomMomdp { .. }) {
                    bad.push("environment.id: tabular-plan requires random-momdp".into());
                }
                if self.seeds.len() != 1 {
                    bad.push(
                        "seeds: tabular-plan runs once; the instance seed lives in environment.seed"
                            .into(),
                    );
                }
            }
            Mode::AgentTrain | Mode::Ablate | Mode::Evaluate => {
                if !matches!(self.environment, EnvironmentConfig::ContinuousDst { .. }) {
                    bad.push(format!(
                        "environment.id: {mode} requires a continuous-control environment"
                    ));
                }
            }
        }
        if self.algorithm.nonlinearity != "relu" {
            bad.push(format!(
                "algorithm.nonlinearity: only 'relu' is implemented, got '{}'",
                self.algorithm.nonlinearity
            ));
        }
        if self.algorithm.optimizer != "adam" {
            bad.push(format!(
                "algorithm.optimizer: only 'adam' is implemented, got '{}'",
                self.algorithm.optimizer
            ));
        }
        if !bad.is_empty() {
            return Err(HarnessError::Config { details: bad });
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn objective_count(&self) -> usize {
        match &self.environment {
            EnvironmentConfig::ContinuousDst { .. } => 2,
            EnvironmentConfig::RandomMomdp { d, .. } => *d,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_values() {
        let a = AlgorithmConfig::default();
        assert_eq!(a.optimizer, "adam");
        assert_eq!(a.learning_rate, 0.0003);
        assert_eq!(a.discount_factor, 0.99);
        assert_eq!(a.replay_buffer_size, 1_000_000);
        assert_eq!(a.hidden_layers, 2);
        assert_eq!(a.hidden_units, 256);
        assert_eq!(a.minibatch_size, 256);
        assert_eq!(a.nonlinearity, "relu");
        assert_eq!(a.target_smoothing_coefficient, 0.005);
        assert_eq!(a.target_update_interval, 1);
        assert_eq!(a.gradient_steps, 1);
        assert_eq!(a.n_lambda, 5);
        assert_eq!(a.q_snapshot_capacity, 4);
        assert_eq!(a.alpha, 0.2);
    }

    #[test]
    fn default_config_round_trips_bit_exactly() {
        let config = ExperimentConfig::default();
        let json = serde_json::to_string_pretty(&config).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, config);
        assert_eq!(serde_json::to_string_pretty(&back).unwrap(), json);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let mut config = ExperimentConfig::default();
        config.apply_override("algorithm.learning_rate=0.001").unwrap();
        assert_eq!(config.algorithm.learning_rate, 0.001);
        config.apply_override("algorithm.hidden_units=32").unwrap();
        assert_eq!(config.algorithm.hidden_units, 32);
        config.apply_override("seeds=[1,2,3]").unwrap();
        assert_eq!(config.seeds, vec![1, 2, 3]);
        config.apply_override("evaluation.preference_set={\"kind\":\"grid19\"}").unwrap();
        assert_eq!(config.evaluation.preference_set, PreferenceSetSpec::Grid19);
    }

    #[test]
    fn bad_overrides_are_config_errors() {
        let mut config = ExperimentConfig::default();
        assert!(config.apply_override("no_equals_sign").is_err());
        assert!(config.apply_override("algorithm.learning_rate=not_a_number").is_err());
        assert!(config.apply_override("algorithm.unknown_knob=3").is_err());
    }

    #[test]
    fn vanilla_disables_the_envelope() {
        let v = AlgorithmConfig::default().vanilla();
        assert_eq!(v.n_lambda, 1);
        assert_eq!(v.q_snapshot_capacity, 0);
        assert_eq!(v.learning_rate, AlgorithmConfig::default().learning_rate);
    }

    #[test]
    fn validation_lists_offending_keys() {
        let config = ExperimentConfig { seeds: vec![], ..Default::default() };
        match config.validate(Mode::TabularPlan) {
            Err(HarnessError::Config { details }) => {
                assert!(details.iter().any(|d| d.starts_with("seeds")));
                assert!(details.iter().any(|d| d.starts_with("environment.id")));
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::default();
        let mut b = ExperimentConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.algorithm.learning_rate = 0.001;
        assert_ne!(a.hash(), b.hash());
    }
}
