use std::path::{Path, PathBuf};

use adpomdp_core::agents::{AgentConfig, AgentKind, EpsilonSchedule};
use adpomdp_core::env::EnvConfig;
use adpomdp_core::spova::ExponentMode;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config_err, HarnessError, Result};

/// How per-state statistics average over actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Marginalization {
    /// Weights are the empirical action frequencies of the log.
    Empirical,
    Uniform,
}

/// Flat experiment configuration. Every key is optional; see the README
/// for units and defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Environment config file (flat TOML); empty means built-in defaults.
    /// Relative paths resolve against the experiment config's directory.
    pub env_config: String,
    pub out_dir: String,

    // data generation
    pub episodes: usize,
    /// Per-episode behavior policy weights: uniform-random, keep, boost, restrain.
    pub behavior_mix: Vec<f64>,
    pub test_fraction: f64,

    // estimation
    pub n_states: usize,
    pub em_restarts: usize,
    pub em_max_iters: usize,
    pub em_tol: f64,
    pub em_pseudocount: f64,
    /// State counts compared in the fit report (one restart each).
    pub state_scan: Vec<usize>,

    // training
    pub agents: Vec<String>,
    pub train_episodes: usize,
    /// Episodes per epoch: curve rows and estimator refreshes happen per epoch.
    pub epoch_episodes: usize,
    pub gamma: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Episodes over which epsilon decays linearly.
    pub eps_decay_episodes: usize,
    /// EMA rate of the per-epoch estimator refresh; 0 disables the refresh.
    pub ema_rate: f64,
    pub em_refresh_trajectories: usize,
    pub em_refresh_iters: usize,
    pub trajectory_replay_capacity: usize,
    pub checkpoint_every: usize,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub target_refresh: usize,
    pub disa_learning_rate: f64,
    pub em_q_learning_rate: f64,
    pub tabular_learning_rate: f64,
    pub n_vectors: usize,
    pub z: f64,
    pub upsilon: f64,
    pub exponent_mode: ExponentMode,
    pub compensate: bool,
    pub reward_shift: f64,
    pub init_scale: f64,
    pub hidden_width: usize,
    pub hidden_depth: usize,

    // evaluation and reports
    pub eval_episodes: usize,
    pub marginalization: Marginalization,
    pub kmeans_iters: usize,

    // sweep
    pub sweep_gammas: Vec<f64>,
    pub sweep_n_vectors: Vec<usize>,
    pub sweep_train_episodes: usize,
    pub sweep_eval_episodes: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            env_config: String::new(),
            out_dir: "runs/default".into(),
            episodes: 2000,
            behavior_mix: vec![0.7, 0.1, 0.1, 0.1],
            test_fraction: 0.1,
            n_states: 3,
            em_restarts: 5,
            em_max_iters: 200,
            em_tol: 1e-6,
            em_pseudocount: 1e-3,
            state_scan: vec![2, 3, 4, 5],
            agents: AgentKind::ALL.iter().map(|k| k.to_string()).collect(),
            train_episodes: 4000,
            epoch_episodes: 100,
            gamma: 0.9,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_episodes: 2000,
            ema_rate: 0.01,
            em_refresh_trajectories: 200,
            em_refresh_iters: 5,
            trajectory_replay_capacity: 5000,
            checkpoint_every: 1000,
            replay_capacity: 50_000,
            batch_size: 32,
            target_refresh: 200,
            disa_learning_rate: 1e-2,
            em_q_learning_rate: 1e-3,
            tabular_learning_rate: 0.1,
            n_vectors: 5,
            z: 2.0,
            upsilon: 1.0,
            exponent_mode: ExponentMode::Derivative,
            compensate: true,
            reward_shift: 0.0,
            init_scale: 0.1,
            hidden_width: 32,
            hidden_depth: 2,
            eval_episodes: 2000,
            marginalization: Marginalization::Empirical,
            kmeans_iters: 100,
            sweep_gammas: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            sweep_n_vectors: vec![1, 2, 3, 4, 5],
            sweep_train_episodes: 1500,
            sweep_eval_episodes: 500,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; `env_config` is made absolute relative to it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if !cfg.env_config.is_empty() {
            let p = Path::new(&cfg.env_config);
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.env_config = dir.join(p).display().to_string();
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_states < 2 {
            return config_err("n_states must be at least 2");
        }
        if self.eval_episodes == 0 {
            return config_err("eval_episodes must be at least 1");
        }
        if self.em_restarts == 0 || self.em_max_iters == 0 {
            return config_err("em_restarts and em_max_iters must be at least 1");
        }
        if !(self.em_pseudocount >= 0.0 && self.em_tol >= 0.0) {
            return config_err("em_pseudocount and em_tol must be non-negative");
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return config_err("test_fraction must lie in [0, 1)");
        }
        if self.behavior_mix.len() != 4
            || self.behavior_mix.iter().any(|w| !(*w >= 0.0))
            || self.behavior_mix.iter().sum::<f64>() <= 0.0
        {
            return config_err("behavior_mix needs four non-negative weights (uniform, keep, boost, restrain)");
        }
        if !(0.0..=1.0).contains(&self.ema_rate) {
            return config_err("ema_rate must lie in [0, 1]");
        }
        if self.epoch_episodes == 0 {
            return config_err("epoch_episodes must be at least 1");
        }
        if self.state_scan.iter().any(|&n| n < 1) {
            return config_err("state_scan entries must be positive");
        }
        if self.kmeans_iters == 0 {
            return config_err("kmeans_iters must be at least 1");
        }
        self.agent_kinds()?;
        for kind in AgentKind::ALL {
            self.agent_config(kind).validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        if self.sweep_gammas.iter().any(|g| !(0.0..1.0).contains(g)) {
            return config_err("sweep_gammas must lie in [0, 1)");
        }
        if self.sweep_n_vectors.contains(&0) {
            return config_err("sweep_n_vectors must be positive");
        }
        Ok(())
    }

    pub fn agent_kinds(&self) -> Result<Vec<AgentKind>> {
        let mut kinds = Vec::new();
        for name in &self.agents {
            let k: AgentKind = name.parse().map_err(|e: adpomdp_core::Error| HarnessError::Config(e.to_string()))?;
            if !kinds.contains(&k) {
                kinds.push(k);
            }
        }
        if kinds.is_empty() {
            return config_err("agents list is empty");
        }
        Ok(kinds)
    }

    pub fn agent_config(&self, kind: AgentKind) -> AgentConfig {
        let mut c = AgentConfig::new(kind);
        // epsilon decays per training episode
        c.epsilon = EpsilonSchedule {
            start: self.eps_start,
            end: self.eps_end,
            decay_steps: self.eps_decay_episodes as u64,
        };
        c.learning_rate = match kind {
            AgentKind::TabularQ => self.tabular_learning_rate,
            AgentKind::EmQ => self.em_q_learning_rate,
            _ => self.disa_learning_rate,
        };
        c.gamma = self.gamma;
        c.hidden_width = self.hidden_width;
        c.hidden_depth = self.hidden_depth;
        c.replay_capacity = self.replay_capacity;
        c.batch_size = self.batch_size;
        c.target_refresh = self.target_refresh;
        c.n_vectors = self.n_vectors;
        c.z = self.z;
        c.upsilon = self.upsilon;
        c.exponent_mode = self.exponent_mode;
        c.compensate = self.compensate;
        c.reward_shift = self.reward_shift;
        c.init_scale = self.init_scale;
        c
    }

    pub fn env(&self) -> Result<EnvConfig> {
        if self.env_config.is_empty() {
            return Ok(EnvConfig::default());
        }
        let path = Path::new(&self.env_config);
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let env: EnvConfig = toml::from_str(&text)?;
        env.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(env)
    }

    pub fn out_path(&self) -> PathBuf {
        PathBuf::from(&self.out_dir)
    }

    /// SHA-256 over the canonical serialization of this config and the
    /// resolved environment config. The output directory is left out so the
    /// same experiment hashes the same wherever it is written.
    pub fn hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        let canonical = ExperimentConfig {
            out_dir: String::new(),
            ..self.clone()
        };
        h.update(serde_json::to_string(&canonical)?.as_bytes());
        h.update(serde_json::to_string(&self.env()?)?.as_bytes());
        Ok(hex::encode(h.finalize()))
    }
}
