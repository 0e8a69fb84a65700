use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::algos::{Algo, AlgoConfig};
use crate::envs::env_spec;
use crate::error::{Error, Result};

/// Ten-point coefficient grid used by discrete-action sweeps.
pub const DEFAULT_COEFFICIENTS: [f64; 10] = [1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3, 1e-2, 5e-2, 1e-1, 5e-1];

/// Coefficient list for the goal-reaching sweeps.
pub const REACH_COEFFICIENTS: [f64; 8] = [5e-5, 5e-4, 5e-3, 5e-2, 5e-1, 1.0, 2.0, 5.0];

/// How sweep candidates are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreMode {
    /// reward + sparsity percent, as-is.
    #[default]
    Raw,
    /// Reward rescaled to [0, 100] between the episode floor and the target
    /// before adding the sparsity percent.
    Normalized,
}

impl FromStr for ScoreMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(ScoreMode::Raw),
            "normalized" => Ok(ScoreMode::Normalized),
            _ => Err(Error::Config(format!("unknown score mode {s:?}"))),
        }
    }
}

impl std::fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScoreMode::Raw => "raw",
            ScoreMode::Normalized => "normalized",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: String,
    pub algo: AlgoConfig,
    pub coefficients: Vec<f64>,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub score_mode: ScoreMode,
}

impl ExperimentConfig {
    /// Defaults for `env` and `algo`: early stop at the environment's target and
    /// the coefficient grid matching the action space.
    pub fn new(env: &str, algo: Algo) -> Result<Self> {
        let spec = env_spec(env)?;
        let mut cfg = AlgoConfig::new(algo);
        cfg.target_reward = default_target(env)?;
        let coefficients = if spec.goal_dim.is_some() {
            REACH_COEFFICIENTS.to_vec()
        } else {
            DEFAULT_COEFFICIENTS.to_vec()
        };
        Ok(ExperimentConfig {
            env: env.to_string(),
            algo: cfg,
            coefficients,
            out_dir: PathBuf::from("runs"),
            seeds: vec![0],
            score_mode: ScoreMode::Raw,
        })
    }

    pub fn validate(&self) -> Result<()> {
        env_spec(&self.env)?;
        self.algo.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if let Some(c) = self.coefficients.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(Error::Config(format!("coefficient {c} must be finite and non-negative")));
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. `env` and `algo`
    /// select defaults, every other key overrides one field.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            pairs.push((n + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let lookup = |key: &str| pairs.iter().find(|(_, k, _)| k == key).map(|(_, _, v)| v.as_str());
        let env = lookup("env").ok_or_else(|| Error::Config("missing key: env".into()))?;
        let algo: Algo = lookup("algo").ok_or_else(|| Error::Config("missing key: algo".into()))?.parse()?;
        let mut cfg = ExperimentConfig::new(env, algo)?;
        for (line, key, value) in &pairs {
            if key == "env" || key == "algo" {
                continue;
            }
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {line}: {key}: {}", strip_prefix(&e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "coefficients" => self.coefficients = parse_list(value)?,
            "seeds" => self.seeds = parse_list(value)?,
            "out" | "out_dir" => self.out_dir = PathBuf::from(value),
            "score_mode" => self.score_mode = value.parse()?,
            _ => set_algo_key(&mut self.algo, key, value)?,
        }
        Ok(())
    }

    /// Key-value text that [`ExperimentConfig::parse`] reads back to an equal config.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "env = {}", self.env);
        let _ = writeln!(s, "algo = {}", self.algo.algo);
        s.push_str(&algo_kv(&self.algo));
        let _ = writeln!(s, "coefficients = {}", join(&self.coefficients));
        let _ = writeln!(s, "seeds = {}", join(&self.seeds));
        let _ = writeln!(s, "out = {}", self.out_dir.display());
        let _ = writeln!(s, "score_mode = {}", self.score_mode);
        s
    }
}

/// Early-stop target for `env`: its reward target, or none for goal envs
/// (their success criterion is tracked separately).
pub fn default_target(env: &str) -> Result<Option<f64>> {
    let spec = env_spec(env)?;
    Ok(if spec.goal_dim.is_some() { None } else { Some(spec.target_reward) })
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

fn parse_one<T: FromStr>(v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {v:?}")))
}

fn parse_list<T: FromStr>(v: &str) -> Result<Vec<T>> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(parse_one).collect()
}

fn parse_opt<T: FromStr>(v: &str) -> Result<Option<T>> {
    if v == "none" {
        Ok(None)
    } else {
        parse_one(v).map(Some)
    }
}

fn opt_str<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), |x| x.to_string())
}

fn set_algo_key(c: &mut AlgoConfig, key: &str, v: &str) -> Result<()> {
    match key {
        "gamma" => c.gamma = parse_one(v)?,
        "sparsity" => c.sparsity = v.parse()?,
        "lambda_c" | "coeff" => c.lambda_c = parse_one(v)?,
        "batch_size" => c.batch_size = parse_one(v)?,
        "episodes" => c.episodes = parse_one(v)?,
        "eval_every" => c.eval_every = parse_one(v)?,
        "eval_episodes" => c.eval_episodes = parse_one(v)?,
        "target_reward" => c.target_reward = parse_opt(v)?,
        "hidden" => c.hidden = parse_list(v)?,
        "activation" => c.activation = v.parse()?,
        "lr" => c.lr = parse_one(v)?,
        "gate_lr" => c.gate_lr = parse_opt(v)?,
        "grad_clip" => c.grad_clip = parse_one(v)?,
        "log_alpha_init" => c.log_alpha_init = parse_one(v)?,
        "gate_beta" => c.gate_beta = parse_one(v)?,
        "gate_gamma" => c.gate_gamma = parse_one(v)?,
        "gate_zeta" => c.gate_zeta = parse_one(v)?,
        "eval_gate_mode" => c.eval_gate_mode = v.parse()?,
        "seed" => c.seed = parse_one(v)?,
        "dqn.eps_max" => c.dqn.eps_max = parse_one(v)?,
        "dqn.eps_min" => c.dqn.eps_min = parse_one(v)?,
        "dqn.eps_decay_steps" => c.dqn.eps_decay_steps = parse_one(v)?,
        "dqn.buffer_size" => c.dqn.buffer_size = parse_one(v)?,
        "dqn.target_update" => c.dqn.target_update = parse_one(v)?,
        "dqn.train_every" => c.dqn.train_every = parse_one(v)?,
        "dqn.priority_alpha" => c.dqn.priority_alpha = parse_one(v)?,
        "dqn.priority_mode" => c.dqn.priority_mode = v.parse()?,
        "ppo.clip_eps" => c.ppo.clip_eps = parse_one(v)?,
        "ppo.entropy_coef" => c.ppo.entropy_coef = parse_one(v)?,
        "ppo.rollout_steps" => c.ppo.rollout_steps = parse_one(v)?,
        "ppo.epochs" => c.ppo.epochs = parse_one(v)?,
        "ppo.gae_lambda" => c.ppo.gae_lambda = parse_one(v)?,
        "ppo.value_lr" => c.ppo.value_lr = parse_one(v)?,
        "ddpg.tau" => c.ddpg.tau = parse_one(v)?,
        "ddpg.noise_scale" => c.ddpg.noise_scale = parse_one(v)?,
        "ddpg.dex_alpha" => c.ddpg.dex_alpha = parse_one(v)?,
        "ddpg.knn_k" => c.ddpg.knn_k = parse_one(v)?,
        "ddpg.k_future" => c.ddpg.k_future = parse_one(v)?,
        "ddpg.her_strategy" => c.ddpg.her_strategy = v.parse()?,
        "ddpg.agent_buffer" => c.ddpg.agent_buffer = parse_one(v)?,
        "ddpg.expert_buffer" => c.ddpg.expert_buffer = parse_one(v)?,
        "ddpg.updates_per_episode" => c.ddpg.updates_per_episode = parse_one(v)?,
        "ddpg.critic_lr" => c.ddpg.critic_lr = parse_one(v)?,
        _ => return Err(Error::Config(format!("unknown key {key:?}"))),
    }
    Ok(())
}

/// Every tunable field of `c` (except `algo`) as `key = value` lines.
pub fn algo_kv(c: &AlgoConfig) -> String {
    let fields: Vec<(&str, String)> = vec![
        ("gamma", c.gamma.to_string()),
        ("sparsity", c.sparsity.to_string()),
        ("lambda_c", c.lambda_c.to_string()),
        ("batch_size", c.batch_size.to_string()),
        ("episodes", c.episodes.to_string()),
        ("eval_every", c.eval_every.to_string()),
        ("eval_episodes", c.eval_episodes.to_string()),
        ("target_reward", opt_str(&c.target_reward)),
        ("hidden", join(&c.hidden)),
        ("activation", c.activation.to_string()),
        ("lr", c.lr.to_string()),
        ("gate_lr", opt_str(&c.gate_lr)),
        ("grad_clip", c.grad_clip.to_string()),
        ("log_alpha_init", c.log_alpha_init.to_string()),
        ("gate_beta", c.gate_beta.to_string()),
        ("gate_gamma", c.gate_gamma.to_string()),
        ("gate_zeta", c.gate_zeta.to_string()),
        ("eval_gate_mode", c.eval_gate_mode.to_string()),
        ("seed", c.seed.to_string()),
        ("dqn.eps_max", c.dqn.eps_max.to_string()),
        ("dqn.eps_min", c.dqn.eps_min.to_string()),
        ("dqn.eps_decay_steps", c.dqn.eps_decay_steps.to_string()),
        ("dqn.buffer_size", c.dqn.buffer_size.to_string()),
        ("dqn.target_update", c.dqn.target_update.to_string()),
        ("dqn.train_every", c.dqn.train_every.to_string()),
        ("dqn.priority_alpha", c.dqn.priority_alpha.to_string()),
        ("dqn.priority_mode", c.dqn.priority_mode.to_string()),
        ("ppo.clip_eps", c.ppo.clip_eps.to_string()),
        ("ppo.entropy_coef", c.ppo.entropy_coef.to_string()),
        ("ppo.rollout_steps", c.ppo.rollout_steps.to_string()),
        ("ppo.epochs", c.ppo.epochs.to_string()),
        ("ppo.gae_lambda", c.ppo.gae_lambda.to_string()),
        ("ppo.value_lr", c.ppo.value_lr.to_string()),
        ("ddpg.tau", c.ddpg.tau.to_string()),
        ("ddpg.noise_scale", c.ddpg.noise_scale.to_string()),
        ("ddpg.dex_alpha", c.ddpg.dex_alpha.to_string()),
        ("ddpg.knn_k", c.ddpg.knn_k.to_string()),
        ("ddpg.k_future", c.ddpg.k_future.to_string()),
        ("ddpg.her_strategy", c.ddpg.her_strategy.to_string()),
        ("ddpg.agent_buffer", c.ddpg.agent_buffer.to_string()),
        ("ddpg.expert_buffer", c.ddpg.expert_buffer.to_string()),
        ("ddpg.updates_per_episode", c.ddpg.updates_per_episode.to_string()),
        ("ddpg.critic_lr", c.ddpg.critic_lr.to_string()),
    ];
    let mut s = String::new();
    for (k, v) in fields {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}
