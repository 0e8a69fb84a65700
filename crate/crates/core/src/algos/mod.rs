//! Training algorithms (DQN/DDQN, PPO, DDPG with HER and demonstrations) with
//! optional L0/L1/L2 sparsification, plus the shared evaluation protocol.

mod ddpg;
mod dqn;
mod ppo;

use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{make_env, Action, EnvSpec};
use crate::error::{Error, Result};
use crate::gates::{
    self, GateMode, GatePolicy, Gating, Sparsity, DEFAULT_BETA, DEFAULT_GAMMA, DEFAULT_LOG_ALPHA,
    DEFAULT_ZETA,
};
use crate::lowrank::CompressedNetwork;
use crate::nn::{Activation, AdamState, Gradients, Matrix, Network};
use crate::replay::{HerStrategy, PriorityMode, DEFAULT_PRIORITY_ALPHA};

pub use ddpg::{ddpg_losses, polyak_update, train_ddpg_her_dex, DdpgBatch, DdpgLosses};
pub use dqn::{dqn_loss, dqn_target, epsilon_at, train_dqn};
pub use ppo::{gae, ppo_loss, train_ppo, PpoLoss};

/// Sparsity threshold for L1/L2 runs; L0 gates produce exact zeros.
pub const WEIGHT_ZERO_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Dqn,
    Ddqn,
    Ppo,
    DdpgHerDex,
}

impl FromStr for Algo {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dqn" => Ok(Algo::Dqn),
            "ddqn" => Ok(Algo::Ddqn),
            "ppo" => Ok(Algo::Ppo),
            "ddpg_her_dex" | "ddpg" => Ok(Algo::DdpgHerDex),
            _ => Err(Error::Config(format!(
                "unknown algorithm {s:?} (expected dqn, ddqn, ppo or ddpg_her_dex)"
            ))),
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algo::Dqn => "dqn",
            Algo::Ddqn => "ddqn",
            Algo::Ppo => "ppo",
            Algo::DdpgHerDex => "ddpg_her_dex",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnConfig {
    pub eps_max: f64,
    pub eps_min: f64,
    /// Environment steps over which epsilon anneals from max to min.
    pub eps_decay_steps: usize,
    pub buffer_size: usize,
    /// Hard target copy every this many updates.
    pub target_update: usize,
    /// Environment steps per gradient update.
    pub train_every: usize,
    pub priority_alpha: f64,
    pub priority_mode: PriorityMode,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            eps_max: 1.0,
            eps_min: 0.01,
            eps_decay_steps: 10_000,
            buffer_size: 50_000,
            target_update: 100,
            train_every: 1,
            priority_alpha: DEFAULT_PRIORITY_ALPHA,
            priority_mode: PriorityMode::Softmax,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub entropy_coef: f64,
    /// Environment steps collected per policy iteration.
    pub rollout_steps: usize,
    pub epochs: usize,
    pub gae_lambda: f64,
    pub value_lr: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_eps: 0.2,
            entropy_coef: 0.01,
            rollout_steps: 1024,
            epochs: 8,
            gae_lambda: 0.95,
            value_lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdpgConfig {
    pub tau: f64,
    pub noise_scale: f64,
    pub dex_alpha: f64,
    pub knn_k: usize,
    pub k_future: usize,
    pub her_strategy: HerStrategy,
    pub agent_buffer: usize,
    pub expert_buffer: usize,
    pub updates_per_episode: usize,
    pub critic_lr: f64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        DdpgConfig {
            tau: 0.05,
            noise_scale: 0.3,
            dex_alpha: 5.0,
            knn_k: 5,
            k_future: 4,
            her_strategy: HerStrategy::Future,
            agent_buffer: 10_000,
            expert_buffer: 5_000,
            updates_per_episode: 50,
            critic_lr: 2e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoConfig {
    pub algo: Algo,
    pub gamma: f64,
    pub sparsity: Sparsity,
    pub lambda_c: f64,
    pub batch_size: usize,
    pub episodes: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Early-stop threshold on the evaluation mean; `None` trains all episodes.
    pub target_reward: Option<f64>,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lr: f64,
    /// Learning rate for gate locations; `None` reuses `lr`. Gates need a
    /// faster rate than weights to open or close before training stops.
    pub gate_lr: Option<f64>,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub log_alpha_init: f64,
    pub gate_beta: f64,
    pub gate_gamma: f64,
    pub gate_zeta: f64,
    pub eval_gate_mode: GateMode,
    pub seed: u64,
    pub dqn: DqnConfig,
    pub ppo: PpoConfig,
    pub ddpg: DdpgConfig,
}

impl AlgoConfig {
    /// Defaults per algorithm.
    pub fn new(algo: Algo) -> Self {
        let mut cfg = AlgoConfig {
            algo,
            gamma: 0.99,
            sparsity: Sparsity::None,
            lambda_c: 0.0,
            batch_size: 64,
            episodes: 2000,
            eval_every: 10,
            eval_episodes: 5,
            target_reward: None,
            hidden: vec![64, 160],
            activation: Activation::Relu,
            lr: 1e-3,
            gate_lr: Some(1e-2),
            grad_clip: 10.0,
            log_alpha_init: DEFAULT_LOG_ALPHA,
            gate_beta: DEFAULT_BETA,
            gate_gamma: DEFAULT_GAMMA,
            gate_zeta: DEFAULT_ZETA,
            eval_gate_mode: GateMode::Sampled,
            seed: 0,
            dqn: DqnConfig::default(),
            ppo: PpoConfig::default(),
            ddpg: DdpgConfig::default(),
        };
        match algo {
            Algo::Dqn | Algo::Ddqn => {}
            Algo::Ppo => {
                cfg.lr = 3e-4;
                cfg.activation = Activation::Tanh;
                cfg.grad_clip = 0.5;
            }
            Algo::DdpgHerDex => {
                cfg.gamma = 0.98;
                cfg.episodes = 200;
                cfg.hidden = vec![64, 64];
                cfg.lr = 2e-3;
                cfg.eval_episodes = 20;
                cfg.grad_clip = 0.0;
            }
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.lambda_c >= 0.0) || !self.lambda_c.is_finite() {
            return bad("lambda_c must be a finite non-negative number");
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return bad("eval_every and eval_episodes must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer sizes must be non-empty and positive");
        }
        let lrs = [Some(self.lr), self.gate_lr, Some(self.ppo.value_lr), Some(self.ddpg.critic_lr)];
        if lrs.iter().flatten().any(|lr| !(*lr > 0.0) || !lr.is_finite()) {
            return bad("learning rates must be positive");
        }
        if !(self.grad_clip >= 0.0) {
            return bad("grad_clip must be non-negative");
        }
        if !(self.ppo.clip_eps > 0.0) {
            return bad("clip epsilon must be positive");
        }
        if !(0.0..=1.0).contains(&self.ppo.gae_lambda) {
            return bad("gae lambda must lie in [0, 1]");
        }
        if self.ppo.rollout_steps == 0 || self.ppo.epochs == 0 {
            return bad("ppo rollout_steps and epochs must be positive");
        }
        if !(0.0..=1.0).contains(&self.ddpg.tau) {
            return bad("tau must lie in [0, 1]");
        }
        if self.ddpg.knn_k == 0 || self.ddpg.agent_buffer == 0 || self.ddpg.expert_buffer < self.ddpg.knn_k {
            return bad("ddpg needs k >= 1 and buffers that can hold k demonstrations");
        }
        if self.dqn.buffer_size == 0 || self.dqn.target_update == 0 || self.dqn.train_every == 0 {
            return bad("dqn buffer_size, target_update and train_every must be positive");
        }
        if !(self.dqn.eps_min >= 0.0 && self.dqn.eps_min <= self.dqn.eps_max && self.dqn.eps_max <= 1.0) {
            return bad("epsilon bounds must satisfy 0 <= eps_min <= eps_max <= 1");
        }
        if !(self.dqn.priority_alpha >= 0.0) {
            return bad("priority alpha must be non-negative");
        }
        gates::GateParams::new(vec![self.log_alpha_init], self.gate_beta, self.gate_gamma, self.gate_zeta)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub(crate) fn gated(&self) -> bool {
        self.sparsity == Sparsity::L0
    }

    /// Fresh policy-shaped network, gated under L0.
    pub(crate) fn build_net(&self, in_dim: usize, out_dim: usize, stream: u64) -> Result<Network> {
        let mut sizes = vec![in_dim];
        sizes.extend(&self.hidden);
        sizes.push(out_dim);
        let net = Network::mlp(&sizes, self.activation, derive_seed(self.seed, stream, 0))?;
        if !self.gated() {
            return Ok(net);
        }
        let mut net = net.with_gates();
        for layer in net.layers_mut() {
            if let Some(gp) = &mut layer.gate {
                gp.log_alpha.iter_mut().for_each(|v| *v = self.log_alpha_init);
                gp.beta = self.gate_beta;
                gp.gamma = self.gate_gamma;
                gp.zeta = self.gate_zeta;
            }
        }
        Ok(net)
    }

    pub(crate) fn optimizer(&self, lr: f64) -> Optimizer {
        Optimizer::new(lr, self.gate_lr.unwrap_or(lr), self.grad_clip)
    }
}

/// SplitMix64 finalizer, used to derive independent seeds.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for item `index` of random stream `stream` under a run seed.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index)
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, 0))
}

// Random stream ids.
pub(crate) const STREAM_POLICY_INIT: u64 = 1;
pub(crate) const STREAM_AUX_INIT: u64 = 2;
pub(crate) const STREAM_TRAIN_ENV: u64 = 3;
pub(crate) const STREAM_EXPLORE: u64 = 4;
pub(crate) const STREAM_GATES: u64 = 5;
pub(crate) const STREAM_REPLAY: u64 = 6;
pub(crate) const STREAM_EVAL: u64 = 7;
pub(crate) const STREAM_SPARSITY: u64 = 8;
pub(crate) const STREAM_DEMOS: u64 = 9;

/// Adam over weights and biases plus a separate Adam for gate locations.
pub struct Optimizer {
    params: AdamState,
    gates: AdamState,
    clip: f64,
}

impl Optimizer {
    pub fn new(lr: f64, gate_lr: f64, clip: f64) -> Self {
        Optimizer {
            params: AdamState::new(lr),
            gates: AdamState::new(gate_lr),
            clip,
        }
    }

    pub fn step(&mut self, net: &mut Network, grads: &mut Gradients) -> Result<()> {
        if self.clip > 0.0 {
            grads.clip_norm(self.clip);
        }
        let is_gate: Vec<bool> = net
            .layers()
            .iter()
            .flat_map(|l| {
                let mut v = vec![false, false];
                if l.gate.is_some() {
                    v.push(true);
                }
                v
            })
            .collect();
        let g = grads.slices();
        let (mut pw, mut gw, mut pg, mut gg) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for ((p, g), gate) in net.param_slices_mut().into_iter().zip(g).zip(is_gate) {
            if gate {
                pg.push(p);
                gg.push(g);
            } else {
                pw.push(p);
                gw.push(g);
            }
        }
        self.params.step_slices(&mut pw, &gw)?;
        if !pg.is_empty() {
            self.gates.step_slices(&mut pg, &gg)?;
        }
        Ok(())
    }
}

/// Raw penalty value for the configured method: L_sp, Σ|w| or Σw².
pub fn penalty_value(net: &Network, sparsity: Sparsity) -> f64 {
    let weights = || net.layers().iter().flat_map(|l| l.weight.data().iter());
    match sparsity {
        Sparsity::None => 0.0,
        Sparsity::L0 => net
            .layers()
            .iter()
            .filter_map(|l| l.gate.as_ref())
            .map(gates::sparsity_penalty)
            .sum(),
        Sparsity::L1 => gates::l1_penalty(weights()),
        Sparsity::L2 => gates::l2_penalty(weights()),
    }
}

/// The loss contribution λ_c·penalty/b.
pub fn sparsity_loss(net: &Network, sparsity: Sparsity, lambda_c: f64, b: usize) -> f64 {
    lambda_c * penalty_value(net, sparsity) / b as f64
}

/// Adds d(λ_c·penalty/b)/dθ into `grads`.
pub fn add_sparsity_grad(net: &Network, grads: &mut Gradients, sparsity: Sparsity, lambda_c: f64, b: usize) {
    if sparsity == Sparsity::None || lambda_c == 0.0 {
        return;
    }
    let c = lambda_c / b as f64;
    for (layer, lg) in net.layers().iter().zip(&mut grads.layers) {
        match sparsity {
            Sparsity::L0 => {
                if let (Some(gp), Some(dla)) = (&layer.gate, &mut lg.log_alpha) {
                    for (d, p) in dla.iter_mut().zip(gates::sparsity_penalty_grad(gp)) {
                        *d += c * p;
                    }
                }
            }
            Sparsity::L1 => {
                for (d, w) in lg.weight.iter_mut().zip(layer.weight.data()) {
                    *d += c * if *w > 0.0 { 1.0 } else if *w < 0.0 { -1.0 } else { 0.0 };
                }
            }
            Sparsity::L2 => {
                for (d, w) in lg.weight.iter_mut().zip(layer.weight.data()) {
                    *d += c * 2.0 * w;
                }
            }
            Sparsity::None => {}
        }
    }
}

/// Percentage of zero effective weights: sampled gates for L0 (threshold 0),
/// |w| < 1e-6 otherwise.
pub fn policy_sparsity(net: &Network, sparsity: Sparsity, seed: u64) -> f64 {
    let (policy, threshold) = match sparsity {
        Sparsity::L0 => (GatePolicy::Sampled { seed }, 0.0),
        _ => (GatePolicy::Deterministic, WEIGHT_ZERO_THRESHOLD),
    };
    gates::measure_sparsity(net, policy, threshold).percent
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub episode: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub epsilon: f64,
    pub loss: f64,
    pub l_sp: f64,
    pub sparsity_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub episode: usize,
    pub mean: f64,
    pub std: f64,
    pub sparsity_pct: f64,
    /// Fraction of successful episodes (goal-conditioned tasks).
    pub success_rate: Option<f64>,
}

/// How a network's outputs become actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyHead {
    /// Argmax over outputs (Q-values or logits).
    Greedy,
    /// tanh-squashed continuous action.
    Tanh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub net: Network,
    pub head: PolicyHead,
}

/// Anything that maps an input batch to policy outputs.
pub trait PolicyModel {
    fn in_dim(&self) -> usize;
    fn outputs(&self, x: &Matrix, gating: Gating<'_>) -> Result<Matrix>;
}

impl PolicyModel for Network {
    fn in_dim(&self) -> usize {
        Network::in_dim(self)
    }
    fn outputs(&self, x: &Matrix, gating: Gating<'_>) -> Result<Matrix> {
        self.predict(x, gating)
    }
}

impl PolicyModel for CompressedNetwork {
    fn in_dim(&self) -> usize {
        CompressedNetwork::in_dim(self)
    }
    fn outputs(&self, x: &Matrix, _gating: Gating<'_>) -> Result<Matrix> {
        self.forward(x)
    }
}

/// First index of the largest value.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn act(model: &dyn PolicyModel, head: PolicyHead, input: &[f64], gating: Gating<'_>) -> Result<Action> {
    let x = Matrix::from_vec(1, input.len(), input.to_vec())?;
    let y = model.outputs(&x, gating)?;
    Ok(match head {
        PolicyHead::Greedy => Action::Discrete(argmax(y.row(0))),
        PolicyHead::Tanh => Action::Continuous(y.row(0).iter().map(|v| v.tanh()).collect()),
    })
}

/// Network input for an observation, with the desired goal appended for goal envs.
pub(crate) fn policy_input(obs: &[f64], goal: Option<&[f64]>) -> Vec<f64> {
    let mut v = obs.to_vec();
    if let Some(g) = goal {
        v.extend_from_slice(g);
    }
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalStats {
    pub mean: f64,
    pub std: f64,
    pub returns: Vec<f64>,
    /// Fraction of episodes ending in a true terminal with zero reward
    /// (goal reached); only meaningful for goal-conditioned tasks.
    pub success_rate: Option<f64>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs `episodes` greedy episodes; episode `i` resets with a seed derived
/// from (`seed`, `i`). Gates follow `gate_mode`, redrawn every forward pass.
pub fn evaluate_policy(
    env_name: &str,
    model: &dyn PolicyModel,
    head: PolicyHead,
    episodes: usize,
    seed: u64,
    gate_mode: GateMode,
) -> Result<EvalStats> {
    if episodes == 0 {
        return Err(Error::InvalidInput("evaluation needs at least one episode".into()));
    }
    let mut env = make_env(env_name)?;
    let spec = env.spec().clone();
    let expected_in = spec.obs_dim + spec.goal_dim.unwrap_or(0);
    if model.in_dim() != expected_in {
        return Err(Error::Shape(format!(
            "policy expects {} inputs, {} provides {expected_in}",
            model.in_dim(),
            spec.name
        )));
    }
    let mut gate_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_GATES, 0));
    let mut returns = Vec::with_capacity(episodes);
    let mut successes = 0usize;
    for i in 0..episodes {
        let mut obs = env.reset(derive_seed(seed, STREAM_EVAL, i as u64));
        let goal = env.desired_goal();
        let mut total = 0.0;
        loop {
            let input = policy_input(&obs, goal.as_deref());
            let action = act(model, head, &input, Gating::new(gate_mode, &mut gate_rng))?;
            let step = env.step(&action)?;
            total += step.reward;
            let terminal = step.terminal();
            obs = step.observation;
            if step.done {
                if terminal && goal.is_some() {
                    successes += 1;
                }
                break;
            }
        }
        returns.push(total);
    }
    let (mean, std) = mean_std(&returns);
    Ok(EvalStats {
        mean,
        std,
        returns,
        success_rate: spec.goal_dim.map(|_| successes as f64 / episodes as f64),
    })
}

/// Receives rows as training produces them.
pub trait Monitor {
    fn train_row(&mut self, _row: &TrainRow) -> Result<()> {
        Ok(())
    }
    fn eval_row(&mut self, _row: &EvalRow) -> Result<()> {
        Ok(())
    }
}

impl Monitor for () {}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub env: String,
    pub config: AlgoConfig,
    pub train: Vec<TrainRow>,
    pub eval: Vec<EvalRow>,
    /// 1-based index of the first evaluation meeting the target.
    pub convergence_step: Option<usize>,
    pub episodes_run: usize,
    pub policy: Policy,
}

impl RunRecord {
    pub fn final_eval(&self) -> Option<&EvalRow> {
        self.eval.last()
    }
}

/// Shared bookkeeping for the training loops: rows, evaluation cadence and
/// early stopping.
pub(crate) struct Tracker<'m> {
    cfg: AlgoConfig,
    env: String,
    train: Vec<TrainRow>,
    eval: Vec<EvalRow>,
    convergence_step: Option<usize>,
    monitor: &'m mut dyn Monitor,
}

impl<'m> Tracker<'m> {
    pub(crate) fn new(env: &str, cfg: &AlgoConfig, monitor: &'m mut dyn Monitor) -> Self {
        Tracker {
            cfg: cfg.clone(),
            env: env.to_string(),
            train: Vec::new(),
            eval: Vec::new(),
            convergence_step: None,
            monitor,
        }
    }

    /// Records one finished training episode; evaluates on cadence.
    /// Returns true when training should stop.
    pub(crate) fn end_episode(
        &mut self,
        row: TrainRow,
        net: &Network,
        head: PolicyHead,
    ) -> Result<bool> {
        self.monitor.train_row(&row)?;
        let episode = row.episode;
        self.train.push(row);
        if !episode.is_multiple_of(self.cfg.eval_every) {
            return Ok(false);
        }
        let stats = evaluate_policy(
            &self.env,
            net,
            head,
            self.cfg.eval_episodes,
            derive_seed(self.cfg.seed, STREAM_EVAL, 0),
            self.cfg.eval_gate_mode,
        )?;
        let erow = EvalRow {
            episode,
            mean: stats.mean,
            std: stats.std,
            sparsity_pct: policy_sparsity(net, self.cfg.sparsity, derive_seed(self.cfg.seed, STREAM_SPARSITY, 0)),
            success_rate: stats.success_rate,
        };
        self.monitor.eval_row(&erow)?;
        self.eval.push(erow);
        if let Some(target) = self.cfg.target_reward {
            if stats.mean >= target {
                self.convergence_step = Some(self.eval.len());
                return Ok(true);
            }
        }
        Ok(false)
    }

    pub(crate) fn finish(self, policy: Policy) -> RunRecord {
        RunRecord {
            env: self.env,
            episodes_run: self.train.len(),
            config: self.cfg,
            train: self.train,
            eval: self.eval,
            convergence_step: self.convergence_step,
            policy,
        }
    }
}

/// Episode-level sparsity for the train log (sampled gates, fixed seed per episode).
pub(crate) fn episode_sparsity(net: &Network, cfg: &AlgoConfig, episode: usize) -> f64 {
    policy_sparsity(net, cfg.sparsity, derive_seed(cfg.seed, STREAM_SPARSITY, episode as u64))
}

/// Runs the configured algorithm on `env_name`.
pub fn train(env_name: &str, cfg: &AlgoConfig, monitor: &mut dyn Monitor) -> Result<RunRecord> {
    cfg.validate()?;
    match cfg.algo {
        Algo::Dqn | Algo::Ddqn => train_dqn(env_name, cfg, monitor),
        Algo::Ppo => train_ppo(env_name, cfg, monitor),
        Algo::DdpgHerDex => train_ddpg_her_dex(env_name, cfg, monitor),
    }
}

pub(crate) fn discrete_spec(env_name: &str) -> Result<EnvSpec> {
    let spec = crate::envs::env_spec(env_name)?;
    if spec.n_actions().is_none() {
        return Err(Error::Config(format!("{env_name} has continuous actions")));
    }
    Ok(spec)
}

pub(crate) fn rng_dyn(rng: &mut ChaCha8Rng) -> &mut dyn RngCore {
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algo_names_round_trip() {
        for a in [Algo::Dqn, Algo::Ddqn, Algo::Ppo, Algo::DdpgHerDex] {
            assert_eq!(a.to_string().parse::<Algo>().unwrap(), a);
        }
        assert!("a2c".parse::<Algo>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = AlgoConfig::new(Algo::Dqn);
        cfg.validate().unwrap();
        cfg.gamma = 0.0;
        assert!(cfg.validate().unwrap_err().is_config());
        let mut cfg = AlgoConfig::new(Algo::Ppo);
        cfg.ppo.clip_eps = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = AlgoConfig::new(Algo::Dqn);
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn derived_seeds_differ_by_stream_and_index() {
        let a = derive_seed(1, 2, 3);
        assert_eq!(a, derive_seed(1, 2, 3));
        assert_ne!(a, derive_seed(1, 2, 4));
        assert_ne!(a, derive_seed(1, 3, 3));
        assert_ne!(a, derive_seed(2, 2, 3));
    }

    #[test]
    fn sparsity_term_is_lambda_penalty_over_b() {
        let net = Network::mlp(&[3, 5, 2], Activation::Relu, 1).unwrap().with_gates();
        let l_sp = penalty_value(&net, Sparsity::L0);
        assert_eq!(sparsity_loss(&net, Sparsity::L0, 0.5, 4), 0.5 * l_sp / 4.0);
        assert_eq!(sparsity_loss(&net, Sparsity::L0, 0.0, 4), 0.0);
        let w: f64 = net.layers().iter().flat_map(|l| l.weight.data()).map(|w| w.abs()).sum();
        assert_eq!(penalty_value(&net, Sparsity::L1), w);
    }

    #[test]
    fn sparsity_grad_matches_finite_difference() {
        for sp in [Sparsity::L0, Sparsity::L1, Sparsity::L2] {
            let mut net = Network::mlp(&[2, 3, 2], Activation::Tanh, 4).unwrap();
            if sp == Sparsity::L0 {
                net = net.with_gates();
                for l in net.layers_mut() {
                    for (i, v) in l.gate.as_mut().unwrap().log_alpha.iter_mut().enumerate() {
                        *v = -1.0 + 0.3 * i as f64;
                    }
                }
            }
            let mut g = net.zero_grads();
            add_sparsity_grad(&net, &mut g, sp, 0.7, 3);
            let analytic: Vec<Vec<f64>> = g.slices().iter().map(|s| s.to_vec()).collect();
            for (slot, ga) in analytic.iter().enumerate() {
                for i in 0..ga.len() {
                    let orig = net.param_slices()[slot][i];
                    let h = 1e-6;
                    net.param_slices_mut()[slot][i] = orig + h;
                    let p = sparsity_loss(&net, sp, 0.7, 3);
                    net.param_slices_mut()[slot][i] = orig - h;
                    let m = sparsity_loss(&net, sp, 0.7, 3);
                    net.param_slices_mut()[slot][i] = orig;
                    let fd = (p - m) / (2.0 * h);
                    assert!((fd - ga[i]).abs() < 1e-6, "{sp} slot {slot}: {fd} vs {}", ga[i]);
                }
            }
        }
    }

    #[test]
    fn gate_slots_use_their_own_learning_rate() {
        let mut net = Network::mlp(&[2, 2], Activation::Relu, 0).unwrap().with_gates();
        let before = net.clone();
        let mut g = net.zero_grads();
        for s in g.slices_mut() {
            s.iter_mut().for_each(|v| *v = 1.0);
        }
        let mut opt = Optimizer::new(0.01, 0.5, 0.0);
        opt.step(&mut net, &mut g).unwrap();
        let l = &net.layers()[0];
        let l0 = &before.layers()[0];
        assert!((l0.weight.data()[0] - l.weight.data()[0] - 0.01).abs() < 1e-9);
        let la = l.gate.as_ref().unwrap().log_alpha[0];
        let la0 = l0.gate.as_ref().unwrap().log_alpha[0];
        // First Adam step moves by lr·g/(|g| + ε).
        assert!((la0 - la - 0.5 / (1.0 + 1e-8)).abs() < 1e-12, "{la0} {la}");
    }

    #[test]
    fn argmax_prefers_first_maximum() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[5.0]), 0);
    }

    #[test]
    fn deterministic_policy_evaluation_is_reproducible() {
        let net = Network::mlp(&[4, 8, 2], Activation::Relu, 3).unwrap();
        let a = evaluate_policy("cartpole", &net, PolicyHead::Greedy, 3, 9, GateMode::Deterministic).unwrap();
        let b = evaluate_policy("cartpole", &net, PolicyHead::Greedy, 3, 9, GateMode::Deterministic).unwrap();
        assert_eq!(a, b);
        let one = evaluate_policy("cartpole", &net, PolicyHead::Greedy, 1, 9, GateMode::Sampled).unwrap();
        assert_eq!(one.std, 0.0);
        assert!(evaluate_policy("acrobot", &net, PolicyHead::Greedy, 1, 0, GateMode::Sampled).is_err());
    }
}
