//! Seeded control environments: CartPole-v1, Acrobot-v1 and a goal-conditioned
//! 3-D point reacher.
//!
//! CartPole and Acrobot follow the classic Gym dynamics and constants. A step
//! that hits the time limit reports `done` with `truncated` set, so learners
//! can keep bootstrapping through time-outs.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActionSpec {
    Discrete(usize),
    Continuous { dim: usize, low: f64, high: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub obs_dim: usize,
    pub action_spec: ActionSpec,
    pub max_steps: usize,
    pub target_reward: f64,
    /// Length of the desired/achieved goal for goal-conditioned tasks.
    pub goal_dim: Option<usize>,
}

impl EnvSpec {
    pub fn n_actions(&self) -> Option<usize> {
        match self.action_spec {
            ActionSpec::Discrete(n) => Some(n),
            ActionSpec::Continuous { .. } => None,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self.action_spec {
            ActionSpec::Discrete(n) => n,
            ActionSpec::Continuous { dim, .. } => dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    /// The episode ended on the time limit rather than a terminal state.
    pub truncated: bool,
    pub achieved_goal: Option<Vec<f64>>,
}

impl StepResult {
    /// Ended in a true terminal state (no bootstrapping past it).
    pub fn terminal(&self) -> bool {
        self.done && !self.truncated
    }
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode; identical seeds give identical episodes.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    fn step(&mut self, action: &Action) -> Result<StepResult>;

    /// Desired goal of the current episode (goal-conditioned tasks only).
    fn desired_goal(&self) -> Option<Vec<f64>> {
        None
    }

    /// Achieved goal of the current state (goal-conditioned tasks only).
    fn achieved_goal(&self) -> Option<Vec<f64>> {
        None
    }
}

pub const ENV_NAMES: [&str; 3] = ["cartpole", "acrobot", "pointreach"];

pub fn make_env(name: &str) -> Result<Box<dyn Environment>> {
    match name {
        "cartpole" => Ok(Box::new(CartPole::new())),
        "acrobot" => Ok(Box::new(Acrobot::new())),
        "pointreach" => Ok(Box::new(PointReach::new())),
        other => Err(Error::Config(format!(
            "unknown environment {other:?} (expected one of {ENV_NAMES:?})"
        ))),
    }
}

pub fn env_spec(name: &str) -> Result<EnvSpec> {
    Ok(make_env(name)?.spec().clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Unstarted,
    Running,
    Finished,
}

fn check_running(phase: Phase) -> Result<()> {
    match phase {
        Phase::Running => Ok(()),
        Phase::Unstarted => Err(Error::Protocol("step called before reset".into())),
        Phase::Finished => Err(Error::Protocol("step called on a finished episode".into())),
    }
}

fn discrete(action: &Action, n: usize) -> Result<usize> {
    match action {
        Action::Discrete(a) if *a < n => Ok(*a),
        other => Err(Error::Protocol(format!("action {other:?} outside Discrete({n})"))),
    }
}

// --- CartPole ---------------------------------------------------------------

const GRAVITY: f64 = 9.8;
const CART_MASS: f64 = 1.0;
const POLE_MASS: f64 = 0.1;
const TOTAL_MASS: f64 = CART_MASS + POLE_MASS;
const POLE_HALF_LENGTH: f64 = 0.5;
const POLE_MASS_LENGTH: f64 = POLE_MASS * POLE_HALF_LENGTH;
const FORCE_MAG: f64 = 10.0;
const CARTPOLE_DT: f64 = 0.02;
const THETA_LIMIT: f64 = 12.0 * 2.0 * PI / 360.0;
const X_LIMIT: f64 = 2.4;

pub struct CartPole {
    spec: EnvSpec,
    state: [f64; 4],
    steps: usize,
    phase: Phase,
}

impl Default for CartPole {
    fn default() -> Self {
        Self::new()
    }
}

impl CartPole {
    pub fn new() -> Self {
        CartPole {
            spec: EnvSpec {
                name: "cartpole".into(),
                obs_dim: 4,
                action_spec: ActionSpec::Discrete(2),
                max_steps: 500,
                target_reward: 500.0,
                goal_dim: None,
            },
            state: [0.0; 4],
            steps: 0,
            phase: Phase::Unstarted,
        }
    }

    /// Starts from an explicit state (x, x_dot, theta, theta_dot).
    pub fn reset_to(&mut self, state: [f64; 4]) -> Vec<f64> {
        self.state = state;
        self.steps = 0;
        self.phase = Phase::Running;
        state.to_vec()
    }
}

impl Environment for CartPole {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = std::array::from_fn(|_| rng.random_range(-0.05..=0.05));
        self.reset_to(state)
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        check_running(self.phase)?;
        let a = discrete(action, 2)?;
        let [x, x_dot, theta, theta_dot] = self.state;
        let force = if a == 1 { FORCE_MAG } else { -FORCE_MAG };
        let (sin, cos) = theta.sin_cos();
        let temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin) / TOTAL_MASS;
        let theta_acc = (GRAVITY * sin - cos * temp)
            / (POLE_HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / TOTAL_MASS));
        let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS;
        self.state = [
            x + CARTPOLE_DT * x_dot,
            x_dot + CARTPOLE_DT * x_acc,
            theta + CARTPOLE_DT * theta_dot,
            theta_dot + CARTPOLE_DT * theta_acc,
        ];
        self.steps += 1;
        let failed = self.state[0].abs() > X_LIMIT || self.state[2].abs() > THETA_LIMIT;
        let timeout = !failed && self.steps >= self.spec.max_steps;
        let done = failed || timeout;
        if done {
            self.phase = Phase::Finished;
        }
        Ok(StepResult {
            observation: self.state.to_vec(),
            reward: 1.0,
            done,
            truncated: timeout,
            achieved_goal: None,
        })
    }
}

// --- Acrobot ----------------------------------------------------------------

const ACRO_DT: f64 = 0.2;
const LINK_LENGTH_1: f64 = 1.0;
const LINK_MASS_1: f64 = 1.0;
const LINK_MASS_2: f64 = 1.0;
const LINK_COM_1: f64 = 0.5;
const LINK_COM_2: f64 = 0.5;
const LINK_MOI: f64 = 1.0;
const MAX_VEL_1: f64 = 4.0 * PI;
const MAX_VEL_2: f64 = 9.0 * PI;
const TORQUES: [f64; 3] = [-1.0, 0.0, 1.0];

pub struct Acrobot {
    spec: EnvSpec,
    /// theta1, theta2, dtheta1, dtheta2
    state: [f64; 4],
    steps: usize,
    phase: Phase,
}

impl Default for Acrobot {
    fn default() -> Self {
        Self::new()
    }
}

fn wrap_angle(x: f64) -> f64 {
    let span = 2.0 * PI;
    let mut v = x;
    while v > PI {
        v -= span;
    }
    while v < -PI {
        v += span;
    }
    v
}

/// Time derivative of the two-link state under `torque` on the second joint.
fn acrobot_dsdt(s: [f64; 4], torque: f64) -> [f64; 4] {
    let (m1, m2, l1, lc1, lc2) = (LINK_MASS_1, LINK_MASS_2, LINK_LENGTH_1, LINK_COM_1, LINK_COM_2);
    let (i1, i2) = (LINK_MOI, LINK_MOI);
    let [theta1, theta2, dtheta1, dtheta2] = s;
    let d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * theta2.cos()) + i1 + i2;
    let d2 = m2 * (lc2 * lc2 + l1 * lc2 * theta2.cos()) + i2;
    let phi2 = m2 * lc2 * GRAVITY * (theta1 + theta2 - PI / 2.0).cos();
    let phi1 = -m2 * l1 * lc2 * dtheta2 * dtheta2 * theta2.sin()
        - 2.0 * m2 * l1 * lc2 * dtheta2 * dtheta1 * theta2.sin()
        + (m1 * lc1 + m2 * l1) * GRAVITY * (theta1 - PI / 2.0).cos()
        + phi2;
    let ddtheta2 = (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1 * dtheta1 * theta2.sin() - phi2)
        / (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
    let ddtheta1 = -(d2 * ddtheta2 + phi1) / d1;
    [dtheta1, dtheta2, ddtheta1, ddtheta2]
}

fn rk4_step(s: [f64; 4], torque: f64, dt: f64) -> [f64; 4] {
    let add = |a: [f64; 4], k: [f64; 4], h: f64| std::array::from_fn(|i| a[i] + h * k[i]);
    let k1 = acrobot_dsdt(s, torque);
    let k2 = acrobot_dsdt(add(s, k1, dt / 2.0), torque);
    let k3 = acrobot_dsdt(add(s, k2, dt / 2.0), torque);
    let k4 = acrobot_dsdt(add(s, k3, dt), torque);
    std::array::from_fn(|i| s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

impl Acrobot {
    pub fn new() -> Self {
        Acrobot {
            spec: EnvSpec {
                name: "acrobot".into(),
                obs_dim: 6,
                action_spec: ActionSpec::Discrete(3),
                max_steps: 500,
                target_reward: -100.0,
                goal_dim: None,
            },
            state: [0.0; 4],
            steps: 0,
            phase: Phase::Unstarted,
        }
    }

    pub fn reset_to(&mut self, state: [f64; 4]) -> Vec<f64> {
        self.state = state;
        self.steps = 0;
        self.phase = Phase::Running;
        self.observation()
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    fn observation(&self) -> Vec<f64> {
        let [t1, t2, d1, d2] = self.state;
        vec![t1.cos(), t1.sin(), t2.cos(), t2.sin(), d1, d2]
    }

    fn tip_height(&self) -> f64 {
        -self.state[0].cos() - (self.state[0] + self.state[1]).cos()
    }
}

impl Environment for Acrobot {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = std::array::from_fn(|_| rng.random_range(-0.1..=0.1));
        self.reset_to(state)
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        check_running(self.phase)?;
        let a = discrete(action, 3)?;
        let mut ns = rk4_step(self.state, TORQUES[a], ACRO_DT);
        ns[0] = wrap_angle(ns[0]);
        ns[1] = wrap_angle(ns[1]);
        ns[2] = ns[2].clamp(-MAX_VEL_1, MAX_VEL_1);
        ns[3] = ns[3].clamp(-MAX_VEL_2, MAX_VEL_2);
        self.state = ns;
        self.steps += 1;
        let reached = self.tip_height() > 1.0;
        let timeout = !reached && self.steps >= self.spec.max_steps;
        let done = reached || timeout;
        if done {
            self.phase = Phase::Finished;
        }
        Ok(StepResult {
            observation: self.observation(),
            reward: if reached { 0.0 } else { -1.0 },
            done,
            truncated: timeout,
            achieved_goal: None,
        })
    }
}

// --- PointReach -------------------------------------------------------------

pub const REACH_STEP: f64 = 0.05;
pub const REACH_TOLERANCE: f64 = 0.025;
pub const REACH_HORIZON: usize = 50;
/// Goals are drawn uniformly from `[-REACH_WORKSPACE, REACH_WORKSPACE]^3`.
pub const REACH_WORKSPACE: f64 = 0.3;
const REACH_BOUND: f64 = 1.0;

/// Sparse reach reward: 0 within tolerance of the goal, -1 otherwise.
pub fn reach_reward(achieved: &[f64], desired: &[f64]) -> f64 {
    if distance(achieved, desired) < REACH_TOLERANCE {
        0.0
    } else {
        -1.0
    }
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Proportional controller that saturates at unit velocity per axis.
pub fn scripted_expert(pos: &[f64], goal: &[f64]) -> Vec<f64> {
    pos.iter()
        .zip(goal)
        .map(|(p, g)| ((g - p) / REACH_STEP).clamp(-1.0, 1.0))
        .collect()
}

/// A point in 3-D driven by clipped velocity commands toward a sampled goal.
pub struct PointReach {
    spec: EnvSpec,
    pos: [f64; 3],
    goal: [f64; 3],
    steps: usize,
    phase: Phase,
}

impl Default for PointReach {
    fn default() -> Self {
        Self::new()
    }
}

impl PointReach {
    pub fn new() -> Self {
        PointReach {
            spec: EnvSpec {
                name: "pointreach".into(),
                obs_dim: 3,
                action_spec: ActionSpec::Continuous {
                    dim: 3,
                    low: -1.0,
                    high: 1.0,
                },
                max_steps: REACH_HORIZON,
                target_reward: 0.0,
                goal_dim: Some(3),
            },
            pos: [0.0; 3],
            goal: [0.0; 3],
            steps: 0,
            phase: Phase::Unstarted,
        }
    }

    pub fn reset_to(&mut self, pos: [f64; 3], goal: [f64; 3]) -> Vec<f64> {
        self.pos = pos;
        self.goal = goal;
        self.steps = 0;
        self.phase = Phase::Running;
        pos.to_vec()
    }

    pub fn is_success(&self) -> bool {
        distance(&self.pos, &self.goal) < REACH_TOLERANCE
    }
}

impl Environment for PointReach {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let goal = std::array::from_fn(|_| rng.random_range(-REACH_WORKSPACE..=REACH_WORKSPACE));
        self.reset_to([0.0; 3], goal)
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        check_running(self.phase)?;
        let cmd = match action {
            Action::Continuous(v) if v.len() == 3 && v.iter().all(|x| x.is_finite()) => v,
            other => {
                return Err(Error::Protocol(format!(
                    "pointreach expects a finite 3-D velocity, got {other:?}"
                )))
            }
        };
        for (p, c) in self.pos.iter_mut().zip(cmd) {
            *p = (*p + REACH_STEP * c.clamp(-1.0, 1.0)).clamp(-REACH_BOUND, REACH_BOUND);
        }
        self.steps += 1;
        let reward = reach_reward(&self.pos, &self.goal);
        let success = reward == 0.0;
        let timeout = !success && self.steps >= self.spec.max_steps;
        let done = success || timeout;
        if done {
            self.phase = Phase::Finished;
        }
        Ok(StepResult {
            observation: self.pos.to_vec(),
            reward,
            done,
            truncated: timeout,
            achieved_goal: Some(self.pos.to_vec()),
        })
    }

    fn desired_goal(&self) -> Option<Vec<f64>> {
        Some(self.goal.to_vec())
    }

    fn achieved_goal(&self) -> Option<Vec<f64>> {
        Some(self.pos.to_vec())
    }
}
