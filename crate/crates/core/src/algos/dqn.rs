use std::f64::consts::PI;

use rand::Rng;

use super::{
    add_sparsity_grad, argmax, discrete_spec, episode_sparsity, penalty_value, rng_dyn,
    sparsity_loss, stream_rng, derive_seed, Algo, AlgoConfig, Monitor, Policy, PolicyHead,
    RunRecord, Tracker, TrainRow, STREAM_EXPLORE, STREAM_GATES, STREAM_POLICY_INIT,
    STREAM_REPLAY, STREAM_TRAIN_ENV,
};
use crate::envs::{make_env, Action};
use crate::error::{Error, Result};
use crate::gates::Gating;
use crate::nn::Matrix;
use crate::replay::{priority_of, ReplayBuffer, Transition};

/// Cosine annealing from `eps_max` at step 0 to `eps_min` at `total_steps`.
pub fn epsilon_at(step: usize, total_steps: usize, eps_max: f64, eps_min: f64) -> f64 {
    if total_steps == 0 {
        return eps_min;
    }
    let frac = step.min(total_steps) as f64 / total_steps as f64;
    eps_min + 0.5 * (eps_max - eps_min) * (1.0 + (PI * frac).cos())
}

/// Bootstrapped Q targets. `Algo::Dqn`: r + γ·max Q̄(s′)·(1−d).
/// `Algo::Ddqn`: r + γ·Q̄(s′, argmax Q(s′))·(1−d), which needs `q_next_online`.
pub fn dqn_target(
    rewards: &[f64],
    dones: &[bool],
    q_next_target: &Matrix,
    q_next_online: Option<&Matrix>,
    gamma: f64,
    variant: Algo,
) -> Result<Vec<f64>> {
    let b = rewards.len();
    if dones.len() != b || q_next_target.rows() != b {
        return Err(Error::Shape(format!(
            "{b} rewards, {} dones, {} target rows",
            dones.len(),
            q_next_target.rows()
        )));
    }
    let online = match variant {
        Algo::Dqn => None,
        Algo::Ddqn => {
            let q = q_next_online
                .ok_or_else(|| Error::InvalidInput("double DQN target needs online Q values".into()))?;
            if q.rows() != b || q.cols() != q_next_target.cols() {
                return Err(Error::Shape("online and target Q shapes differ".into()));
            }
            Some(q)
        }
        other => return Err(Error::InvalidInput(format!("{other} has no Q target"))),
    };
    Ok((0..b)
        .map(|i| {
            if dones[i] {
                return rewards[i];
            }
            let next = q_next_target.row(i);
            let bootstrap = match online {
                None => next.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                Some(q) => next[argmax(q.row(i))],
            };
            rewards[i] + gamma * bootstrap
        })
        .collect())
}

/// Mean squared TD error over the taken actions and its gradient w.r.t. Q.
pub fn dqn_loss(q: &Matrix, actions: &[usize], targets: &[f64]) -> Result<(f64, Matrix)> {
    let b = q.rows();
    if actions.len() != b || targets.len() != b || b == 0 {
        return Err(Error::Shape(format!(
            "{b} Q rows, {} actions, {} targets",
            actions.len(),
            targets.len()
        )));
    }
    let mut grad = Matrix::zeros(b, q.cols());
    let mut loss = 0.0;
    for i in 0..b {
        let a = actions[i];
        if a >= q.cols() {
            return Err(Error::Shape(format!("action {a} outside {} outputs", q.cols())));
        }
        let diff = q.get(i, a) - targets[i];
        loss += diff * diff;
        grad.set(i, a, 2.0 * diff / b as f64);
    }
    Ok((loss / b as f64, grad))
}

fn stack(rows: &[&[f64]]) -> Result<Matrix> {
    let cols = rows.first().map_or(0, |r| r.len());
    let mut data = Vec::with_capacity(rows.len() * cols);
    for r in rows {
        data.extend_from_slice(r);
    }
    Matrix::from_vec(rows.len(), cols, data)
}

pub fn train_dqn(env_name: &str, cfg: &AlgoConfig, monitor: &mut dyn Monitor) -> Result<RunRecord> {
    cfg.validate()?;
    if !matches!(cfg.algo, Algo::Dqn | Algo::Ddqn) {
        return Err(Error::Config(format!("train_dqn called with algo {}", cfg.algo)));
    }
    let spec = discrete_spec(env_name)?;
    let n_actions = spec.n_actions().unwrap_or(0);
    let mut env = make_env(env_name)?;
    let mut online = cfg.build_net(spec.obs_dim, n_actions, STREAM_POLICY_INIT)?;
    let mut target = online.clone();
    let mut opt = cfg.optimizer(cfg.lr);
    let double = cfg.algo == Algo::Ddqn;
    let mut buffer = if double {
        ReplayBuffer::prioritized(cfg.dqn.buffer_size)?
    } else {
        ReplayBuffer::new(cfg.dqn.buffer_size)?
    };
    let mut explore = stream_rng(cfg.seed, STREAM_EXPLORE);
    let mut gate_rng = stream_rng(cfg.seed, STREAM_GATES);
    let mut replay_rng = stream_rng(cfg.seed, STREAM_REPLAY);
    let b = cfg.batch_size;
    let mut tracker = Tracker::new(env_name, cfg, monitor);
    let mut total_steps = 0usize;
    let mut updates = 0usize;

    for episode in 1..=cfg.episodes {
        let mut obs = env.reset(derive_seed(cfg.seed, STREAM_TRAIN_ENV, episode as u64));
        let mut ret = 0.0;
        let mut eps;
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        loop {
            eps = epsilon_at(total_steps, cfg.dqn.eps_decay_steps, cfg.dqn.eps_max, cfg.dqn.eps_min);
            let a = if explore.random::<f64>() < eps {
                explore.random_range(0..n_actions)
            } else {
                let x = Matrix::from_vec(1, obs.len(), obs.clone())?;
                let q = online.predict(&x, Gating::Sampled(&mut gate_rng))?;
                argmax(q.row(0))
            };
            let step = env.step(&Action::Discrete(a))?;
            ret += step.reward;
            buffer.push(Transition {
                s: obs,
                a: Action::Discrete(a),
                r: step.reward,
                s_next: step.observation.clone(),
                done: step.terminal(),
            });
            obs = step.observation;
            total_steps += 1;

            if buffer.len() > b && total_steps.is_multiple_of(cfg.dqn.train_every) {
                let idx = if double {
                    buffer.sample_prioritized(b, cfg.dqn.priority_mode, rng_dyn(&mut replay_rng))?
                } else {
                    buffer.sample_uniform_indices(b, rng_dyn(&mut replay_rng))?
                };
                let batch: Vec<&Transition> = idx.iter().map(|&i| buffer.get(i).expect("sampled slot")).collect();
                let s = stack(&batch.iter().map(|t| t.s.as_slice()).collect::<Vec<_>>())?;
                let s2 = stack(&batch.iter().map(|t| t.s_next.as_slice()).collect::<Vec<_>>())?;
                let actions: Vec<usize> = batch
                    .iter()
                    .map(|t| match t.a {
                        Action::Discrete(a) => a,
                        Action::Continuous(_) => 0,
                    })
                    .collect();
                let rewards: Vec<f64> = batch.iter().map(|t| t.r).collect();
                let dones: Vec<bool> = batch.iter().map(|t| t.done).collect();

                let q_next_t = target.predict(&s2, Gating::Sampled(&mut gate_rng))?;
                let q_next_o = if double {
                    Some(online.predict(&s2, Gating::Sampled(&mut gate_rng))?)
                } else {
                    None
                };
                let y = dqn_target(&rewards, &dones, &q_next_t, q_next_o.as_ref(), cfg.gamma, cfg.algo)?;
                let (q, cache) = online.forward(&s, Gating::Sampled(&mut gate_rng))?;
                let (task_loss, dq) = dqn_loss(&q, &actions, &y)?;
                let mut grads = online.backward(&cache, &dq)?;
                add_sparsity_grad(&online, &mut grads, cfg.sparsity, cfg.lambda_c, b);
                loss_sum += task_loss + sparsity_loss(&online, cfg.sparsity, cfg.lambda_c, b);
                loss_n += 1;
                if double {
                    for (i, &slot) in idx.iter().enumerate() {
                        let td = y[i] - q.get(i, actions[i]);
                        buffer.set_priority(slot, priority_of(td, cfg.dqn.priority_alpha))?;
                    }
                }
                opt.step(&mut online, &mut grads)?;
                updates += 1;
                if updates.is_multiple_of(cfg.dqn.target_update) {
                    target.copy_from(&online)?;
                }
            }
            if step.done {
                break;
            }
        }
        let row = TrainRow {
            episode,
            ret,
            epsilon: eps,
            loss: if loss_n > 0 { loss_sum / loss_n as f64 } else { 0.0 },
            l_sp: penalty_value(&online, cfg.sparsity),
            sparsity_pct: episode_sparsity(&online, cfg, episode),
        };
        if tracker.end_episode(row, &online, PolicyHead::Greedy)? {
            break;
        }
    }
    Ok(tracker.finish(Policy {
        net: online,
        head: PolicyHead::Greedy,
    }))
}
